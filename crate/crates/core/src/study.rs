//! Convergence studies of the trajectory expansions and the minimum-time probe.
//!
//! Cells (one per `t` or per start sample) run on the rayon pool and are
//! collected by index, so results do not depend on scheduling.

use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::analysis::{field_bracket, lie_bracket};
use crate::error::{Error, Result};
use crate::spectral::{AttainabilityCertificate, Verdict};
use crate::system::{Control, ControlSystem, DerivativeOracle, TargetFunction};
use crate::trajectory::{
    averaged_endpoint, endpoint, one_switch_endpoint, sci, three_switch_bracket_endpoint, OneSwitchExpansion,
    SwitchSchedule, TargetExpansion,
};

/// Expansion residuals with remainder `O(t³)` must fit at least this order.
pub const EXPANSION_ORDER_MIN: f64 = 2.9;
/// The decay-ratio deviation `|ratio − λ_min|` must fit at least this order.
pub const DECAY_ORDER_MIN: f64 = 0.9;
pub const DECAY_LIMIT_TOL: f64 = 1e-3;
pub const EXPONENT_BAND: f64 = 0.1;
pub const MAX_CENSORED_FRACTION: f64 = 0.1;
pub const TIME_CAP: f64 = 1.0;
pub const TIME_TOL: f64 = 1e-7;

/// Sets the size of the global pool used by studies; `0` means one thread per core.
/// Only the first call has an effect.
pub fn configure_threads(threads: usize) {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
}

/// `t₀·2⁻ᵏ` for `k = 0..levels`.
pub fn halving_times(t0: f64, levels: usize) -> Vec<f64> {
    (0..levels).map(|k| t0 * 0.5f64.powi(k as i32)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogLogFit {
    pub order: f64,
    pub constant: f64,
    pub points_used: usize,
}

/// Least-squares fit of `log y = log c + p log x` over points with `y ≥ floor`.
///
/// Fewer than two usable points means the residual sits at roundoff
/// everywhere; that is reported as an infinite order with zero constant.
pub fn fit_power_law(x: &[f64], y: &[f64], floor: f64) -> LogLogFit {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(&a, &b)| a > 0.0 && b >= floor && b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return LogLogFit {
            order: f64::INFINITY,
            constant: 0.0,
            points_used: pts.len(),
        };
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let order = sxy / sxx;
    LogLogFit {
        order,
        constant: (my - order * mx).exp(),
        points_used: pts.len(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceStudy {
    pub t_values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub fitted_order: f64,
    pub fitted_constant: f64,
    /// Residuals below this were treated as roundoff and left out of the fit.
    pub floor: f64,
}

impl ConvergenceStudy {
    pub fn new(t_values: Vec<f64>, residuals: Vec<f64>, scale: f64) -> Result<Self> {
        if t_values.len() < 2 || t_values.len() != residuals.len() {
            return Err(Error::Precondition(
                "a study needs at least two (t, residual) pairs".into(),
            ));
        }
        let floor = 100.0 * f64::EPSILON * scale.max(1.0);
        let fit = fit_power_law(&t_values, &residuals, floor);
        Ok(Self {
            t_values,
            residuals,
            fitted_order: fit.order,
            fitted_constant: fit.constant,
            floor,
        })
    }

    /// True when every residual is at roundoff, i.e. the expansion is exact.
    pub fn is_exact(&self) -> bool {
        self.fitted_order.is_infinite()
    }

    /// `t,residual` rows followed by the fit as comment lines.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,residual")?;
        for (t, r) in self.t_values.iter().zip(&self.residuals) {
            writeln!(w, "{},{}", sci(*t), sci(*r))?;
        }
        writeln!(w, "# fitted_order={}", fmt_fit(self.fitted_order))?;
        writeln!(w, "# fitted_constant={}", fmt_fit(self.fitted_constant))
    }
}

fn fmt_fit(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        sci(v)
    }
}

fn inf_norm_vec(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn cells<F>(t_values: &[f64], f: F) -> Result<Vec<f64>>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    t_values.par_iter().map(|&t| f(t)).collect()
}

fn dist(a: &[f64], b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// One-switch endpoint against its second-order expansion.
pub fn prop1_study(
    sys: &ControlSystem,
    oracle: &DerivativeOracle,
    a1: &Control,
    a2: &Control,
    x0: &[f64],
    t_values: &[f64],
    steps: usize,
) -> Result<ConvergenceStudy> {
    let expansion = OneSwitchExpansion::new(sys, oracle, a1, a2, x0)?;
    let residuals = cells(t_values, |t| {
        let end = one_switch_endpoint(sys, a1, a2, x0, t, steps)?;
        Ok(dist(&end, &expansion.at(t)))
    })?;
    ConvergenceStudy::new(t_values.to_vec(), residuals, inf_norm_vec(x0))
}

/// `u` along a one-switch trajectory against the Hamiltonian expansion.
pub fn prop2_study(
    sys: &ControlSystem,
    tf: &TargetFunction,
    oracle: &DerivativeOracle,
    a1: &Control,
    a2: &Control,
    x0: &[f64],
    t_values: &[f64],
    steps: usize,
) -> Result<ConvergenceStudy> {
    let expansion = TargetExpansion::new(sys, tf, oracle, a1, a2, x0)?;
    let residuals = cells(t_values, |t| {
        let end = one_switch_endpoint(sys, a1, a2, x0, t, steps)?;
        Ok((tf.eval(&end)? - expansion.at(t)).abs())
    })?;
    ConvergenceStudy::new(t_values.to_vec(), residuals, expansion.u0.abs())
}

/// `f ≡ g` specialization: `u(x_{2t}) − u(x₀) − 2∇u·f t − 2H_{f,f}t²`.
pub fn prop2_same_field_study(
    sys: &ControlSystem,
    tf: &TargetFunction,
    oracle: &DerivativeOracle,
    a: &Control,
    x0: &[f64],
    t_values: &[f64],
    steps: usize,
) -> Result<ConvergenceStudy> {
    let grad = oracle.grad_u(tf, x0)?;
    let f = sys.eval_field(x0, a)?;
    let hff = crate::analysis::second_hamiltonian(sys, tf, oracle, a, a, x0)?;
    let u0 = tf.eval(x0)?;
    let slope = grad.dot(&f);
    let residuals = cells(t_values, |t| {
        let end = one_switch_endpoint(sys, a, a, x0, t, steps)?;
        Ok((tf.eval(&end)? - u0 - 2.0 * slope * t - 2.0 * hff * t * t).abs())
    })?;
    ConvergenceStudy::new(t_values.to_vec(), residuals, u0.abs())
}

/// One switch versus the averaged field, corrected by `[f,g]t²/2`.
pub fn bch_study(
    sys: &ControlSystem,
    oracle: &DerivativeOracle,
    a1: &Control,
    a2: &Control,
    x0: &[f64],
    t_values: &[f64],
    steps: usize,
) -> Result<ConvergenceStudy> {
    let bracket = field_bracket(sys, oracle, a1, a2, x0)?;
    let residuals = cells(t_values, |t| {
        let x = one_switch_endpoint(sys, a1, a2, x0, t, steps)?;
        let y = averaged_endpoint(sys, a1, a2, x0, t, steps)?;
        let predicted = DVector::from_column_slice(&y) + &bracket * (t * t / 2.0);
        Ok(dist(&x, &predicted))
    })?;
    ConvergenceStudy::new(t_values.to_vec(), residuals, inf_norm_vec(x0))
}

/// Four-segment schedule against `x₀ + [σᵢ,σⱼ]t²` (zero-based indices).
pub fn bracket3_study(
    sys: &ControlSystem,
    oracle: &DerivativeOracle,
    i: usize,
    j: usize,
    x0: &[f64],
    t_values: &[f64],
    steps: usize,
) -> Result<ConvergenceStudy> {
    let bracket = lie_bracket(sys, oracle, i, j, x0)?;
    let origin = DVector::from_column_slice(x0);
    let residuals = cells(t_values, |t| {
        let end = three_switch_bracket_endpoint(sys, i, j, x0, t, steps)?;
        Ok(dist(&end, &(&origin + &bracket * (t * t))))
    })?;
    ConvergenceStudy::new(t_values.to_vec(), residuals, inf_norm_vec(x0))
}

/// Decay of `u` along the certified one-switch trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayStudy {
    /// `(u(x_{2t}) − u(x̄))/t²` per `t`.
    pub ratios: Vec<f64>,
    pub lambda_min: f64,
    /// Deviations `|ratio − λ_min|` and their fit.
    pub study: ConvergenceStudy,
}

impl DecayStudy {
    /// Ratio at the smallest `t`.
    pub fn limit(&self) -> f64 {
        *self.ratios.last().expect("study has at least two points")
    }

    /// Richardson extrapolation of the last two ratios assuming a linear deviation.
    pub fn extrapolated_limit(&self) -> f64 {
        let n = self.ratios.len();
        let (t1, t2) = (self.study.t_values[n - 2], self.study.t_values[n - 1]);
        let (r1, r2) = (self.ratios[n - 2], self.ratios[n - 1]);
        (r2 * t1 - r1 * t2) / (t1 - t2)
    }

    /// `t,ratio,deviation` rows followed by the limit and the deviation fit.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,ratio,deviation")?;
        for ((t, r), d) in self.study.t_values.iter().zip(&self.ratios).zip(&self.study.residuals) {
            writeln!(w, "{},{},{}", sci(*t), sci(*r), sci(*d))?;
        }
        writeln!(w, "# lambda_min={}", sci(self.lambda_min))?;
        writeln!(w, "# limit={}", sci(self.limit()))?;
        writeln!(w, "# fitted_order={}", fmt_fit(self.study.fitted_order))?;
        writeln!(w, "# fitted_constant={}", fmt_fit(self.study.fitted_constant))
    }
}

/// Ratio `(u(x_{2t}) − u(x̄))/t²` along the certificate's crossing trajectory, which tends to `λ_min(K)`.
pub fn prop3_decay_study(
    sys: &ControlSystem,
    tf: &TargetFunction,
    cert: &AttainabilityCertificate,
    x_bar: &[f64],
    t_values: &[f64],
    steps: usize,
) -> Result<DecayStudy> {
    if cert.kind != Verdict::SecondOrder {
        return Err(Error::Precondition(format!(
            "decay study needs a second-order certificate, got {}",
            cert.kind.as_str()
        )));
    }
    if cert.data.tangency.norm() > cert.diagnostics.tau_petrov {
        return Err(Error::Precondition(
            "fields are not tangent at the analysis point".into(),
        ));
    }
    let (first, second) = cert.switch_order().expect("second-order certificates carry controls");
    decay_study_with(sys, tf, &first, &second, cert.lambda_min, x_bar, t_values, steps)
}

/// Same as [`prop3_decay_study`] with explicit controls, `a1` applied first.
pub fn decay_study_with(
    sys: &ControlSystem,
    tf: &TargetFunction,
    a1: &Control,
    a2: &Control,
    lambda_min: f64,
    x_bar: &[f64],
    t_values: &[f64],
    steps: usize,
) -> Result<DecayStudy> {
    let u0 = tf.eval(x_bar)?;
    let ratios = cells(t_values, |t| {
        let end = one_switch_endpoint(sys, a1, a2, x_bar, t, steps)?;
        Ok((tf.eval(&end)? - u0) / (t * t))
    })?;
    let deviations = ratios.iter().map(|r| (r - lambda_min).abs()).collect();
    let study = ConvergenceStudy::new(t_values.to_vec(), deviations, lambda_min.abs())?;
    Ok(DecayStudy {
        ratios,
        lambda_min,
        study,
    })
}

/// Worst-case time to reach `{u ≤ u(x̄)}` from spheres of radius `δ` around `x̄`.
#[derive(Clone, Debug, PartialEq)]
pub struct MinTimeProbe {
    pub delta_values: Vec<f64>,
    /// Largest reach time among the uncensored samples of each `δ`.
    pub hit_times: Vec<f64>,
    pub censored: Vec<usize>,
    pub samples_per_delta: usize,
    pub fitted_exponent: f64,
    /// `c` in `T ≈ c·δ^p`.
    pub fitted_constant: f64,
    /// `(c/2)²` for a second-order certificate (`L̃/ρ`), `c/2` for first order (`L/ρ`).
    pub l_tilde_rho_estimate: f64,
    pub seed: u64,
}

impl MinTimeProbe {
    pub fn censored_fraction(&self) -> f64 {
        let total = self.samples_per_delta * self.delta_values.len();
        if total == 0 {
            return 0.0;
        }
        self.censored.iter().sum::<usize>() as f64 / total as f64
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "delta,max_time,censored")?;
        for ((d, t), c) in self.delta_values.iter().zip(&self.hit_times).zip(&self.censored) {
            writeln!(w, "{},{},{c}", sci(*d), sci(*t))?;
        }
        writeln!(w, "# seed={}", self.seed)?;
        writeln!(w, "# fitted_exponent={}", fmt_fit(self.fitted_exponent))?;
        writeln!(w, "# fitted_constant={}", fmt_fit(self.fitted_constant))
    }
}

/// Smallest total time `2t` (up to `TIME_TOL`) for which the one-switch
/// trajectory from `x1` ends in the target, or `None` past `TIME_CAP`.
fn reach_time(
    sys: &ControlSystem,
    tf: &TargetFunction,
    a1: &Control,
    a2: &Control,
    x1: &[f64],
    level: f64,
    steps: usize,
) -> Result<Option<f64>> {
    if tf.eval(x1)? <= level {
        return Ok(Some(0.0));
    }
    let inside = |total: f64| -> Result<bool> {
        let sched = SwitchSchedule::one_switch(a1, a2, total / 2.0)?;
        Ok(tf.eval(&endpoint(sys, &sched, x1, steps)?)? <= level)
    };
    // geometric scan for a first hit, then bisection on the bracketing interval
    let mut lo = 0.0;
    let mut hi = TIME_TOL;
    loop {
        if inside(hi)? {
            break;
        }
        if hi >= TIME_CAP {
            return Ok(None);
        }
        lo = hi;
        hi = (hi * 1.25).min(TIME_CAP);
    }
    while hi - lo > TIME_TOL {
        let mid = 0.5 * (lo + hi);
        if inside(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

fn sphere_sample(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn cell_seed(seed: u64, cell: usize) -> u64 {
    seed ^ (cell as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Samples start points on `|x¹ − x̄| = δ` and records the worst reach time
/// along the certificate's trajectory for each `δ`.
pub fn min_time_probe(
    sys: &ControlSystem,
    tf: &TargetFunction,
    cert: &AttainabilityCertificate,
    x_bar: &[f64],
    delta_values: &[f64],
    samples_per_delta: usize,
    seed: u64,
    steps: usize,
) -> Result<MinTimeProbe> {
    let (first, second) = match (cert.kind, cert.switch_order()) {
        (Verdict::Inconclusive, _) | (_, None) => {
            return Err(Error::Precondition(
                "minimum-time probe needs a certificate with controls".into(),
            ))
        }
        (_, Some(pair)) => pair,
    };
    let (a1, a2) = (&first, &second);
    let level = tf.eval(x_bar)?;
    let n = sys.state_dim();

    let per_delta: Vec<(f64, usize)> = delta_values
        .par_iter()
        .enumerate()
        .map(|(cell, &delta)| -> Result<(f64, usize)> {
            if delta == 0.0 {
                let t = reach_time(sys, tf, a1, a2, x_bar, level, steps)?;
                return Ok((t.unwrap_or(0.0), usize::from(t.is_none())));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(seed, cell));
            let starts: Vec<Vec<f64>> = (0..samples_per_delta)
                .map(|_| {
                    let dir = sphere_sample(&mut rng, n);
                    x_bar.iter().zip(dir).map(|(x, d)| x + delta * d).collect()
                })
                .collect();
            let times = starts
                .par_iter()
                .map(|x1| reach_time(sys, tf, a1, a2, x1, level, steps))
                .collect::<Result<Vec<_>>>()?;
            let censored = times.iter().filter(|t| t.is_none()).count();
            let worst = times.iter().flatten().fold(0.0f64, |m, &t| m.max(t));
            Ok((worst, censored))
        })
        .collect::<Result<_>>()?;

    let hit_times: Vec<f64> = per_delta.iter().map(|p| p.0).collect();
    let censored = per_delta.iter().map(|p| p.1).collect();
    let fit = fit_power_law(delta_values, &hit_times, 0.0);
    let l_tilde_rho_estimate = match cert.kind {
        Verdict::SecondOrder => (fit.constant / 2.0).powi(2),
        _ => fit.constant / 2.0,
    };
    Ok(MinTimeProbe {
        delta_values: delta_values.to_vec(),
        hit_times,
        censored,
        samples_per_delta,
        fitted_exponent: fit.order,
        fitted_constant: fit.constant,
        l_tilde_rho_estimate,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_law_fit_recovers_exponent() {
        let x = [1.0, 0.5, 0.25, 0.125];
        let y: Vec<f64> = x.iter().map(|t: &f64| 3.0 * t.powi(3)).collect();
        let fit = fit_power_law(&x, &y, 0.0);
        assert!((fit.order - 3.0).abs() < 1e-12);
        assert!((fit.constant - 3.0).abs() < 1e-12);
    }

    #[test]
    fn roundoff_points_are_dropped() {
        let x = [1.0, 0.5, 0.25];
        let fit = fit_power_law(&x, &[1e-17, 1e-18, 0.0], 1e-14);
        assert!(fit.order.is_infinite());
        let fit = fit_power_law(&x, &[8.0, 1.0, 1e-20], 1e-14);
        assert_eq!(fit.points_used, 2);
        assert!((fit.order - 3.0).abs() < 1e-12);
    }

    #[test]
    fn halving() {
        let t = halving_times(0.1, 9);
        assert_eq!(t.len(), 9);
        assert_eq!(t[8], 0.1 / 256.0);
    }

    #[test]
    fn study_csv_footer() {
        let s = ConvergenceStudy::new(vec![1.0, 0.5], vec![2.0, 0.25], 1.0).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,residual\n"));
        let line = text.lines().find(|l| l.starts_with("# fitted_order=")).unwrap();
        let order: f64 = line["# fitted_order=".len()..].parse().unwrap();
        assert!((order - 3.0).abs() < 1e-12);
        assert!(text.contains("# fitted_constant="));
    }
}
