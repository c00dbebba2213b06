//! Fixed-step RK4 integration of switched trajectories and the expansions
//! they are checked against.

use std::io::Write;

use nalgebra::DVector;

use crate::analysis::{field_bracket, lie_bracket, second_hamiltonian};
use crate::error::{Error, Result};
use crate::system::{Control, ControlSystem, DerivativeOracle, TargetFunction};

pub const DEFAULT_STEPS_PER_SEGMENT: usize = 200;

/// Piecewise-constant control: each segment holds a control for a duration.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchSchedule {
    segments: Vec<(Control, f64)>,
}

impl SwitchSchedule {
    pub fn new(segments: Vec<(Control, f64)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Precondition("schedule has no segments".into()));
        }
        if let Some((_, d)) = segments.iter().find(|(_, d)| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::Precondition(format!("segment duration {d} is not positive")));
        }
        Ok(Self { segments })
    }

    /// `(a₁, t), (a₂, t)`.
    pub fn one_switch(a1: &Control, a2: &Control, t: f64) -> Result<Self> {
        Self::new(vec![(a1.clone(), t), (a2.clone(), t)])
    }

    /// `(eᵢ,t), (eⱼ,t), (−eᵢ,t), (−eⱼ,t)`; indices zero-based.
    pub fn bracket(m: usize, i: usize, j: usize, t: f64) -> Result<Self> {
        let ei = Control::basis(m, i);
        let ej = Control::basis(m, j);
        Self::new(vec![(ei.clone(), t), (ej.clone(), t), (-&ei, t), (-&ej, t)])
    }

    /// The schedule run backwards with negated controls.
    pub fn reversed(&self) -> Self {
        Self {
            segments: self.segments.iter().rev().map(|(a, d)| (-a, *d)).collect(),
        }
    }

    pub fn segments(&self) -> &[(Control, f64)] {
        &self.segments
    }

    pub fn total_time(&self) -> f64 {
        self.segments.iter().map(|(_, d)| d).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `u` at each grid point; empty when no target was supplied.
    pub u_values: Vec<f64>,
    pub schedule: SwitchSchedule,
    pub steps_per_segment: usize,
}

impl TrajectoryRecord {
    pub fn endpoint(&self) -> &[f64] {
        self.states.last().expect("record always holds x₀")
    }

    /// `t,x1..xn,u` with 17 significant digits, LF line endings.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.states[0].len();
        let mut header = String::from("t");
        for i in 1..=n {
            header.push_str(&format!(",x{i}"));
        }
        if !self.u_values.is_empty() {
            header.push_str(",u");
        }
        writeln!(w, "{header}")?;
        for (k, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            let mut line = sci(*t);
            for v in x {
                line.push(',');
                line.push_str(&sci(*v));
            }
            if let Some(u) = self.u_values.get(k) {
                line.push(',');
                line.push_str(&sci(*u));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// 17 significant digits in scientific notation.
pub fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

struct Rk4<'a> {
    sys: &'a ControlSystem,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl<'a> Rk4<'a> {
    fn new(sys: &'a ControlSystem) -> Self {
        let n = sys.state_dim();
        Self {
            sys,
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            tmp: vec![0.0; n],
        }
    }

    fn step(&mut self, x: &mut [f64], a: &[f64], h: f64) -> Result<()> {
        let n = x.len();
        let [k1, k2, k3, k4] = &mut self.k;
        self.sys.field_into(x, a, k1)?;
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        self.sys.field_into(&self.tmp, a, k2)?;
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        self.sys.field_into(&self.tmp, a, k3)?;
        for i in 0..n {
            self.tmp[i] = x[i] + h * k3[i];
        }
        self.sys.field_into(&self.tmp, a, k4)?;
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(())
    }
}

fn run(
    sys: &ControlSystem,
    schedule: &SwitchSchedule,
    x0: &[f64],
    steps: usize,
    mut visit: impl FnMut(f64, &[f64]) -> Result<()>,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::Precondition("steps_per_segment must be at least 1".into()));
    }
    if x0.len() != sys.state_dim() {
        return Err(Error::Dimension(format!(
            "start point has {} coordinates, expected {}",
            x0.len(),
            sys.state_dim()
        )));
    }
    let mut rk = Rk4::new(sys);
    let mut x = x0.to_vec();
    let mut t0 = 0.0;
    visit(0.0, &x)?;
    for (a, duration) in schedule.segments() {
        sys.check_control(a)?;
        let h = duration / steps as f64;
        for s in 1..=steps {
            rk.step(&mut x, a.as_slice(), h)?;
            let t = if s == steps { t0 + duration } else { t0 + h * s as f64 };
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::BlowUp { time: t });
            }
            visit(t, &x)?;
        }
        t0 += duration;
    }
    Ok(x)
}

/// Integrates `ẋ = σ(x)a(t)` along `schedule`, recording every grid point.
pub fn integrate(
    sys: &ControlSystem,
    schedule: &SwitchSchedule,
    x0: &[f64],
    steps_per_segment: usize,
    target: Option<&TargetFunction>,
) -> Result<TrajectoryRecord> {
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut u_values = Vec::new();
    run(sys, schedule, x0, steps_per_segment, |t, x| {
        times.push(t);
        states.push(x.to_vec());
        if let Some(tf) = target {
            u_values.push(tf.eval(x)?);
        }
        Ok(())
    })?;
    Ok(TrajectoryRecord {
        times,
        states,
        u_values,
        schedule: schedule.clone(),
        steps_per_segment,
    })
}

/// Final state only.
pub fn endpoint(sys: &ControlSystem, schedule: &SwitchSchedule, x0: &[f64], steps: usize) -> Result<Vec<f64>> {
    run(sys, schedule, x0, steps, |_, _| Ok(()))
}

/// `x_{2t}` of the one-switch trajectory `(a₁,t), (a₂,t)`.
pub fn one_switch_endpoint(
    sys: &ControlSystem,
    a1: &Control,
    a2: &Control,
    x0: &[f64],
    t: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    endpoint(sys, &SwitchSchedule::one_switch(a1, a2, t)?, x0, steps)
}

/// `y_{2t}` of the averaged field `σ(a₁+a₂)/2` over `[0, 2t]`.
pub fn averaged_endpoint(
    sys: &ControlSystem,
    a1: &Control,
    a2: &Control,
    x0: &[f64],
    t: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let mid = a1.midpoint(a2);
    endpoint(sys, &SwitchSchedule::new(vec![(mid, 2.0 * t)])?, x0, steps)
}

/// Endpoint of the four-segment schedule realizing `[σᵢ,σⱼ] t²`.
pub fn three_switch_bracket_endpoint(
    sys: &ControlSystem,
    i: usize,
    j: usize,
    x0: &[f64],
    t: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let m = sys.control_dim();
    if i >= m || j >= m {
        return Err(Error::Dimension(format!(
            "field indices {} and {} exceed m = {m}",
            i + 1,
            j + 1
        )));
    }
    endpoint(sys, &SwitchSchedule::bracket(m, i, j, t)?, x0, steps)
}

fn dist(a: &[f64], b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Second-order prediction of the one-switch endpoint, evaluated at `t`.
pub struct OneSwitchExpansion {
    x0: DVector<f64>,
    first: DVector<f64>,
    second: DVector<f64>,
}

impl OneSwitchExpansion {
    /// `x₀ + (f+g)t + [D(f+g)(f+g) + [f,g]] t²/2` at `x₀`.
    pub fn new(sys: &ControlSystem, oracle: &DerivativeOracle, a1: &Control, a2: &Control, x0: &[f64]) -> Result<Self> {
        let f = sys.eval_field(x0, a1)?;
        let g = sys.eval_field(x0, a2)?;
        let sum = &f + &g;
        let dsum = oracle.jac_field(sys, a1, x0)? + oracle.jac_field(sys, a2, x0)?;
        let bracket = field_bracket(sys, oracle, a1, a2, x0)?;
        Ok(Self {
            x0: DVector::from_column_slice(x0),
            first: sum.clone(),
            second: dsum * sum + bracket,
        })
    }

    pub fn at(&self, t: f64) -> DVector<f64> {
        &self.x0 + &self.first * t + &self.second * (t * t / 2.0)
    }
}

/// `‖x_{2t} − x₀ − (f+g)t − [D(f+g)(f+g) + [f,g]]t²/2‖₂`.
pub fn prop1_residual(
    sys: &ControlSystem,
    oracle: &DerivativeOracle,
    a1: &Control,
    a2: &Control,
    x0: &[f64],
    t: f64,
    steps: usize,
) -> Result<f64> {
    let expansion = OneSwitchExpansion::new(sys, oracle, a1, a2, x0)?;
    let end = one_switch_endpoint(sys, a1, a2, x0, t, steps)?;
    Ok(dist(&end, &expansion.at(t)))
}

/// Coefficients of the second-order expansion of `u` along a one-switch trajectory.
pub struct TargetExpansion {
    pub u0: f64,
    /// `∇u·(f+g)(x₀)`.
    pub first: f64,
    /// `H_{f,f} + H_{g,g} + 2H_{g,f}` at `x₀`.
    pub second: f64,
}

impl TargetExpansion {
    pub fn new(
        sys: &ControlSystem,
        tf: &TargetFunction,
        oracle: &DerivativeOracle,
        a1: &Control,
        a2: &Control,
        x0: &[f64],
    ) -> Result<Self> {
        let grad = oracle.grad_u(tf, x0)?;
        let f = sys.eval_field(x0, a1)?;
        let g = sys.eval_field(x0, a2)?;
        let h = |p: &Control, q: &Control| second_hamiltonian(sys, tf, oracle, p, q, x0);
        Ok(Self {
            u0: tf.eval(x0)?,
            first: grad.dot(&(f + g)),
            second: h(a1, a1)? + h(a2, a2)? + 2.0 * h(a2, a1)?,
        })
    }

    pub fn at(&self, t: f64) -> f64 {
        self.u0 + self.first * t + self.second * t * t / 2.0
    }
}

/// `|u(x_{2t}) − u(x₀) − ∇u·(f+g)t − (H_{f,f}+H_{g,g}+2H_{g,f})t²/2|`.
pub fn prop2_residual(
    sys: &ControlSystem,
    tf: &TargetFunction,
    oracle: &DerivativeOracle,
    a1: &Control,
    a2: &Control,
    x0: &[f64],
    t: f64,
    steps: usize,
) -> Result<f64> {
    let expansion = TargetExpansion::new(sys, tf, oracle, a1, a2, x0)?;
    let end = one_switch_endpoint(sys, a1, a2, x0, t, steps)?;
    Ok((tf.eval(&end)? - expansion.at(t)).abs())
}

/// `f ≡ g` form: `|u(x_{2t}) − u(x₀) − 2∇u·f t − 2H_{f,f}t²|`.
pub fn prop2_same_field_residual(
    sys: &ControlSystem,
    tf: &TargetFunction,
    oracle: &DerivativeOracle,
    a: &Control,
    x0: &[f64],
    t: f64,
    steps: usize,
) -> Result<f64> {
    let grad = oracle.grad_u(tf, x0)?;
    let f = sys.eval_field(x0, a)?;
    let hff = second_hamiltonian(sys, tf, oracle, a, a, x0)?;
    let end = one_switch_endpoint(sys, a, a, x0, t, steps)?;
    let predicted = tf.eval(x0)? + 2.0 * grad.dot(&f) * t + 2.0 * hff * t * t;
    Ok((tf.eval(&end)? - predicted).abs())
}

/// `‖x_{2t} − y_{2t} − [f,g](x₀)t²/2‖₂`: one switch versus the averaged field.
pub fn bch_gap(
    sys: &ControlSystem,
    oracle: &DerivativeOracle,
    a1: &Control,
    a2: &Control,
    x0: &[f64],
    t: f64,
    steps: usize,
) -> Result<f64> {
    let bracket = field_bracket(sys, oracle, a1, a2, x0)?;
    let x = one_switch_endpoint(sys, a1, a2, x0, t, steps)?;
    let y = averaged_endpoint(sys, a1, a2, x0, t, steps)?;
    let predicted = DVector::from_column_slice(&y) + bracket * (t * t / 2.0);
    Ok(dist(&x, &predicted))
}

/// `‖x_{4t} − x₀ − [σᵢ,σⱼ](x₀)t²‖₂`.
pub fn bracket3_residual(
    sys: &ControlSystem,
    oracle: &DerivativeOracle,
    i: usize,
    j: usize,
    x0: &[f64],
    t: f64,
    steps: usize,
) -> Result<f64> {
    let bracket = lie_bracket(sys, oracle, i, j, x0)?;
    let end = three_switch_bracket_endpoint(sys, i, j, x0, t, steps)?;
    let predicted = DVector::from_column_slice(x0) + bracket * (t * t);
    Ok(dist(&end, &predicted))
}
