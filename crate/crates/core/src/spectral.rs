//! Attainability classification and control synthesis.
//!
//! A point is certified first-order when some admissible field is strictly
//! transversal to the level set of `u` (Petrov condition), and second-order
//! when `K(x̄)` has a negative eigenvalue. A minimal eigenvector `(a₁, a₂)`
//! scaled to norm `√2` has unit halves and gives the one-switch controls with
//! the fastest decrease of `u`. Nothing is ever claimed about non-attainability.
//!
//! `K(a₁,a₂)·(a₁,a₂) = H_{f,f} + H_{g,g} + 2H_{f,g}` with `f = σa₁`, `g = σa₂`,
//! which is twice the `t²` coefficient of `u` along the trajectory that
//! follows `g` first and `f` second. [`AttainabilityCertificate::switch_order`]
//! returns the controls in that order.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analysis::{inf_norm, quad_form, SecondOrderData};
use crate::eigen::{eigh, EigenDecomposition};
use crate::error::{Error, Result};
use crate::system::{Control, ControlSystem, DerivativeOracle, TargetFunction};
use crate::trajectory::SwitchSchedule;

/// Base factors of the decision thresholds.
///
/// Effective values: `τ_petrov = petrov·max(1,|∇u|)·max(1,‖σ‖_F)`,
/// `τ_sym = sym·max(1,‖S‖∞)`, `τ_eig = eig`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub petrov: f64,
    pub sym: f64,
    pub eig: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            petrov: 1e-9,
            sym: 1e-9,
            eig: 1e-9,
        }
    }
}

impl Tolerances {
    pub fn with_overrides(mut self, petrov: Option<f64>, sym: Option<f64>, eig: Option<f64>) -> Result<Self> {
        for (name, v) in [("petrov", petrov), ("sym", sym), ("eig", eig)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("tolerance `{name}` must be positive, got {v}")));
                }
            }
        }
        self.petrov = petrov.unwrap_or(self.petrov);
        self.sym = sym.unwrap_or(self.sym);
        self.eig = eig.unwrap_or(self.eig);
        Ok(self)
    }

    pub fn petrov_threshold(&self, gradient: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
        self.petrov * gradient.norm().max(1.0) * sigma.norm().max(1.0)
    }

    pub fn sym_threshold(&self, s: &DMatrix<f64>) -> f64 {
        self.sym * inf_norm(s).max(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    FirstOrder,
    SecondOrder,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::FirstOrder => "first-order",
            Verdict::SecondOrder => "second-order",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// Effective thresholds and the two independent second-order verdicts.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub tau_petrov: f64,
    pub tau_sym: f64,
    pub tau_eig: f64,
    pub symmetry_defect: f64,
    /// `S` non-symmetric or `S*` has a negative eigenvalue.
    pub s_route_certifies: bool,
    /// `λ_min(K) < −τ_eig`.
    pub k_route_certifies: bool,
    /// `h(a₁,a₂)` of the pair built from `S` directly, when that route applies.
    pub s_route_h: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttainabilityCertificate {
    pub kind: Verdict,
    /// `|∇u·σa|` for first order, `−λ_min(K)` for second order, 0 otherwise.
    pub rho: f64,
    /// `(a₁, a₂)`; both equal `a` for a first-order certificate.
    pub controls: Option<(Control, Control)>,
    pub lambda_min: f64,
    pub spectrum: EigenDecomposition,
    pub data: SecondOrderData,
    pub diagnostics: Diagnostics,
}

impl AttainabilityCertificate {
    /// Controls in the order they are applied: `(a₂, a₁)`.
    pub fn switch_order(&self) -> Option<(Control, Control)> {
        self.controls.as_ref().map(|(a1, a2)| (a2.clone(), a1.clone()))
    }

    /// One-switch schedule `(a₂, t), (a₁, t)` along which `u` decreases like `λ_min t²`.
    pub fn crossing_schedule(&self, t: f64) -> Result<Option<SwitchSchedule>> {
        self.switch_order()
            .map(|(first, second)| SwitchSchedule::one_switch(&first, &second, t))
            .transpose()
    }
}

/// Steepest first-order descent control, if the Petrov condition holds.
pub fn petrov_check(
    sys: &ControlSystem,
    tf: &TargetFunction,
    oracle: &DerivativeOracle,
    x: &[f64],
    tol: &Tolerances,
) -> Result<Option<(Control, f64)>> {
    let gradient = oracle.grad_u(tf, x)?;
    if gradient.norm() == 0.0 {
        return Err(Error::ZeroGradient(x.to_vec()));
    }
    let sigma = sys.eval_sigma(x)?;
    let g = sigma.transpose() * &gradient;
    let norm = g.norm();
    if norm > tol.petrov_threshold(&gradient, &sigma) {
        let a = Control::new((-&g / norm).as_slice().to_vec())?;
        Ok(Some((a, norm)))
    } else {
        Ok(None)
    }
}

fn unit_halves(v: &DVector<f64>, m: usize) -> Result<(Control, Control)> {
    let scaled = v * (2f64.sqrt() / v.norm());
    let a1 = scaled.rows(0, m).into_owned();
    let a2 = scaled.rows(m, m).into_owned();
    let (n1, n2) = (a1.norm(), a2.norm());
    if (n1 - 1.0).abs() > 1e-8 || (n2 - 1.0).abs() > 1e-8 {
        return Err(Error::Internal(format!(
            "eigenvector halves have norms {n1} and {n2}, expected 1"
        )));
    }
    Ok((
        Control::new((a1 / n1).as_slice().to_vec())?,
        Control::new((a2 / n2).as_slice().to_vec())?,
    ))
}

/// Controls from a minimal eigenvector of `K`.
pub fn synthesize_from_k(k: &DMatrix<f64>, tol: &Tolerances) -> Result<(Control, Control, f64)> {
    let spectrum = eigh(k)?;
    synthesize_from_spectrum(&spectrum, k.nrows() / 2, tol)
}

fn synthesize_from_spectrum(
    spectrum: &EigenDecomposition,
    m: usize,
    tol: &Tolerances,
) -> Result<(Control, Control, f64)> {
    let lambda = spectrum.min_eigenvalue();
    if lambda >= -tol.eig {
        return Err(Error::Precondition(format!(
            "λ_min(K) = {lambda} is not below −{}",
            tol.eig
        )));
    }
    let (a1, a2) = unit_halves(&spectrum.vector(0), m)?;
    Ok((a1, a2, lambda))
}

/// Controls built from `S` alone: a minimal eigenvector if `S` is symmetric,
/// otherwise `a₁` an eigenvector of `ᵗSS` and `a₂ = −Sa₁/|Sa₁|`.
pub fn synthesize_from_s(s: &DMatrix<f64>, tol: &Tolerances) -> Result<(Control, Control)> {
    let m = s.nrows();
    let (s_sym, _) = crate::analysis::split_s(s)?;
    let defect = inf_norm(&(s - s.transpose()));
    let k = crate::analysis::build_k(&s_sym, s)?;
    let check = |a1: Control, a2: Control| -> Result<(Control, Control)> {
        let h = quad_form(&k, a1.as_vector(), a2.as_vector())?.h;
        if h < 0.0 {
            Ok((a1, a2))
        } else {
            Err(Error::Internal(format!("pair built from S gives h = {h} ≥ 0")))
        }
    };

    if defect <= tol.sym_threshold(s) {
        let e = eigh(&s_sym)?;
        if e.min_eigenvalue() >= -tol.eig {
            return Err(Error::Precondition("S is symmetric and positive semidefinite".into()));
        }
        let v = e.vector(0);
        let a = Control::new((&v / v.norm()).as_slice().to_vec())?;
        return check(a.clone(), a);
    }

    let sts = s.transpose() * s;
    let e = eigh(&sts)?;
    for idx in (0..m).rev() {
        if e.eigenvalues[idx] <= tol.eig {
            break;
        }
        let a1 = e.vector(idx);
        let sa1 = s * &a1;
        let lambda = sa1.norm();
        let a2 = -sa1 / lambda;
        if (&a1 + &a2).norm() > 1e-8 {
            let a1 = Control::new((&a1 / a1.norm()).as_slice().to_vec())?;
            let a2 = Control::new((&a2 / a2.norm()).as_slice().to_vec())?;
            return check(a1, a2);
        }
    }
    Err(Error::Internal(
        "every eigenvector of ᵗSS hits the critical case a₁ = −a₂ for a non-symmetric S".into(),
    ))
}

/// Full first/second-order classification at `x`.
pub fn classify(
    sys: &ControlSystem,
    tf: &TargetFunction,
    oracle: &DerivativeOracle,
    x: &[f64],
    tol: &Tolerances,
) -> Result<AttainabilityCertificate> {
    let petrov = petrov_check(sys, tf, oracle, x, tol)?;
    let data = SecondOrderData::at(sys, tf, oracle, x)?;
    let spectrum = eigh(&data.k)?;
    let lambda_min = spectrum.min_eigenvalue();
    let m = sys.control_dim();
    let sigma = sys.eval_sigma(x)?;

    let tau_sym = tol.sym_threshold(&data.s);
    let symmetry_defect = data.symmetry_defect();
    let s_sym_min = eigh(&data.s_sym)?.min_eigenvalue();
    let s_route_certifies = symmetry_defect > tau_sym || s_sym_min < -tol.eig;
    let k_route_certifies = lambda_min < -tol.eig;

    let mut diagnostics = Diagnostics {
        tau_petrov: tol.petrov_threshold(&data.gradient, &sigma),
        tau_sym,
        tau_eig: tol.eig,
        symmetry_defect,
        s_route_certifies,
        k_route_certifies,
        s_route_h: None,
    };

    if let Some((a, rho)) = petrov {
        return Ok(AttainabilityCertificate {
            kind: Verdict::FirstOrder,
            rho,
            controls: Some((a.clone(), a)),
            lambda_min,
            spectrum,
            data,
            diagnostics,
        });
    }

    // Both routes must tell the same story up to their tolerances.
    let k_scale = 1e-9 * inf_norm(&data.k).max(1.0);
    if s_route_certifies {
        match synthesize_from_s(&data.s, tol) {
            Ok((a1, a2)) => {
                let h = quad_form(&data.k, a1.as_vector(), a2.as_vector())?.h;
                diagnostics.s_route_h = Some(h);
                if lambda_min > h / 2.0 + k_scale {
                    return Err(Error::Internal(format!(
                        "S-route pair reaches h = {h} but λ_min(K) = {lambda_min}"
                    )));
                }
            }
            Err(e) if k_route_certifies => return Err(e),
            Err(_) => {}
        }
    } else if k_route_certifies {
        let band = 2.0 * tol.eig + 2.0 * data.s_skew.norm();
        if lambda_min < -band {
            return Err(Error::Internal(format!(
                "λ_min(K) = {lambda_min} but S is symmetric with λ_min(S*) = {s_sym_min}"
            )));
        }
    }

    if k_route_certifies {
        let (a1, a2, lambda) = synthesize_from_spectrum(&spectrum, m, tol)?;
        Ok(AttainabilityCertificate {
            kind: Verdict::SecondOrder,
            rho: -lambda,
            controls: Some((a1, a2)),
            lambda_min,
            spectrum,
            data,
            diagnostics,
        })
    } else {
        Ok(AttainabilityCertificate {
            kind: Verdict::Inconclusive,
            rho: 0.0,
            controls: None,
            lambda_min,
            spectrum,
            data,
            diagnostics,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::config::parse_config;

    fn certify(name: &str, x: Option<&[f64]>) -> AttainabilityCertificate {
        let p = catalog::lookup(name).unwrap();
        let x = x.map(<[f64]>::to_vec).unwrap_or_else(|| p.point.clone().unwrap());
        classify(
            &p.system,
            &p.target,
            &DerivativeOracle::Dual,
            &x,
            &Tolerances::default(),
        )
        .unwrap()
    }

    #[test]
    fn crossing_schedule_applies_a2_first() {
        let p = catalog::lookup("heisenberg").unwrap();
        let x = p.point.clone().unwrap();
        let c = certify("heisenberg", None);
        let (a1, a2) = c.controls.clone().unwrap();
        let sched = c.crossing_schedule(1e-3).unwrap().unwrap();
        assert_eq!(sched.segments()[0].0, a2);
        assert_eq!(sched.segments()[1].0, a1);
        // Heisenberg one-switch endpoints are exact quadratics, so the ratio is λ_min up to O(t²)
        let end = crate::trajectory::endpoint(&p.system, &sched, &x, 50).unwrap();
        let ratio = (p.target.eval(&end).unwrap() - p.target.eval(&x).unwrap()) / 1e-6;
        assert!((ratio - c.lambda_min).abs() < 1e-5, "{ratio}");
        let wrong = crate::trajectory::one_switch_endpoint(&p.system, &a1, &a2, &x, 1e-3, 50).unwrap();
        let ratio = (p.target.eval(&wrong).unwrap() - p.target.eval(&x).unwrap()) / 1e-6;
        assert!(ratio > 0.0);
    }

    #[test]
    fn rotation_is_second_order() {
        let c = certify("rotation", None);
        assert_eq!(c.kind, Verdict::SecondOrder);
        assert!((c.lambda_min + 2.0).abs() < 1e-14);
        let (a1, a2) = c.controls.unwrap();
        assert!((a1.as_slice()[0] - 1.0).abs() < 1e-14);
        assert!((a2.as_slice()[0] - 1.0).abs() < 1e-14);
        assert!((c.rho - 2.0).abs() < 1e-14);
    }

    #[test]
    fn dubins_is_second_order_via_nonsymmetric_s() {
        let c = certify("dubins", None);
        assert_eq!(c.kind, Verdict::SecondOrder);
        assert!(c.diagnostics.s_route_certifies);
        assert!(c.diagnostics.symmetry_defect > 0.5);
        assert!(c.diagnostics.s_route_h.unwrap() < 0.0);
    }

    #[test]
    fn constant_field_first_and_second_order() {
        let c = certify("constant-field", Some(&[0.0, 1.0]));
        assert_eq!(c.kind, Verdict::FirstOrder);
        assert_eq!(c.rho, 1.0);
        assert_eq!(c.controls.unwrap().0.as_slice(), &[1.0]);
        let c = certify("constant-field", Some(&[1.0, 0.0]));
        assert_eq!(c.kind, Verdict::SecondOrder);
        assert!((c.lambda_min + 2.0).abs() < 1e-14);
    }

    #[test]
    fn petrov_on_heisenberg_fails() {
        let p = catalog::lookup("heisenberg").unwrap();
        let r = petrov_check(
            &p.system,
            &p.target,
            &DerivativeOracle::Dual,
            &[0.0, 0.0, 1.0],
            &Tolerances::default(),
        )
        .unwrap();
        assert!(r.is_none());
    }

    #[test]
    fn zero_gradient_is_an_error() {
        let p = catalog::lookup("heisenberg").unwrap();
        let r = classify(
            &p.system,
            &p.target,
            &DerivativeOracle::Dual,
            &[0.0, 0.0, 0.0],
            &Tolerances::default(),
        );
        assert!(matches!(r, Err(Error::ZeroGradient(_))));
    }

    #[test]
    fn transversal_field_is_first_order() {
        let text = r#"
[system]
name = "lift"
state = ["x", "y"]
sigma = [["0"], ["1"]]
[target]
u = "y"
"#;
        let p = parse_config(text).unwrap();
        let c = classify(
            &p.system,
            &p.target,
            &DerivativeOracle::Dual,
            &[0.0, 0.0],
            &Tolerances::default(),
        )
        .unwrap();
        assert_eq!(c.kind, Verdict::FirstOrder);
        assert_eq!(c.controls.unwrap().0.as_slice(), &[-1.0]);
    }

    #[test]
    fn convex_target_with_tangent_constant_field_is_inconclusive() {
        let text = r#"
[system]
name = "slide"
state = ["x", "y"]
sigma = [["1", "0"], ["0", "0"]]
[target]
u = "y + (x^2 + y^2)/2 + x*y"
"#;
        let p = parse_config(text).unwrap();
        let c = classify(
            &p.system,
            &p.target,
            &DerivativeOracle::Dual,
            &[0.0, 0.0],
            &Tolerances::default(),
        )
        .unwrap();
        assert_eq!(c.kind, Verdict::Inconclusive);
        assert!(c.controls.is_none());
        // brute force: h ≥ 0 over a grid of the ball
        let k = &c.data.k;
        let mut min_h = f64::INFINITY;
        let steps = 20;
        let grid: Vec<f64> = (0..=steps).map(|i| -1.0 + 2.0 * i as f64 / steps as f64).collect();
        for &p1 in &grid {
            for &q1 in &grid {
                for &p2 in &grid {
                    for &q2 in &grid {
                        if p1 * p1 + q1 * q1 > 1.0 || p2 * p2 + q2 * q2 > 1.0 {
                            continue;
                        }
                        let a1 = DVector::from_vec(vec![p1, q1]);
                        let a2 = DVector::from_vec(vec![p2, q2]);
                        min_h = min_h.min(quad_form(k, &a1, &a2).unwrap().h);
                    }
                }
            }
        }
        assert!(min_h >= -1e-12);
    }

    #[test]
    fn synthesize_from_k_cases() {
        let tol = Tolerances::default();
        let rot = DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, -1.0, -1.0]);
        let (a1, a2, l) = synthesize_from_k(&rot, &tol).unwrap();
        assert!((a1.as_slice()[0] - 1.0).abs() < 1e-14 && (a2.as_slice()[0] - 1.0).abs() < 1e-14);
        assert!((l + 2.0).abs() < 1e-14);
        assert!((quad_form(&rot, a1.as_vector(), a2.as_vector()).unwrap().h + 4.0).abs() < 1e-14);

        let s = -DMatrix::<f64>::identity(2, 2);
        let k = crate::analysis::build_k(&s, &s).unwrap();
        let (a1, a2, l) = synthesize_from_k(&k, &tol).unwrap();
        assert!((l + 2.0).abs() < 1e-14);
        assert_eq!(a1, a2);
        assert!((a1.as_slice()[0] - 1.0).abs() < 1e-14);

        assert!(matches!(
            synthesize_from_k(&DMatrix::identity(2, 2), &tol),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn synthesize_from_s_cases() {
        let tol = Tolerances::default();
        let neg = -DMatrix::<f64>::identity(2, 2);
        let (a1, a2) = synthesize_from_s(&neg, &tol).unwrap();
        assert_eq!(a1.as_slice(), &[1.0, 0.0]);
        assert_eq!(a1, a2);

        for s in [
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]),
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]),
        ] {
            let (a1, a2) = synthesize_from_s(&s, &tol).unwrap();
            let (sym, _) = crate::analysis::split_s(&s).unwrap();
            let k = crate::analysis::build_k(&sym, &s).unwrap();
            let h = quad_form(&k, a1.as_vector(), a2.as_vector()).unwrap().h;
            assert!(h < 0.0);
            // h = −2λ(1 + a₁·a₂) with λ = |Sa₁|
            let lambda = (&s * a1.as_vector()).norm();
            let expected = -2.0 * lambda * (1.0 + a1.as_vector().dot(a2.as_vector()));
            assert!((h - expected).abs() < 1e-12);
        }

        assert!(matches!(
            synthesize_from_s(&DMatrix::identity(2, 2), &tol),
            Err(Error::Precondition(_))
        ));
    }
}
