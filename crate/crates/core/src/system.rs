//! Symmetric control systems `ẋ = σ(x) a`, target functions, and derivative oracles.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expr::real::{Dual, HyperDual, Real};
use crate::expr::Expr;

/// Controls are accepted up to this much outside the unit ball, then renormalized.
pub const CONTROL_BALL_TOL: f64 = 1e-12;

/// A symmetric control system with `n` states and `m` vector fields.
///
/// `sigma[i][j]` is the i-th component of the field `σⱼ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSystem {
    pub name: String,
    pub state_vars: Vec<String>,
    pub sigma: Vec<Vec<Expr>>,
}

impl ControlSystem {
    pub fn new(name: impl Into<String>, state_vars: Vec<String>, sigma: Vec<Vec<Expr>>) -> Result<Self> {
        let n = state_vars.len();
        if n == 0 {
            return Err(Error::Dimension("state list is empty".into()));
        }
        if sigma.len() != n {
            return Err(Error::Dimension(format!(
                "sigma has {} rows but the state has {n} variables",
                sigma.len()
            )));
        }
        let m = sigma[0].len();
        if m == 0 {
            return Err(Error::Dimension("sigma has no columns".into()));
        }
        if let Some((i, row)) = sigma.iter().enumerate().find(|(_, r)| r.len() != m) {
            return Err(Error::Dimension(format!(
                "sigma row {} has {} entries, expected {m}",
                i + 1,
                row.len()
            )));
        }
        let bad_var = sigma.iter().flatten().filter_map(Expr::max_var_index).any(|k| k >= n);
        if bad_var {
            return Err(Error::Dimension(
                "sigma references a variable index past the state".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            state_vars,
            sigma,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_vars.len()
    }

    pub fn control_dim(&self) -> usize {
        self.sigma[0].len()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::Dimension(format!(
                "point has {} coordinates, system `{}` has {} states",
                x.len(),
                self.name,
                self.state_dim()
            )));
        }
        Ok(())
    }

    fn eval_entries<T: Real>(&self, x: &[T], at: &[f64]) -> Result<Vec<Vec<T>>> {
        self.sigma
            .iter()
            .map(|row| {
                row.iter()
                    .map(|e| e.eval(x).map_err(|source| domain(at, source)))
                    .collect()
            })
            .collect()
    }

    /// `σ(x)` as an `n×m` matrix.
    pub fn eval_sigma(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        let rows = self.eval_entries(x, x)?;
        Ok(DMatrix::from_fn(self.state_dim(), self.control_dim(), |i, j| {
            rows[i][j]
        }))
    }

    /// The admissible field `σ(x) a`.
    pub fn eval_field(&self, x: &[f64], a: &Control) -> Result<DVector<f64>> {
        self.check_control(a)?;
        Ok(self.eval_sigma(x)? * a.as_vector())
    }

    /// Writes `σ(x) a` into `out` without allocating; skips zero control components.
    pub fn field_into(&self, x: &[f64], a: &[f64], out: &mut [f64]) -> Result<()> {
        for (i, row) in self.sigma.iter().enumerate() {
            let mut acc = 0.0;
            for (e, &aj) in row.iter().zip(a) {
                if aj != 0.0 {
                    acc += e.eval(x).map_err(|source| domain(x, source))? * aj;
                }
            }
            out[i] = acc;
        }
        Ok(())
    }

    pub fn check_control(&self, a: &Control) -> Result<()> {
        if a.dim() != self.control_dim() {
            return Err(Error::Dimension(format!(
                "control has {} components, system `{}` has {} fields",
                a.dim(),
                self.name,
                self.control_dim()
            )));
        }
        Ok(())
    }
}

/// Scalar level function `u`; the target is `{u ≤ u(x̄)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetFunction {
    pub u: Expr,
    /// `u(x̄)` once an analysis point has been fixed.
    pub reference_level: Option<f64>,
}

impl TargetFunction {
    pub fn new(u: Expr) -> Self {
        Self {
            u,
            reference_level: None,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.u.eval(x).map_err(|source| domain(x, source))
    }

    /// Fixes the reference level at `x̄`.
    pub fn anchored_at(mut self, x_bar: &[f64]) -> Result<Self> {
        self.reference_level = Some(self.eval(x_bar)?);
        Ok(self)
    }
}

fn domain(x: &[f64], source: crate::expr::DomainError) -> Error {
    Error::Domain {
        point: x.to_vec(),
        source,
    }
}

/// A control value in the closed unit ball of `ℝᵐ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Control(DVector<f64>);

impl Control {
    /// Validates `|a| ≤ 1 + 1e-12` and renormalizes when `|a| > 1`.
    pub fn new(a: Vec<f64>) -> Result<Self> {
        let v = DVector::from_vec(a);
        let norm = v.norm();
        if !norm.is_finite() || norm > 1.0 + CONTROL_BALL_TOL {
            return Err(Error::ControlOutOfBall(v.as_slice().to_vec()));
        }
        if norm > 1.0 {
            Ok(Self(v / norm))
        } else {
            Ok(Self(v))
        }
    }

    pub fn zero(m: usize) -> Self {
        Self(DVector::zeros(m))
    }

    /// The canonical basis vector `e_i` (zero-based index).
    pub fn basis(m: usize, i: usize) -> Self {
        let mut v = DVector::zeros(m);
        v[i] = 1.0;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new((&self.0 * s).as_slice().to_vec())
    }

    /// `(a + b) / 2`, admissible by convexity of the ball.
    pub fn midpoint(&self, other: &Control) -> Self {
        Self((&self.0 + &other.0) * 0.5)
    }
}

impl std::ops::Neg for &Control {
    type Output = Control;
    fn neg(self) -> Control {
        Control(-&self.0)
    }
}

/// How first and second derivatives of expressions are obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum DerivativeOracle {
    /// Nested forward-mode dual numbers; exact up to roundoff.
    #[default]
    Dual,
    /// Central differences with steps `h1·scale` (first order) and
    /// `h2·scale` (second order), `scale = max(1, |x|∞)`.
    CentralDifference { h1: f64, h2: f64 },
}

impl DerivativeOracle {
    pub fn central_difference() -> Self {
        DerivativeOracle::CentralDifference { h1: 1e-6, h2: 1e-4 }
    }

    fn steps(&self, x: &[f64]) -> (f64, f64) {
        let scale = x.iter().fold(1.0f64, |s, v| s.max(v.abs()));
        match *self {
            DerivativeOracle::Dual => (0.0, 0.0),
            DerivativeOracle::CentralDifference { h1, h2 } => (h1 * scale, h2 * scale),
        }
    }

    pub fn grad_u(&self, tf: &TargetFunction, x: &[f64]) -> Result<DVector<f64>> {
        let n = x.len();
        match self {
            DerivativeOracle::Dual => {
                let mut g = DVector::zeros(n);
                for k in 0..n {
                    let seeded = seed_first(x, k);
                    g[k] = tf.u.eval(&seeded).map_err(|s| domain(x, s))?.eps;
                }
                Ok(g)
            }
            DerivativeOracle::CentralDifference { .. } => {
                let (h, _) = self.steps(x);
                let mut g = DVector::zeros(n);
                for k in 0..n {
                    let (p, m) = shifted(x, k, h);
                    g[k] = (tf.eval(&p)? - tf.eval(&m)?) / (2.0 * h);
                }
                Ok(g)
            }
        }
    }

    /// Hessian of `u`, returned exactly symmetric.
    pub fn hess_u(&self, tf: &TargetFunction, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = x.len();
        let mut h = DMatrix::zeros(n, n);
        match self {
            DerivativeOracle::Dual => {
                for k in 0..n {
                    for l in k..n {
                        let seeded = seed_second(x, k, l);
                        let v: HyperDual = tf.u.eval(&seeded).map_err(|s| domain(x, s))?;
                        h[(k, l)] = v.eps.eps;
                        h[(l, k)] = v.eps.eps;
                    }
                }
            }
            DerivativeOracle::CentralDifference { .. } => {
                let (_, step) = self.steps(x);
                let f0 = tf.eval(x)?;
                for k in 0..n {
                    let (p, m) = shifted(x, k, step);
                    h[(k, k)] = (tf.eval(&p)? - 2.0 * f0 + tf.eval(&m)?) / (step * step);
                    for l in (k + 1)..n {
                        let mut pp = x.to_vec();
                        let mut pm = x.to_vec();
                        let mut mp = x.to_vec();
                        let mut mm = x.to_vec();
                        pp[k] += step;
                        pp[l] += step;
                        pm[k] += step;
                        pm[l] -= step;
                        mp[k] -= step;
                        mp[l] += step;
                        mm[k] -= step;
                        mm[l] -= step;
                        let v = (tf.eval(&pp)? - tf.eval(&pm)? - tf.eval(&mp)? + tf.eval(&mm)?) / (4.0 * step * step);
                        h[(k, l)] = v;
                        h[(l, k)] = v;
                    }
                }
            }
        }
        Ok((&h + h.transpose()) * 0.5)
    }

    /// Jacobian `Dσⱼ(x)` of the j-th field (zero-based), `[i][k] = ∂ₖσⱼ,ᵢ`.
    pub fn jac_sigma_col(&self, sys: &ControlSystem, j: usize, x: &[f64]) -> Result<DMatrix<f64>> {
        sys.check_point(x)?;
        if j >= sys.control_dim() {
            return Err(Error::Dimension(format!(
                "field index {} out of range for {} fields",
                j + 1,
                sys.control_dim()
            )));
        }
        let n = x.len();
        let mut jac = DMatrix::zeros(n, n);
        match self {
            DerivativeOracle::Dual => {
                for k in 0..n {
                    let seeded = seed_first(x, k);
                    for i in 0..n {
                        jac[(i, k)] = sys.sigma[i][j].eval(&seeded).map_err(|s| domain(x, s))?.eps;
                    }
                }
            }
            DerivativeOracle::CentralDifference { .. } => {
                let (h, _) = self.steps(x);
                for k in 0..n {
                    let (p, m) = shifted(x, k, h);
                    let sp = sys.eval_sigma(&p)?;
                    let sm = sys.eval_sigma(&m)?;
                    for i in 0..n {
                        jac[(i, k)] = (sp[(i, j)] - sm[(i, j)]) / (2.0 * h);
                    }
                }
            }
        }
        Ok(jac)
    }

    /// Jacobian of the admissible field `σ(x) a`.
    pub fn jac_field(&self, sys: &ControlSystem, a: &Control, x: &[f64]) -> Result<DMatrix<f64>> {
        sys.check_control(a)?;
        let n = x.len();
        let mut out = DMatrix::zeros(n, n);
        for (j, &aj) in a.as_slice().iter().enumerate() {
            if aj != 0.0 {
                out += self.jac_sigma_col(sys, j, x)? * aj;
            }
        }
        Ok(out)
    }
}

fn seed_first(x: &[f64], k: usize) -> Vec<Dual<f64>> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| Dual::new(v, if i == k { 1.0 } else { 0.0 }))
        .collect()
}

fn seed_second(x: &[f64], k: usize, l: usize) -> Vec<HyperDual> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let inner = Dual::new(v, if i == k { 1.0 } else { 0.0 });
            let outer = Dual::new(if i == l { 1.0 } else { 0.0 }, 0.0);
            Dual::new(inner, outer)
        })
        .collect()
}

fn shifted(x: &[f64], k: usize, h: f64) -> (Vec<f64>, Vec<f64>) {
    let mut p = x.to_vec();
    let mut m = x.to_vec();
    p[k] += h;
    m[k] -= h;
    (p, m)
}
