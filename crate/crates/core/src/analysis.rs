//! Lie brackets, second-order Hamiltonians and the matrices `S`, `S*`, `Sᵉ`, `K`.
//!
//! Index convention: `S[i][j] = σᵢ·∇(∇u·σⱼ) = H_{σⱼ,σᵢ}`, hence
//! `Sᵉ[i][j] = ½ ∇u·[σᵢ,σⱼ]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::system::{Control, ControlSystem, DerivativeOracle, TargetFunction};

/// `[σᵢ,σⱼ](x) = Dσⱼ σᵢ(x) − Dσᵢ σⱼ(x)`, zero-based field indices.
pub fn lie_bracket(
    sys: &ControlSystem,
    oracle: &DerivativeOracle,
    i: usize,
    j: usize,
    x: &[f64],
) -> Result<DVector<f64>> {
    let sigma = sys.eval_sigma(x)?;
    let di = oracle.jac_sigma_col(sys, i, x)?;
    let dj = oracle.jac_sigma_col(sys, j, x)?;
    Ok(dj * sigma.column(i) - di * sigma.column(j))
}

/// `[f,g]` for the admissible fields `f = σa₁`, `g = σa₂`.
pub fn field_bracket(
    sys: &ControlSystem,
    oracle: &DerivativeOracle,
    a1: &Control,
    a2: &Control,
    x: &[f64],
) -> Result<DVector<f64>> {
    let f = sys.eval_field(x, a1)?;
    let g = sys.eval_field(x, a2)?;
    let df = oracle.jac_field(sys, a1, x)?;
    let dg = oracle.jac_field(sys, a2, x)?;
    Ok(dg * f - df * g)
}

/// `H_{f,g}(x) = D²u f·g + ∇u·Df g` with `f = σa₁`, `g = σa₂`.
pub fn second_hamiltonian(
    sys: &ControlSystem,
    tf: &TargetFunction,
    oracle: &DerivativeOracle,
    a1: &Control,
    a2: &Control,
    x: &[f64],
) -> Result<f64> {
    let f = sys.eval_field(x, a1)?;
    let g = sys.eval_field(x, a2)?;
    let grad = oracle.grad_u(tf, x)?;
    let hess = oracle.hess_u(tf, x)?;
    let df = oracle.jac_field(sys, a1, x)?;
    Ok((hess * &f).dot(&g) + grad.dot(&(df * g)))
}

/// `S(x) = ᵗσ ᵗD(∇u σ)(x)`.
pub fn build_s(sys: &ControlSystem, tf: &TargetFunction, oracle: &DerivativeOracle, x: &[f64]) -> Result<DMatrix<f64>> {
    let n = sys.state_dim();
    let m = sys.control_dim();
    let sigma = sys.eval_sigma(x)?;
    let grad = oracle.grad_u(tf, x)?;
    let hess = oracle.hess_u(tf, x)?;
    // Jacobian of the row map x ↦ ∇u(x)σ(x); row j is ∇(∇u·σⱼ).
    let mut dw = DMatrix::zeros(m, n);
    for j in 0..m {
        let dsj = oracle.jac_sigma_col(sys, j, x)?;
        let row = hess.transpose() * sigma.column(j) + dsj.transpose() * &grad;
        dw.set_row(j, &row.transpose());
    }
    Ok(sigma.transpose() * dw.transpose())
}

/// `(S*, Sᵉ) = ((S + ᵗS)/2, (S − ᵗS)/2)`.
pub fn split_s(s: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !s.is_square() {
        return Err(Error::Dimension(format!(
            "S is {}×{}, not square",
            s.nrows(),
            s.ncols()
        )));
    }
    let t = s.transpose();
    Ok(((s + &t) * 0.5, (s - &t) * 0.5))
}

/// `K = [[S*, ᵗS], [S, S*]]`.
pub fn build_k(s_sym: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = s.nrows();
    if !s.is_square() || s_sym.shape() != s.shape() {
        return Err(Error::Dimension("S and S* must be square of equal size".into()));
    }
    let mut k = DMatrix::zeros(2 * m, 2 * m);
    k.view_mut((0, 0), (m, m)).copy_from(s_sym);
    k.view_mut((0, m), (m, m)).copy_from(&s.transpose());
    k.view_mut((m, 0), (m, m)).copy_from(s);
    k.view_mut((m, m), (m, m)).copy_from(s_sym);
    debug_assert_eq!(k, k.transpose());
    Ok(k)
}

/// Value of `h(a₁,a₂) = K(a₁,a₂)·(a₁,a₂)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticFormValue {
    pub h: f64,
    pub a1: DVector<f64>,
    pub a2: DVector<f64>,
}

/// Evaluates the quadratic form of `K` at `(a₁,a₂)` by the block product and
/// checks it against `S*(a₁+a₂)·(a₁+a₂) + 2Sᵉa₁·a₂`.
pub fn quad_form(k: &DMatrix<f64>, a1: &DVector<f64>, a2: &DVector<f64>) -> Result<QuadraticFormValue> {
    let m = a1.len();
    if k.shape() != (2 * m, 2 * m) || a2.len() != m {
        return Err(Error::Dimension(format!(
            "K is {}×{} but the controls have {} and {} components",
            k.nrows(),
            k.ncols(),
            a1.len(),
            a2.len()
        )));
    }
    let mut v = DVector::zeros(2 * m);
    v.rows_mut(0, m).copy_from(a1);
    v.rows_mut(m, m).copy_from(a2);
    let block = (k * &v).dot(&v);

    let s_sym = k.view((0, 0), (m, m));
    let s = k.view((m, 0), (m, m));
    let s_skew = (s - s.transpose()) * 0.5;
    let sum = a1 + a2;
    let identity = (s_sym * &sum).dot(&sum) + 2.0 * (s_skew * a1).dot(a2);

    let scale = k.amax() * v.norm_squared();
    if (block - identity).abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) + 1e-300 {
        return Err(Error::Internal(format!(
            "quadratic form routes disagree: {block} vs {identity}"
        )));
    }
    Ok(QuadraticFormValue {
        h: block,
        a1: a1.clone(),
        a2: a2.clone(),
    })
}

/// Everything second-order about a point.
#[derive(Clone, Debug, PartialEq)]
pub struct SecondOrderData {
    pub point: Vec<f64>,
    pub gradient: DVector<f64>,
    /// `ᵗσ∇u(x̄)`.
    pub tangency: DVector<f64>,
    pub s: DMatrix<f64>,
    pub s_sym: DMatrix<f64>,
    pub s_skew: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

impl SecondOrderData {
    pub fn at(sys: &ControlSystem, tf: &TargetFunction, oracle: &DerivativeOracle, x: &[f64]) -> Result<Self> {
        let sigma = sys.eval_sigma(x)?;
        let gradient = oracle.grad_u(tf, x)?;
        let tangency = sigma.transpose() * &gradient;
        let s = build_s(sys, tf, oracle, x)?;
        let (s_sym, s_skew) = split_s(&s)?;
        let k = build_k(&s_sym, &s)?;
        Ok(Self {
            point: x.to_vec(),
            gradient,
            tangency,
            s,
            s_sym,
            s_skew,
            k,
        })
    }

    /// `‖S − ᵗS‖∞` (max absolute row sum).
    pub fn symmetry_defect(&self) -> f64 {
        inf_norm(&(&self.s - self.s.transpose()))
    }
}

/// Max absolute row sum.
pub fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
