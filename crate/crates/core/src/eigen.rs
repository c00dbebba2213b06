//! Cyclic Jacobi eigensolver for small symmetric matrices.

use nalgebra::{DMatrix, DVector};

use crate::analysis::inf_norm;
use crate::error::{Error, Result};

pub const MAX_SWEEPS: usize = 100;
const CONVERGENCE_TOL: f64 = 1e-14;
/// Inputs with `‖A − ᵗA‖∞` above this fraction of `‖A‖∞` are rejected.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Eigenvalues in ascending order; eigenvector `k` is column `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn vector(&self, k: usize) -> DVector<f64> {
        self.eigenvectors.column(k).into_owned()
    }

    /// Number of eigenvalues within `tol` of the smallest one.
    pub fn min_multiplicity(&self, tol: f64) -> usize {
        let lo = self.min_eigenvalue();
        self.eigenvalues.iter().filter(|&&l| l - lo <= tol).count()
    }
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotations.
///
/// Sweeps visit `(p, q)`, `p < q`, in row-major order and stop once the
/// off-diagonal Frobenius norm drops to `1e-14·‖A‖_F`. Eigenpairs come back
/// sorted ascending, each vector signed so its first nonzero entry is positive.
pub fn eigh(a: &DMatrix<f64>) -> Result<EigenDecomposition> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "{}×{} matrix is not square",
            a.nrows(),
            a.ncols()
        )));
    }
    let defect = inf_norm(&(a - a.transpose()));
    if defect > SYMMETRY_TOL * inf_norm(a) {
        return Err(Error::NotSymmetric { defect });
    }
    let n = a.nrows();
    let mut m = (a + a.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);
    let target = CONVERGENCE_TOL * m.norm();

    let mut converged = false;
    for _ in 0..=MAX_SWEEPS {
        if off_diagonal_norm(&m) <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence { sweeps: MAX_SWEEPS });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let eigenvalues = order.iter().map(|&i| m[(i, i)]).collect();
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let mut vec = v.column(i).into_owned();
        if let Some(first) = vec.iter().find(|c| c.abs() > 1e-12) {
            if *first < 0.0 {
                vec.neg_mut();
            }
        }
        eigenvectors.set_column(col, &vec);
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}
