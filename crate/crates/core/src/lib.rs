//! Certificates of small-time local attainability for symmetric control
//! systems `ẋ = σ(x)a`, `|a| ≤ 1`, and numerical verification of the
//! trajectory expansions behind them.
//!
//! The pipeline at a point `x̄` where every field is tangent to `{u = u(x̄)}`:
//! build `S = ᵗσ ᵗD(∇u σ)`, split it into symmetric and skew parts, assemble
//! `K = [[S*, ᵗS], [S, S*]]`, and look for a negative eigenvalue. The minimal
//! eigenvector yields two unit controls whose one-switch trajectory crosses
//! the level set at rate `λ_min t²`.

pub mod analysis;
pub mod catalog;
pub mod config;
pub mod eigen;
pub mod error;
pub mod expr;
pub mod report;
pub mod spectral;
pub mod study;
pub mod system;
pub mod trajectory;

pub use error::{Error, Result};
