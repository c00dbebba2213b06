//! Serializable analysis report.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::spectral::{AttainabilityCertificate, Verdict};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceReport {
    pub petrov: f64,
    pub sym: f64,
    pub eig: f64,
}

/// Matrices are row-major nested arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisReport {
    pub system: String,
    pub point: Vec<f64>,
    pub verdict: Verdict,
    pub tangency: Vec<f64>,
    #[serde(rename = "S")]
    pub s: Vec<Vec<f64>>,
    #[serde(rename = "S_sym")]
    pub s_sym: Vec<Vec<f64>>,
    #[serde(rename = "S_skew")]
    pub s_skew: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub lambda_min: f64,
    pub a1: Option<Vec<f64>>,
    pub a2: Option<Vec<f64>>,
    pub symmetry_defect: f64,
    pub tolerances: ToleranceReport,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl AnalysisReport {
    pub fn from_certificate(system: &str, cert: &AttainabilityCertificate) -> Self {
        let d = &cert.data;
        let (a1, a2) = match &cert.controls {
            Some((a1, a2)) => (Some(a1.as_slice().to_vec()), Some(a2.as_slice().to_vec())),
            None => (None, None),
        };
        Self {
            system: system.to_string(),
            point: d.point.clone(),
            verdict: cert.kind,
            tangency: d.tangency.iter().copied().collect(),
            s: rows(&d.s),
            s_sym: rows(&d.s_sym),
            s_skew: rows(&d.s_skew),
            k: rows(&d.k),
            eigenvalues: cert.spectrum.eigenvalues.clone(),
            lambda_min: cert.lambda_min,
            a1,
            a2,
            symmetry_defect: cert.diagnostics.symmetry_defect,
            tolerances: ToleranceReport {
                petrov: cert.diagnostics.tau_petrov,
                sym: cert.diagnostics.tau_sym,
                eig: cert.diagnostics.tau_eig,
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields are always serializable")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let vec = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(", ");
        let _ = writeln!(out, "system:     {}", self.system);
        let _ = writeln!(out, "point:      ({})", vec(&self.point));
        let _ = writeln!(out, "verdict:    {}", self.verdict.as_str());
        let _ = writeln!(out, "tangency:   ({})", vec(&self.tangency));
        for (name, m) in [
            ("S", &self.s),
            ("S*", &self.s_sym),
            ("Se", &self.s_skew),
            ("K", &self.k),
        ] {
            let _ = writeln!(out, "{name}:");
            for r in m {
                let _ = writeln!(out, "  [{}]", vec(r));
            }
        }
        let _ = writeln!(out, "eigenvalues(K): ({})", vec(&self.eigenvalues));
        let _ = writeln!(out, "lambda_min: {:.9}", self.lambda_min);
        if let (Some(a1), Some(a2)) = (&self.a1, &self.a2) {
            let _ = writeln!(out, "a1:         ({})", vec(a1));
            let _ = writeln!(out, "a2:         ({})", vec(a2));
        }
        let _ = writeln!(out, "symmetry defect: {:e}", self.symmetry_defect);
        let _ = writeln!(
            out,
            "tolerances: petrov={:e} sym={:e} eig={:e}",
            self.tolerances.petrov, self.tolerances.sym, self.tolerances.eig
        );
        out
    }
}
