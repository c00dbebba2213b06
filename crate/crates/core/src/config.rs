//! Structured (TOML) problem description.
//!
//! ```toml
//! [system]
//! name = "heisenberg"
//! state = ["x", "y", "z"]
//! sigma = [["1", "0"], ["0", "1"], ["y", "-x"]]
//!
//! [target]
//! u = "(x^2 + y^2 + z^2)/2"
//!
//! [analysis]
//! point = [0, 0, 1]
//!
//! [analysis.tol]   # optional base factors
//! petrov = 1e-9
//! sym = 1e-9
//! eig = 1e-9
//! ```

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::expr;
use crate::spectral::Tolerances;
use crate::system::{ControlSystem, TargetFunction};

/// A system, its target and the analysis settings read from a config.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub system: ControlSystem,
    pub target: TargetFunction,
    pub point: Option<Vec<f64>>,
    pub tolerances: Tolerances,
}

impl Problem {
    /// The analysis point, or an error if none was configured.
    pub fn point(&self) -> Result<&[f64]> {
        self.point
            .as_deref()
            .ok_or_else(|| Error::Config("no analysis point given".into()))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: RawSystem,
    target: RawTarget,
    analysis: Option<RawAnalysis>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    name: String,
    state: Vec<String>,
    sigma: Vec<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    u: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnalysis {
    point: Option<Vec<f64>>,
    tol: Option<RawTol>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTol {
    petrov: Option<f64>,
    sym: Option<f64>,
    eig: Option<f64>,
}

fn valid_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && expr::Func::from_name(s).is_none()
}

pub fn parse_config(text: &str) -> Result<Problem> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let vars = raw.system.state;
    if let Some(bad) = vars.iter().find(|v| !valid_identifier(v)) {
        return Err(Error::Config(format!("`{bad}` is not a valid state identifier")));
    }
    for (i, v) in vars.iter().enumerate() {
        if vars[..i].contains(v) {
            return Err(Error::Config(format!("state variable `{v}` declared twice")));
        }
    }
    let sigma = raw
        .system
        .sigma
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, src)| {
                    expr::parse(src, &vars).map_err(|source| Error::Parse {
                        context: format!("sigma[{}][{}] `{src}`", i + 1, j + 1),
                        source,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let system = ControlSystem::new(raw.system.name, vars.clone(), sigma)?;
    let u = expr::parse(&raw.target.u, &vars).map_err(|source| Error::Parse {
        context: format!("target u `{}`", raw.target.u),
        source,
    })?;

    let mut tolerances = Tolerances::default();
    let mut point = None;
    if let Some(analysis) = raw.analysis {
        if let Some(p) = analysis.point {
            if p.len() != system.state_dim() {
                return Err(Error::Dimension(format!(
                    "analysis point has {} coordinates, expected {}",
                    p.len(),
                    system.state_dim()
                )));
            }
            point = Some(p);
        }
        if let Some(t) = analysis.tol {
            tolerances = tolerances.with_overrides(t.petrov, t.sym, t.eig)?;
        }
    }
    Ok(Problem {
        system,
        target: TargetFunction::new(u),
        point,
        tolerances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEISENBERG: &str = r#"
[system]
name = "heisenberg"
state = ["x", "y", "z"]
sigma = [["1", "0"], ["0", "1"], ["y", "-x"]]

[target]
u = "(x^2+y^2+z^2)/2"

[analysis]
point = [0, 0, 1]
"#;

    #[test]
    fn heisenberg_config() {
        let p = parse_config(HEISENBERG).unwrap();
        assert_eq!(p.system.state_dim(), 3);
        assert_eq!(p.system.control_dim(), 2);
        assert_eq!(p.point.as_deref(), Some(&[0.0, 0.0, 1.0][..]));
    }

    #[test]
    fn trivial_zero_field_system() {
        let text = r#"
[system]
name = "zero"
state = ["x", "y"]
sigma = [["0"], ["0"]]
[target]
u = "x"
"#;
        let p = parse_config(text).unwrap();
        assert_eq!(p.system.control_dim(), 1);
        assert!(p.point.is_none());
    }

    #[test]
    fn syntax_error_carries_offset() {
        let text = HEISENBERG.replace("(x^2+y^2+z^2)/2", "x^2 +");
        match parse_config(&text) {
            Err(Error::Parse { source, .. }) => assert_eq!(source.offset, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn undeclared_identifier() {
        let text = HEISENBERG.replace("\"-x\"", "\"-w\"");
        match parse_config(&text) {
            Err(Error::Parse { source, context }) => {
                assert!(context.contains("sigma[3][2]"));
                assert_eq!(source.kind, expr::ParseErrorKind::UndeclaredIdentifier("w".into()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatches() {
        let ragged = HEISENBERG.replace(r#"["y", "-x"]"#, r#"["y"]"#);
        assert!(matches!(parse_config(&ragged), Err(Error::Dimension(_))));
        let short = HEISENBERG.replace(r#", ["y", "-x"]"#, "");
        assert!(matches!(parse_config(&short), Err(Error::Dimension(_))));
        let point = HEISENBERG.replace("[0, 0, 1]", "[0, 1]");
        assert!(matches!(parse_config(&point), Err(Error::Dimension(_))));
    }

    #[test]
    fn tolerance_overrides() {
        let text = format!("{HEISENBERG}\n[analysis.tol]\neig = 1e-6\n");
        let p = parse_config(&text).unwrap();
        assert_eq!(p.tolerances.eig, 1e-6);
        assert_eq!(p.tolerances.sym, 1e-9);
    }
}
