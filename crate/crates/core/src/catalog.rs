//! Built-in example systems.

use crate::config::{parse_config, Problem};
use crate::error::{Error, Result};

pub struct Entry {
    pub name: &'static str,
    pub summary: &'static str,
    pub config: &'static str,
}

pub const ENTRIES: [Entry; 5] = [
    Entry {
        name: "rotation",
        summary: "single rotation field crossing a line by curvature alone",
        config: r#"[system]
name = "rotation"
state = ["x", "y"]
sigma = [["-y"], ["x"]]

[target]
u = "y - 1"

[analysis]
point = [0, 1]
"#,
    },
    Entry {
        name: "constant-field",
        summary: "constant vertical field leaving the unit disc",
        config: r#"[system]
name = "constant-field"
state = ["x", "y"]
sigma = [["0"], ["1"]]

[target]
u = "(1 - x^2 - y^2)/2"

[analysis]
point = [1, 0]
"#,
    },
    Entry {
        name: "shear",
        summary: "two fields with a non-symmetric S on the line y = 0",
        config: r#"[system]
name = "shear"
state = ["x", "y"]
sigma = [["y", "0"], ["0", "1"]]

[target]
u = "(x^2 + y^2)/2"

[analysis]
point = [1, 0]
"#,
    },
    Entry {
        name: "heisenberg",
        summary: "Heisenberg system approaching a sphere from outside",
        config: r#"[system]
name = "heisenberg"
state = ["x", "y", "z"]
sigma = [["1", "0"], ["0", "1"], ["y", "-x"]]

[target]
u = "(x^2 + y^2 + z^2)/2"

[analysis]
point = [0, 0, 1]
"#,
    },
    Entry {
        name: "dubins",
        summary: "Dubins car (unit speed heading plus turning) and a sphere",
        config: r#"[system]
name = "dubins"
state = ["x", "y", "z"]
sigma = [["cos(z)", "0"], ["sin(z)", "0"], ["0", "1"]]

[target]
u = "(x^2 + y^2 + z^2)/2"

[analysis]
point = [0, 1, 0]
"#,
    },
];

pub fn names() -> Vec<String> {
    ENTRIES.iter().map(|e| e.name.to_string()).collect()
}

pub fn entry(name: &str) -> Result<&'static Entry> {
    ENTRIES
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::UnknownCatalog {
            name: name.to_string(),
            valid: names(),
        })
}

/// System, target and default analysis point of a catalog entry.
pub fn lookup(name: &str) -> Result<Problem> {
    parse_config(entry(name)?.config)
}
