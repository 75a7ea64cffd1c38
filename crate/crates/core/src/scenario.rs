//! Scenario configuration: a JSON document `{"scenarios": [...]}` naming a
//! domain, a map, a profile, a command, tolerances and optional assertions.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::mesh::DomainSpec;
use crate::profile::{Condition, FProfile};
use crate::sphere_map::MapKind;
use crate::variation::Descent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Conditions,
    Solve,
    Index,
    Stress,
    Identity,
    Verify,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Conditions => "conditions",
            Command::Solve => "solve",
            Command::Index => "index",
            Command::Stress => "stress",
            Command::Identity => "identity",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapName {
    IdentityS2,
    Equatorial,
    CliffordTorus,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub seed: u64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    pub kind: MapName,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub parameters: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Perturbation>,
}

impl MapSpec {
    pub fn to_kind(&self) -> Result<MapKind> {
        let mut obj = serde_json::Map::new();
        obj.insert("kind".into(), serde_json::to_value(self.kind)?);
        if !self.parameters.is_null() {
            obj.insert("parameters".into(), self.parameters.clone());
        }
        let base: MapKind =
            serde_json::from_value(Value::Object(obj)).map_err(|e| Error::Config(format!("map.parameters: {e}")))?;
        Ok(match self.perturbation {
            Some(p) => MapKind::Perturbed {
                base: Box::new(base),
                seed: p.seed,
                amplitude: p.amplitude,
            },
            None => base,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Criticality threshold on the tension sup-norm.
    pub tol_residual: f64,
    /// Relative eigenvalue tolerance.
    pub tol_eig: f64,
    /// Relative tolerance for discretization comparisons.
    pub tol_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            tol_residual: 1e-3,
            tol_eig: 1e-3,
            tol_rel: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Options {
    /// Conditions to tabulate; defaults to the three conditions at `m = 3`, `k² = 1`.
    pub conditions: Option<Vec<Condition>>,
    pub max_iter: usize,
    pub initial_step: Option<f64>,
    pub descent: Descent,
    /// Also assemble the full Hessian for `index`.
    pub full_hessian: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            conditions: None,
            max_iter: 500,
            initial_step: None,
            descent: Descent::L2,
            full_hessian: false,
        }
    }
}

/// A check on the report payload, addressed by JSON pointer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertion {
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equals: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub domain: DomainSpec,
    pub map: MapSpec,
    pub profile: FProfile,
    pub command: Command,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub options: Options,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expect: Vec<Assertion>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    scenarios: Vec<Scenario>,
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<Vec<Scenario>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ConfigFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("{path}: {}", e.into_inner()))
    })?;
    let mut seen = HashSet::new();
    for (i, s) in file.scenarios.iter().enumerate() {
        let ctx = |msg: String| Error::Config(format!("scenarios[{i}] ({}): {msg}", s.name));
        if !seen.insert(s.name.as_str()) {
            return Err(ctx("duplicate scenario name".into()));
        }
        if s.name.is_empty() || s.name.contains(['/', '\\']) {
            return Err(ctx("name must be non-empty and contain no path separators".into()));
        }
        let t = &s.tolerances;
        for (field, v) in [("tol_residual", t.tol_residual), ("tol_eig", t.tol_eig), ("tol_rel", t.tol_rel)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ctx(format!("tolerances.{field} must be positive, got {v}")));
            }
        }
        s.map.to_kind().map_err(|e| ctx(e.to_string()))?;
        if let Some(p) = s.map.perturbation {
            if !(p.amplitude >= 0.0 && p.amplitude.is_finite()) {
                return Err(ctx(format!("map.perturbation.amplitude must be >= 0, got {}", p.amplitude)));
            }
        }
        for c in s.options.conditions.iter().flatten() {
            c.validate().map_err(|e| ctx(format!("options.conditions: {e}")))?;
        }
        for a in &s.expect {
            let has_check = a.equals.is_some() || a.approx.is_some() || a.min.is_some() || a.max.is_some();
            if !has_check || !a.path.starts_with('/') {
                return Err(ctx(format!(
                    "expect: assertion on {:?} needs a JSON-pointer path and one of equals/approx/min/max",
                    a.path
                )));
            }
        }
    }
    Ok(file.scenarios)
}
