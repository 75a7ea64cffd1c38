//! Executes scenarios and renders their reports.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::hessian::IndexReport;
use crate::identity::{
    canonical_fields, generic_sphere_field, homothetic_reduction_check, q_identity_conformal_closed,
    q_identity_discrete, stability_bound_check, yano_check,
};
use crate::mesh::{DomainKind, DomainMesh, TangentField};
use crate::par;
use crate::profile::Condition;
use crate::scenario::{Assertion, Command, Scenario};
use crate::sphere_map::{make_map, SphereMap};
use crate::stress::{stress_tensor, verify_theorem1, Hypothesis, StressReport};
use crate::variation::{energy_gradient, f_energy, solve_f_harmonic, SecondVariation, StepRule, FULL_HESSIAN_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    HypothesisNotMet,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::HypothesisNotMet => "hypothesis_not_met",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AssertionResult {
    pub path: String,
    pub actual: Value,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: Scenario,
    pub payload: Value,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub assertions: Vec<AssertionResult>,
    /// Headline number for the summary table.
    pub key_metric: Value,
    /// Wall-clock time; kept out of the JSON report so reports are reproducible.
    #[serde(skip)]
    pub wall_time_ms: f64,
}

/// Runs every scenario (concurrently when enabled); reports follow input order.
pub fn run(scenarios: &[Scenario]) -> Vec<RunReport> {
    par::map_slice(scenarios, run_one)
}

pub fn run_one(s: &Scenario) -> RunReport {
    let start = Instant::now();
    log::info!("running {} ({})", s.name, s.command.as_str());
    let outcome = execute(s);
    let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    match outcome {
        Ok((payload, hypothesis_met)) => {
            let payload = round_json(payload);
            let assertions: Vec<AssertionResult> = s.expect.iter().map(|a| check(a, &payload)).collect();
            let status = if assertions.iter().any(|a| !a.passed) {
                Status::Fail
            } else if !hypothesis_met {
                Status::HypothesisNotMet
            } else {
                Status::Pass
            };
            RunReport {
                scenario: s.clone(),
                key_metric: key_metric(s.command, &payload),
                payload,
                status,
                error: None,
                assertions,
                wall_time_ms,
            }
        }
        Err(e) => {
            log::warn!("{} failed: {e}", s.name);
            RunReport {
                scenario: s.clone(),
                payload: Value::Null,
                status: Status::Fail,
                error: Some(e.to_string()),
                assertions: Vec::new(),
                key_metric: Value::Null,
                wall_time_ms,
            }
        }
    }
}

fn build(s: &Scenario) -> Result<(DomainMesh, SphereMap)> {
    let mesh = DomainMesh::build(s.domain)?;
    let map = make_map(&mesh, &s.map.to_kind()?)?;
    Ok((mesh, map))
}

/// Payload and whether the command's hypothesis was met.
fn execute(s: &Scenario) -> Result<(Value, bool)> {
    let tol = &s.tolerances;
    let profile = &s.profile;
    match s.command {
        Command::Conditions => {
            let conds = s.options.conditions.clone().unwrap_or_else(|| {
                vec![
                    Condition::StabilityIdentity { m: 3 },
                    Condition::IndexIdentity { m: 3 },
                    Condition::homothetic_k2(3, 1.0),
                ]
            });
            let rows = conds
                .into_iter()
                .map(|c| profile.check_condition(c))
                .collect::<Result<Vec<_>>>()?;
            Ok((json!({ "profile": profile, "conditions": rows }), true))
        }
        Command::Solve => {
            let (mesh, map) = build(s)?;
            let rule = StepRule {
                initial: s.options.initial_step,
                descent: s.options.descent,
                ..StepRule::default()
            };
            let out = solve_f_harmonic(&mesh, &map, profile, tol.tol_residual, s.options.max_iter, rule)?;
            let monotone = out.energies.windows(2).all(|w| w[1] <= w[0]);
            Ok((
                json!({
                    "iterations": out.iterations,
                    "residual": out.residual,
                    "initial_energy": out.energies[0],
                    "final_energy": out.energies[out.energies.len() - 1],
                    "monotone": monotone,
                }),
                true,
            ))
        }
        Command::Index => {
            let (mesh, map) = build(s)?;
            let residual = energy_gradient(&mesh, &map, profile)?.sup_norm;
            let sv = SecondVariation::new(&mesh, &map, profile)?;
            let conformal = sv.conformal_index_bound(&map, tol.tol_eig);
            let full = if s.options.full_hessian {
                Some(index_json(&sv.full_hessian_index(&map, tol.tol_eig, FULL_HESSIAN_CAP)?, false))
            } else {
                None
            };
            Ok((
                json!({
                    "residual": residual,
                    "critical": residual <= tol.tol_residual,
                    "conformal": index_json(&conformal, true),
                    "full": full,
                }),
                true,
            ))
        }
        Command::Stress => {
            let (mesh, map) = build(s)?;
            let stress = stress_tensor(&mesh, &map, profile)?;
            Ok((json!({ "stress": stress_json(&stress), "energy": f_energy(&mesh, &map, profile)? }), true))
        }
        Command::Identity => {
            let (mesh, map) = build(s)?;
            identity_battery(s, &mesh, &map).map(|v| (v, true))
        }
        Command::Verify => {
            let (mesh, map) = build(s)?;
            let check = verify_theorem1(&mesh, &map, profile, tol.tol_eig, tol.tol_residual)?;
            let met = check.hypothesis == Hypothesis::Met;
            if met && !check.theorem_consistent {
                return Err(Error::Incompatible(format!(
                    "hypothesis met but only {} negative directions found",
                    check.index.negative_count
                )));
            }
            Ok((
                json!({
                    "stress": stress_json(&check.stress),
                    "index": index_json(&check.index, true),
                    "residual": check.residual,
                    "hypothesis": check.hypothesis,
                    "theorem_consistent": check.theorem_consistent,
                }),
                met,
            ))
        }
    }
}

fn index_json(r: &IndexReport, with_matrix: bool) -> Value {
    let mut v = json!({
        "size": r.size(),
        "eigenvalues": r.eigenvalues,
        "negative_count": r.negative_count,
        "tol_eig": r.tol_eig,
    });
    if with_matrix {
        v["basis"] = json!(r.basis);
        v["hessian"] = json!(r.hessian);
    }
    v
}

fn stress_json(r: &StressReport) -> Value {
    json!({
        "faces": r.s_min.len(),
        "s_min": r.global_min,
        "s_min_max": r.s_min.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        "classification": r.classification,
        "scale": r.scale,
    })
}

fn identity_battery(s: &Scenario, mesh: &DomainMesh, map: &SphereMap) -> Result<Value> {
    let profile = &s.profile;
    match mesh.kind {
        DomainKind::RoundSphere2 => {
            let mut fields = canonical_fields(2).on_sphere_mesh(mesh)?;
            fields.push(("generic".into(), generic_sphere_field(mesh)));
            let mut rows = serde_json::Map::new();
            let mut max_yano: f64 = 0.0;
            for (label, x) in &fields {
                let q = q_identity_discrete(mesh, profile, x)?;
                let y = yano_check(mesh, x);
                let margin = stability_bound_check(mesh, profile, x)?;
                if label == "generic" {
                    max_yano = max_yano.max(y.rel_err);
                }
                let reduction = match homothetic_reduction_check(mesh, map, profile, x) {
                    Ok(r) => json!(r),
                    Err(e) => json!({ "error": e.to_string() }),
                };
                rows.insert(
                    label.clone(),
                    json!({ "q": q, "yano": y, "stability_margin": margin, "reduction": reduction }),
                );
            }
            Ok(json!({
                "fields": rows,
                "conformal_closed": q_identity_conformal_closed(2, profile, false)?,
                "yano_generic_rel_err": max_yano,
            }))
        }
        DomainKind::FlatTorus2 => {
            let fields: [(&str, fn(f64, f64) -> [f64; 3]); 5] = [
                ("d_u", |_, _| [1.0, 0.0, 0.0]),
                ("d_v", |_, _| [0.0, 1.0, 0.0]),
                ("sin_v_d_u", |_, v| [v.sin(), 0.0, 0.0]),
                ("sin_u_d_v", |u, _| [0.0, u.sin(), 0.0]),
                ("sin_u_d_u", |u, _| [u.sin(), 0.0, 0.0]),
            ];
            let mut rows = serde_json::Map::new();
            let mut max_err: f64 = 0.0;
            for (label, f) in fields {
                let x = TangentField::from_fn(mesh, |p| f(p[0], p[1]));
                let r = homothetic_reduction_check(mesh, map, profile, &x)?;
                max_err = max_err.max(r.corrected.rel_err);
                rows.insert(label.into(), json!({ "reduction": r, "yano": yano_check(mesh, &x) }));
            }
            Ok(json!({ "fields": rows, "max_reduction_rel_err": max_err }))
        }
    }
}

fn key_metric(cmd: Command, payload: &Value) -> Value {
    let ptr = match cmd {
        Command::Conditions => "/conditions/0/value",
        Command::Solve => "/residual",
        Command::Index => "/conformal/negative_count",
        Command::Stress => "/stress/s_min",
        Command::Identity => {
            return payload
                .pointer("/yano_generic_rel_err")
                .or_else(|| payload.pointer("/max_reduction_rel_err"))
                .cloned()
                .unwrap_or(Value::Null)
        }
        Command::Verify => "/index/negative_count",
    };
    payload.pointer(ptr).cloned().unwrap_or(Value::Null)
}

fn check(a: &Assertion, payload: &Value) -> AssertionResult {
    let actual = payload.pointer(&a.path).cloned().unwrap_or(Value::Null);
    let num = actual.as_f64();
    let mut passed = true;
    if let Some(expected) = &a.equals {
        passed &= match (expected.as_f64(), num) {
            (Some(e), Some(x)) => e == x,
            _ => *expected == actual,
        };
    }
    if let Some(target) = a.approx {
        let tol = a.abs_tol.unwrap_or(0.0).max(a.rel_tol.unwrap_or(0.0) * target.abs());
        passed &= num.is_some_and(|x| (x - target).abs() <= tol);
    }
    if let Some(lo) = a.min {
        passed &= num.is_some_and(|x| x >= lo);
    }
    if let Some(hi) = a.max {
        passed &= num.is_some_and(|x| x <= hi);
    }
    AssertionResult {
        path: a.path.clone(),
        actual,
        passed,
    }
}

/// Rounds a float to 12 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// Rounds every float in a JSON tree to 12 significant digits.
pub fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .map(|x| serde_json::Number::from_f64(round_sig(x)).map_or(Value::Null, Value::Number))
            .unwrap_or(Value::Null),
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

/// Stable JSON text of a report (sorted keys, rounded floats).
pub fn report_json(r: &RunReport) -> Result<String> {
    let v = round_json(serde_json::to_value(r)?);
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

pub fn summary_csv(reports: &[RunReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["name", "command", "status", "key_metric", "wall_time_ms"])?;
    for r in reports {
        w.write_record([
            r.scenario.name.as_str(),
            r.scenario.command.as_str(),
            r.status.as_str(),
            &match &r.key_metric {
                Value::Null => String::new(),
                v => v.to_string(),
            },
            &format!("{:.1}", r.wall_time_ms),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
}

/// Writes `<name>.report.json` per scenario and `summary.csv` into `dir`.
pub fn write_reports(dir: &Path, reports: &[RunReport]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for r in reports {
        fs::write(dir.join(format!("{}.report.json", r.scenario.name)), report_json(r)?)?;
    }
    fs::write(dir.join("summary.csv"), summary_csv(reports)?)?;
    Ok(())
}

/// `0` when every report passed or its hypothesis was not met, else `1`.
pub fn exit_code(reports: &[RunReport]) -> i32 {
    if reports.iter().any(|r| r.status == Status::Fail) {
        1
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_config;

    fn scenario(body: &str) -> Scenario {
        parse_config(&format!(r#"{{"scenarios": [{body}]}}"#)).unwrap().remove(0)
    }

    #[test]
    fn rounding() {
        assert_eq!(round_sig(0.1 + 0.2), 0.3);
        assert_eq!(round_sig(1.0 / 3.0), 0.333333333333);
        assert_eq!(round_sig(0.0), 0.0);
        let v = round_json(json!({"a": [1.0 / 3.0, 2], "b": {"c": -2e-20 / 3.0}}));
        assert_eq!(v, json!({"a": [0.333333333333, 2], "b": {"c": -6.66666666667e-21}}));
    }

    #[test]
    fn empty_run() {
        assert!(run(&[]).is_empty());
        assert_eq!(exit_code(&[]), 0);
    }

    #[test]
    fn conditions_table() {
        let s = scenario(
            r#"{"name": "c", "domain": {"kind": "flat_torus2", "resolution": 4},
                "map": {"kind": "clifford_torus"},
                "profile": {"kind": "exp_affine", "parameters": {"alpha": 3, "beta": 0.3333333333333333, "gamma": 1, "delta": 0}},
                "command": "conditions",
                "options": {"conditions": [{"kind": "index_identity", "m": 3}]},
                "expect": [{"path": "/conditions/0/holds", "equals": true},
                           {"path": "/conditions/0/value", "approx": 0.333333333333, "abs_tol": 1e-10}]}"#,
        );
        let r = run_one(&s);
        assert_eq!(r.status, Status::Pass, "{:?}", r.assertions);
        assert_eq!(r.payload["conditions"].as_array().unwrap().len(), 1);
    }

    #[test]
    fn failed_assertion_sets_fail() {
        let s = scenario(
            r#"{"name": "c", "domain": {"kind": "flat_torus2", "resolution": 4},
                "map": {"kind": "clifford_torus"}, "profile": {"kind": "linear"},
                "command": "conditions", "expect": [{"path": "/conditions/0/value", "min": 100}]}"#,
        );
        let r = run_one(&s);
        assert_eq!(r.status, Status::Fail);
        assert_eq!(exit_code(&[r]), 1);
    }

    #[test]
    fn module_errors_become_fail() {
        let s = scenario(
            r#"{"name": "bad", "domain": {"kind": "round_sphere2", "resolution": 1},
                "map": {"kind": "clifford_torus"}, "profile": {"kind": "linear"}, "command": "stress"}"#,
        );
        let r = run_one(&s);
        assert_eq!(r.status, Status::Fail);
        assert!(r.error.unwrap().contains("torus"));
    }

    #[test]
    fn non_critical_verify_is_hypothesis_not_met() {
        let s = scenario(
            r#"{"name": "v", "domain": {"kind": "flat_torus2", "resolution": 8},
                "map": {"kind": "clifford_torus", "perturbation": {"seed": 1, "amplitude": 0.3}},
                "profile": {"kind": "sqrt_shift"}, "command": "verify"}"#,
        );
        let r = run_one(&s);
        assert_eq!(r.status, Status::HypothesisNotMet);
        assert_eq!(exit_code(&[r]), 0);
    }

    #[test]
    fn summary_has_expected_columns() {
        let s = scenario(
            r#"{"name": "c", "domain": {"kind": "flat_torus2", "resolution": 4},
                "map": {"kind": "clifford_torus"}, "profile": {"kind": "linear"}, "command": "conditions"}"#,
        );
        let csv = summary_csv(&run(&[s])).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("name,command,status,key_metric,wall_time_ms"));
        assert!(lines.next().unwrap().starts_with("c,conditions,pass,"));
    }
}
