//! Browser bindings: Pareto front and hypervolume of a point set, an EHVI
//! heat map, and a short optimization run on a small synthetic landscape.
//! Every function takes and returns JSON strings.

use std::path::Path;

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use seqmobo::acquisition::{ehvi_2d, AcquisitionContext};
use seqmobo::config::RunConfig;
use seqmobo::engine::{front_indices, hv_trace, run};
use seqmobo::pareto::{default_reference, hypervolume, pareto_indices};

const TOY: &str = r#"
seed = 0
n_init = 8
[space]
parental = "QVQLVESGGGLVQPGG"
max_mutations = 4
allowed = { "1" = "AILV", "4" = "STQ", "7" = "ADE", "9" = "YWF", "12" = "KRQ", "15" = "AST" }
[ga]
population_size = 16
generations = 4
[acquisition]
mc_samples = 32
[[oracles]]
name = "affinity"
kind = "random-pwm"
direction = "maximize"
seed = 11
[[oracles]]
name = "stability"
kind = "random-pwm"
direction = "maximize"
seed = 12
correlate_with = "affinity"
correlation = -0.7
"#;

fn err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn points_from(text: &str) -> Result<Vec<Vec<f64>>, String> {
    serde_json::from_str(text).map_err(|e| format!("expected an array of points: {e}"))
}

/// `points`: `[[x, y, ...], ...]`, larger is better. Returns the front
/// indices, the automatic reference point and the hypervolume.
pub fn front_summary(points: &str) -> Result<String, String> {
    let pts = points_from(points)?;
    if pts.is_empty() {
        return Ok(json!({"front": [], "reference": null, "hypervolume": 0.0}).to_string());
    }
    let reference = default_reference(&pts).map_err(|e| e.to_string())?;
    let hv = hypervolume(&pts, &reference.0).map_err(|e| e.to_string())?;
    Ok(json!({"front": pareto_indices(&pts), "reference": reference.0, "hypervolume": hv}).to_string())
}

/// EHVI over a `resolution` × `resolution` grid of predicted means on
/// `[0, 1]²` with a common standard deviation, for a two-objective front
/// and a reference at the origin. Rows run along the second objective.
pub fn ehvi_grid(front: &str, std: f64, resolution: usize) -> Result<String, String> {
    let pts = points_from(front)?;
    if !(std > 0.0) || !std.is_finite() {
        return Err("std must be positive".into());
    }
    let n = resolution.clamp(2, 200);
    let ctx = AcquisitionContext::new(&pts, vec![0.0, 0.0], 1, 0).map_err(|e| e.to_string())?;
    let mut rows = Vec::with_capacity(n);
    for j in 0..n {
        let y = j as f64 / (n - 1) as f64;
        let mut row = Vec::with_capacity(n);
        for i in 0..n {
            let x = i as f64 / (n - 1) as f64;
            row.push(ehvi_2d(&[x, y], &[std, std], &ctx).map_err(|e| e.to_string())?);
        }
        rows.push(row);
    }
    Ok(json!({"resolution": n, "values": rows}).to_string())
}

/// Runs `method` on the built-in two-objective landscape and returns the
/// evaluations, the final front and the hypervolume trace.
pub fn toy_run(method: &str, seed: u64, budget: usize) -> Result<String, String> {
    let overrides = [
        format!("method={}", Value::from(method)),
        format!("seed={seed}"),
        format!("budget={}", budget.clamp(8, 200)),
    ];
    let cfg = RunConfig::from_toml_str(TOY, &overrides, Path::new(".")).map_err(|e| e.to_string())?;
    let log = run(&cfg).into_result().map_err(|e| e.to_string())?;
    let reference = log.reference.clone().ok_or("run produced no reference point")?;
    let trace: Vec<f64> =
        hv_trace(&log.evaluations, &reference).map_err(|e| e.to_string())?.iter().map(|p| p.hypervolume).collect();
    let evaluations: Vec<Value> = log
        .evaluations
        .iter()
        .map(|e| json!({"sequence": e.sequence.as_str(), "phase": e.phase.to_string(), "scores": e.scores.0}))
        .collect();
    Ok(json!({
        "evaluations": evaluations,
        "front": front_indices(&log.evaluations),
        "reference": reference.0,
        "hypervolume": trace,
    })
    .to_string())
}

#[wasm_bindgen(js_name = frontSummary)]
pub fn front_summary_js(points: &str) -> Result<String, JsValue> {
    front_summary(points).map_err(err)
}

#[wasm_bindgen(js_name = ehviGrid)]
pub fn ehvi_grid_js(front: &str, std: f64, resolution: usize) -> Result<String, JsValue> {
    ehvi_grid(front, std, resolution).map_err(err)
}

#[wasm_bindgen(js_name = toyRun)]
pub fn toy_run_js(method: &str, seed: u32, budget: usize) -> Result<String, JsValue> {
    toy_run(method, seed as u64, budget).map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn front_of_three_points() {
        let v = parse(&front_summary("[[1, 0], [0, 1], [0.2, -0.5]]").unwrap());
        assert_eq!(v["front"], json!([0, 1]));
        let reference: Vec<f64> = serde_json::from_value(v["reference"].clone()).unwrap();
        let hv = v["hypervolume"].as_f64().unwrap();
        let expected = (1.0 - reference[0]) * (0.0 - reference[1]) + (0.0 - reference[0]) * (1.0 - reference[1])
            - (0.0 - reference[0]) * (0.0 - reference[1]);
        assert!((hv - expected).abs() < 1e-12);
    }

    #[test]
    fn bad_input_is_an_error() {
        assert!(front_summary("not json").is_err());
        assert!(ehvi_grid("[[0.5, 0.5]]", 0.0, 10).is_err());
    }

    #[test]
    fn grid_is_zero_deep_inside_the_dominated_region() {
        let v = parse(&ehvi_grid("[[0.9, 0.9]]", 1e-6, 11).unwrap());
        let values = &v["values"];
        assert_eq!(values.as_array().unwrap().len(), 11);
        assert!(values[2][2].as_f64().unwrap() < 1e-12);
        assert!(values[10][10].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn toy_run_spends_its_budget() {
        let v = parse(&toy_run("boat-ehvi", 1, 16).unwrap());
        assert_eq!(v["evaluations"].as_array().unwrap().len(), 16);
        assert_eq!(v["hypervolume"].as_array().unwrap().len(), 16);
        assert!(toy_run("no-such-method", 1, 16).is_err());
    }
}
