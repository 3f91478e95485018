//! Browser demo: walk the biped under a slip schedule, inspect the
//! transverse spectrum of a gain choice, and draw the nominal gait.
//!
//! Every export returns a JSON string; the page in `www/` plots it.

use serde::Serialize;
use slipgait::analysis::transverse_matrix;
use slipgait::gait::NY;
use slipgait::hybrid::run_steps;
use slipgait::{ControllerMode, Gains, RunConfig};
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct StepPoint {
    pub step: usize,
    pub slip_level: f64,
    pub speed: f64,
    pub mean_abs_eta_s: f64,
    pub success: bool,
}

#[derive(Debug, Serialize)]
pub struct WalkResult {
    pub mode: String,
    pub successful_steps: usize,
    pub failure: Option<String>,
    pub steps: Vec<StepPoint>,
    /// `(t, x, y)` of the hip, decimated for drawing.
    pub hip: Vec<[f64; 3]>,
    /// Joint positions `[hip, torso tip, stance knee, stance foot, swing knee, swing foot]`
    /// per decimated sample, world frame.
    pub poses: Vec<[[f64; 2]; 6]>,
}

fn parse_mode(mode: &str) -> Result<ControllerMode, String> {
    match mode {
        "controlled" => Ok(ControllerMode::Controlled),
        "open-loop" => Ok(ControllerMode::OpenLoop),
        other => Err(format!("unknown mode '{other}'")),
    }
}

/// Walks `n_steps` on the nominal gait with every slip level scaled by `slip_scale`.
pub fn walk(mode: &str, n_steps: usize, slip_scale: f64, kp: f64) -> Result<WalkResult, String> {
    let mode = parse_mode(mode)?;
    if n_steps > 200 {
        return Err("at most 200 steps".into());
    }
    let mut cfg = RunConfig::nominal(mode, n_steps).map_err(|e| e.to_string())?;
    cfg.slip.s_levels.iter_mut().for_each(|s| *s *= slip_scale);
    cfg.gains = Gains::scalar(cfg.gains.k_s, kp, cfg.gains.kd[(0, 0)]).map_err(|e| e.to_string())?;
    cfg.dense = true;
    let log = run_steps(&cfg);

    let steps = log
        .steps
        .iter()
        .map(|s| StepPoint {
            step: s.step_index,
            slip_level: s.slip_level,
            speed: s.pre_impact_speed,
            mean_abs_eta_s: s.mean_abs_eta_s,
            success: s.success,
        })
        .collect();
    const EVERY: usize = 20;
    let hip = log.hip_path.iter().step_by(EVERY).copied().collect();
    let poses = log
        .dense
        .iter()
        .flatten()
        .step_by(EVERY)
        .map(|d| {
            let mut p = cfg.model.joint_positions(&d.sample.state.q);
            for point in &mut p {
                point[0] += d.frame_x;
            }
            p
        })
        .collect();
    Ok(WalkResult {
        mode: mode.to_string(),
        successful_steps: log.successful_steps(),
        failure: log.failure().and_then(|s| s.reason.clone()),
        steps,
        hip,
        poses,
    })
}

#[derive(Debug, Serialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<[f64; 2]>,
    pub hurwitz: bool,
    pub slowest_rate: f64,
}

/// Eigenvalues of the transverse matrix for scalar gains.
pub fn spectrum(k_s: f64, kp: f64, kd: f64) -> Result<Spectrum, String> {
    let g = Gains::scalar(k_s, kp, kd).map_err(|e| e.to_string())?;
    let spec = transverse_matrix(&g);
    let slowest_rate = spec.eigenvalues.iter().map(|e| -e.re).fold(f64::INFINITY, f64::min);
    Ok(Spectrum {
        eigenvalues: spec.eigenvalues.iter().map(|e| [e.re, e.im]).collect(),
        hurwitz: spec.hurwitz,
        slowest_rate,
    })
}

#[derive(Debug, Serialize)]
pub struct GaitCurves {
    pub theta: Vec<f64>,
    /// One curve per output, `NY` rows.
    pub outputs: Vec<Vec<f64>>,
    pub labels: Vec<&'static str>,
}

/// Desired outputs of the nominal gait sampled over the phase.
pub fn gait_curves(samples: usize) -> Result<GaitCurves, String> {
    let cfg = RunConfig::nominal(ControllerMode::Controlled, 0).map_err(|e| e.to_string())?;
    let n = samples.clamp(2, 1000);
    let theta: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let mut outputs = vec![Vec::with_capacity(n); NY];
    for &t in &theta {
        let (h, _, _) = cfg.gait.desired(t).map_err(|e| e.to_string())?;
        for i in 0..NY {
            outputs[i].push(h[i]);
        }
    }
    let labels = vec!["stance foot height", "torso pitch", "stance hip", "stance knee", "swing hip", "swing knee"];
    Ok(GaitCurves { theta, outputs, labels })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string())).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = walk)]
pub fn walk_js(mode: &str, n_steps: u32, slip_scale: f64, kp: f64) -> Result<String, JsValue> {
    to_js(walk(mode, n_steps as usize, slip_scale, kp))
}

#[wasm_bindgen(js_name = spectrum)]
pub fn spectrum_js(k_s: f64, kp: f64, kd: f64) -> Result<String, JsValue> {
    to_js(spectrum(k_s, kp, kd))
}

#[wasm_bindgen(js_name = gaitCurves)]
pub fn gait_curves_js(samples: u32) -> Result<String, JsValue> {
    to_js(gait_curves(samples as usize))
}
