//! CSV and text artifacts.
//!
//! Floats are written with Rust's shortest round-trip formatting, so parsing
//! a file back yields bit-identical values (`NaN` included).

use std::fs;
use std::path::Path;

use slipgait::analysis::Summary;
use slipgait::dynamics::NQ;
use slipgait::gait::NY;
use slipgait::{ControllerMode, RunLog, SlipSchedule, StepRecord};

use crate::error::CliError;

pub const STEP_HEADER: [&str; 9] = [
    "step",
    "pre_impact_speed",
    "mean_abs_eta_s",
    "min_sigma_min_A",
    "min_norm_Ms",
    "post_reset_residual",
    "stance_duration",
    "success",
    "reason",
];

/// File-name tag of a controller mode.
pub fn mode_tag(mode: ControllerMode) -> &'static str {
    match mode {
        ControllerMode::Controlled => "controlled",
        ControllerMode::OpenLoop => "openloop",
        ControllerMode::SlipOnly => "sliponly",
    }
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    let bytes = w.into_inner().expect("in-memory writer");
    String::from_utf8(bytes).expect("utf-8 output")
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn write_row<I, S>(w: &mut csv::Writer<Vec<u8>>, row: I)
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(row).expect("in-memory writer");
}

/// Step table of one run.
pub fn steps_csv(log: &RunLog) -> String {
    let mut w = writer();
    write_row(&mut w, STEP_HEADER);
    for s in &log.steps {
        write_row(
            &mut w,
            [
                s.step_index.to_string(),
                num(s.pre_impact_speed),
                num(s.mean_abs_eta_s),
                num(s.min_sigma_min_a),
                num(s.min_norm_ms),
                num(s.post_reset_residual),
                num(s.stance_duration),
                s.success.to_string(),
                s.reason.clone().unwrap_or_default(),
            ],
        );
    }
    finish(w)
}

pub fn dense_header() -> Vec<String> {
    let mut h = vec!["step".to_string(), "t".to_string()];
    h.extend((0..NQ).map(|i| format!("q{i}")));
    h.extend((0..NQ).map(|i| format!("dq{i}")));
    h.extend((0..NQ).map(|i| format!("u{i}")));
    h.extend(["lambda_t".to_string(), "lambda_n".to_string()]);
    h.extend((0..NY).map(|i| format!("y{i}")));
    h.push("eta_s".to_string());
    h
}

/// Sampled trajectory of one run, in step-frame coordinates.
pub fn dense_csv(log: &RunLog) -> Option<String> {
    let dense = log.dense.as_ref()?;
    let mut w = writer();
    write_row(&mut w, dense_header());
    for d in dense {
        let s = &d.sample;
        let mut row = vec![d.step.to_string(), num(s.t)];
        row.extend(s.state.q.iter().map(|v| num(*v)));
        row.extend(s.state.dq.iter().map(|v| num(*v)));
        row.extend(s.u.iter().map(|v| num(*v)));
        row.extend([num(s.lambda.lambda_t), num(s.lambda.lambda_n)]);
        row.extend(s.y.iter().map(|v| num(*v)));
        row.push(num(s.eta_s));
        write_row(&mut w, row);
    }
    Some(finish(w))
}

/// Per-step slip level, pre-impact speed per mode and controlled `|eta_s|`.
///
/// Cells are empty for steps a run did not reach.
pub fn variable_slip_csv(slip: &SlipSchedule, controlled: Option<&RunLog>, open_loop: Option<&RunLog>) -> String {
    let mut w = writer();
    write_row(
        &mut w,
        ["step", "slip_level", "speed_controlled", "speed_open_loop", "mean_abs_eta_s_controlled"],
    );
    let len = |l: Option<&RunLog>| l.map_or(0, |l| l.steps.len());
    let n = len(controlled).max(len(open_loop));
    let cell = |s: Option<&StepRecord>, f: fn(&StepRecord) -> f64| s.map(|s| num(f(s))).unwrap_or_default();
    for k in 0..n {
        let (c, o) = (controlled.and_then(|l| l.steps.get(k)), open_loop.and_then(|l| l.steps.get(k)));
        write_row(
            &mut w,
            [
                (k + 1).to_string(),
                num(slip.level(k + 1)),
                cell(c, |s| s.pre_impact_speed),
                cell(o, |s| s.pre_impact_speed),
                cell(c, |s| s.mean_abs_eta_s),
            ],
        );
    }
    finish(w)
}

/// Hip trajectory in the world frame, long format.
pub fn hip_path_csv(logs: &[&RunLog]) -> String {
    let mut w = writer();
    write_row(&mut w, ["mode", "t", "hip_x", "hip_y"]);
    for log in logs {
        let tag = log.mode.map_or("unknown", mode_tag);
        for [t, x, y] in &log.hip_path {
            write_row(&mut w, [tag.to_string(), num(*t), num(*x), num(*y)]);
        }
    }
    finish(w)
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(CliError::io(&path))
}

pub fn write_summary(dir: &Path, summary: &Summary) -> Result<(), CliError> {
    write_file(dir, "summary.csv", &summary.to_csv())?;
    write_file(dir, "summary.txt", &summary.to_text())
}

/// One row of a step table as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub pre_impact_speed: f64,
    pub mean_abs_eta_s: f64,
    pub min_sigma_min_a: f64,
    pub min_norm_ms: f64,
    pub post_reset_residual: f64,
    pub stance_duration: f64,
    pub success: bool,
    pub reason: Option<String>,
}

impl StepRow {
    pub fn from_record(s: &StepRecord) -> Self {
        Self {
            step: s.step_index,
            pre_impact_speed: s.pre_impact_speed,
            mean_abs_eta_s: s.mean_abs_eta_s,
            min_sigma_min_a: s.min_sigma_min_a,
            min_norm_ms: s.min_norm_ms,
            post_reset_residual: s.post_reset_residual,
            stance_duration: s.stance_duration,
            success: s.success,
            reason: s.reason.clone(),
        }
    }

    /// Field-wise equality with NaN equal to NaN.
    pub fn same_as(&self, other: &Self) -> bool {
        let eq = |a: f64, b: f64| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan());
        self.step == other.step
            && eq(self.pre_impact_speed, other.pre_impact_speed)
            && eq(self.mean_abs_eta_s, other.mean_abs_eta_s)
            && eq(self.min_sigma_min_a, other.min_sigma_min_a)
            && eq(self.min_norm_ms, other.min_norm_ms)
            && eq(self.post_reset_residual, other.post_reset_residual)
            && eq(self.stance_duration, other.stance_duration)
            && self.success == other.success
            && self.reason == other.reason
    }
}

fn bad(what: &str) -> CliError {
    CliError::Validation(format!("malformed CSV: {what}"))
}

fn float(field: &str) -> Result<f64, CliError> {
    field.parse().map_err(|_| bad(field))
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().from_reader(text.as_bytes())
}

/// Parses a step table written by [`steps_csv`].
pub fn parse_steps_csv(text: &str) -> Result<Vec<StepRow>, CliError> {
    let mut r = reader(text);
    let header = r.headers().map_err(|e| bad(&e.to_string()))?;
    if header.iter().ne(STEP_HEADER) {
        return Err(bad("unexpected step header"));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(&e.to_string()))?;
        let f = |i: usize| float(&rec[i]);
        rows.push(StepRow {
            step: rec[0].parse().map_err(|_| bad(&rec[0]))?,
            pre_impact_speed: f(1)?,
            mean_abs_eta_s: f(2)?,
            min_sigma_min_a: f(3)?,
            min_norm_ms: f(4)?,
            post_reset_residual: f(5)?,
            stance_duration: f(6)?,
            success: rec[7].parse().map_err(|_| bad(&rec[7]))?,
            reason: (!rec[8].is_empty()).then(|| rec[8].to_string()),
        });
    }
    Ok(rows)
}

/// Parses a dense trajectory file into `(step, values)` rows, values in header order after `step`.
pub fn parse_dense_csv(text: &str) -> Result<Vec<(usize, Vec<f64>)>, CliError> {
    let mut r = reader(text);
    let header = r.headers().map_err(|e| bad(&e.to_string()))?;
    if header.iter().ne(dense_header().iter().map(String::as_str)) {
        return Err(bad("unexpected dense header"));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(&e.to_string()))?;
        let step = rec[0].parse().map_err(|_| bad(&rec[0]))?;
        let vals = rec.iter().skip(1).map(float).collect::<Result<Vec<_>, _>>()?;
        rows.push((step, vals));
    }
    Ok(rows)
}
