//! The three subcommands, callable without a process boundary.

use std::fs;
use std::path::Path;

use slipgait::analysis::fit::nominal_speed;
use slipgait::analysis::poincare::seed_from_first_step;
use slipgait::analysis::{
    find_fixed_point, fit_nominal_gait, linearize_poincare, summarize, FitTargets, PoincareResult, ReturnMap, Summary,
};
use slipgait::hybrid::run_steps;
use slipgait::slip::PAPER_A_ROW;
use slipgait::{ControllerMode, Error, GaitSpec, Model, RunLog};

use crate::config::Experiment;
use crate::error::{CliError, Exit};
use crate::output::{self, mode_tag, write_file};

/// Finite-difference step of the return-map Jacobian.
pub const JACOBIAN_STEP: f64 = 1e-6;

/// Logs and outcome of `run`.
#[derive(Debug)]
pub struct RunReport {
    pub controlled: Option<RunLog>,
    pub open_loop: Option<RunLog>,
    pub summary: Option<Summary>,
    pub exit: Exit,
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn echo_config(exp: &Experiment, dir: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(&exp.resolved_json()).expect("configuration serializes");
    write_file(dir, "config_resolved.json", &format!("{text}\n"))
}

/// Runs the requested modes and writes the step tables, figure data and summary into `dir`.
pub fn cmd_run(exp: &Experiment, dir: &Path) -> Result<RunReport, CliError> {
    create_dir(dir)?;
    echo_config(exp, dir)?;
    let modes = exp.mode.controllers();
    let echo = exp.resolved_json();
    let mut logs: Vec<RunLog> = std::thread::scope(|s| {
        let handles: Vec<_> = modes
            .iter()
            .map(|&m| {
                let cfg = exp.run_config(m);
                s.spawn(move || run_steps(&cfg))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    for log in &mut logs {
        log.config_echo = echo.clone();
    }

    let mut exit = Exit::Success;
    for log in &logs {
        let mode = log.mode.expect("run logs carry their mode");
        let tag = mode_tag(mode);
        write_file(dir, &format!("steps_{tag}.csv"), &output::steps_csv(log))?;
        if let Some(dense) = output::dense_csv(log) {
            write_file(dir, &format!("dense_{tag}.csv"), &dense)?;
        }
        if log.completed(exp.n_steps) {
            log::info!("{mode}: {} steps completed", exp.n_steps);
        } else {
            let failed = log.failure().map(|s| (s.step_index, s.reason.clone().unwrap_or_default()));
            log::warn!("{mode}: gait lost after {} steps {failed:?}", log.successful_steps());
            exit = Exit::GaitFailure;
        }
    }

    let find = |m: ControllerMode| logs.iter().position(|l| l.mode == Some(m));
    let (ci, oi) = (find(ControllerMode::Controlled), find(ControllerMode::OpenLoop));
    let controlled = ci.map(|i| &logs[i]);
    let open_loop = oi.map(|i| &logs[i]);
    write_file(dir, "fig_variableslip.csv", &output::variable_slip_csv(&exp.slip, controlled, open_loop))?;
    let all: Vec<&RunLog> = logs.iter().collect();
    write_file(dir, "fig_hippath.csv", &output::hip_path_csv(&all))?;
    let summary = match (controlled, open_loop) {
        (Some(c), Some(o)) => {
            let s = summarize(c, o);
            output::write_summary(dir, &s)?;
            Some(s)
        }
        _ => None,
    };

    let mut take = |i: Option<usize>| i.map(|i| std::mem::take(&mut logs[i]));
    let (controlled, open_loop) = (take(ci), take(oi));
    Ok(RunReport { controlled, open_loop, summary, exit })
}

/// Outcome of `stability`.
#[derive(Debug)]
pub struct StabilityReport {
    pub result: Option<PoincareResult>,
    /// Reason the analysis stopped early.
    pub error: Option<String>,
    pub exit: Exit,
}

fn poincare_analysis(exp: &Experiment) -> Result<PoincareResult, Error> {
    let mut cfg = exp.run_config(ControllerMode::Controlled);
    cfg.n_steps = 1;
    cfg.dense = false;
    let map = ReturnMap::new(&cfg, 0.0);
    let seed = seed_from_first_step(&map)?;
    let fixed = find_fixed_point(&map, &seed)?;
    linearize_poincare(&map, &fixed, JACOBIAN_STEP)
}

/// Fixed point and spectrum of the zero-slip return map; writes `poincare.json`.
pub fn cmd_stability(exp: &Experiment, dir: &Path) -> Result<StabilityReport, CliError> {
    create_dir(dir)?;
    echo_config(exp, dir)?;
    let report = match poincare_analysis(exp) {
        Ok(r) => {
            let exit = if r.stable { Exit::Success } else { Exit::Unstable };
            StabilityReport { result: Some(r), error: None, exit }
        }
        Err(e) => {
            log::warn!("stability analysis failed: {e}");
            StabilityReport { result: None, error: Some(e.to_string()), exit: Exit::NoFixedPoint }
        }
    };
    let json = match (&report.result, &report.error) {
        (Some(r), _) => r.to_json(),
        (None, err) => serde_json::json!({ "stable": false, "error": err }),
    };
    let text = serde_json::to_string_pretty(&json).expect("json value serializes");
    write_file(dir, "poincare.json", &format!("{text}\n"))?;
    Ok(report)
}

/// Fitted gait and the matching nominal slip reference.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub gait: GaitSpec,
    pub v_nom: f64,
}

/// Fits a nominal gait to task-space targets and writes it as JSON.
pub fn cmd_fit_gait(targets: &FitTargets, model: &Model, out: &Path) -> Result<FitReport, CliError> {
    let gait = fit_nominal_gait(targets, model)?;
    let v_nom = nominal_speed(&gait, &PAPER_A_ROW, targets.duration);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let text = serde_json::to_string_pretty(&gait).expect("gait serializes");
    fs::write(out, format!("{text}\n")).map_err(CliError::io(out))?;
    Ok(FitReport { gait, v_nom })
}
