//! Experiment configuration files.
//!
//! `model` and `gait` may be given inline or as a path to a JSON file,
//! resolved relative to the directory of the configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use slipgait::hybrid::{ImpactMode, SimOptions};
use slipgait::{ControllerMode, GaitSpec, Gains, Model, ModelParams, RunConfig, SlipSchedule};

use crate::error::CliError;

/// Which controllers a run compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Controlled,
    OpenLoop,
    #[default]
    Both,
}

impl RunMode {
    pub fn controllers(self) -> Vec<ControllerMode> {
        match self {
            RunMode::Controlled => vec![ControllerMode::Controlled],
            RunMode::OpenLoop => vec![ControllerMode::OpenLoop],
            RunMode::Both => vec![ControllerMode::Controlled, ControllerMode::OpenLoop],
        }
    }
}

/// A value given inline or by file reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(PathBuf),
    Inline(T),
}

/// Optional simulation overrides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Simulation {
    #[serde(default)]
    pub impact: ImpactMode,
    #[serde(default = "default_max_stance_time")]
    pub max_stance_time: f64,
}

fn default_max_stance_time() -> f64 {
    SimOptions::default().max_stance_time
}

impl Default for Simulation {
    fn default() -> Self {
        Self { impact: ImpactMode::default(), max_stance_time: default_max_stance_time() }
    }
}

/// Configuration document as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_model")]
    pub model: Source<ModelParams>,
    pub gait: Source<GaitSpec>,
    #[serde(default)]
    pub slip: SlipSchedule,
    #[serde(default)]
    pub gains: Gains,
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
    #[serde(default)]
    pub dense_logging: bool,
    /// Seed for randomized test utilities; the simulation is deterministic.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub simulation: Simulation,
}

fn default_model() -> Source<ModelParams> {
    Source::Inline(ModelParams::default())
}

fn default_steps() -> usize {
    50
}

fn default_outputs() -> PathBuf {
    PathBuf::from("out")
}

/// A configuration with every reference resolved and every part validated.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: Model,
    pub gait: GaitSpec,
    pub slip: SlipSchedule,
    pub gains: Gains,
    pub mode: RunMode,
    pub n_steps: usize,
    pub outputs: PathBuf,
    pub dense_logging: bool,
    pub seed: u64,
    pub simulation: Simulation,
}

fn parse_json<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::from_json(path, &e))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn resolve<T: DeserializeOwned + Clone>(src: &Source<T>, base: &Path) -> Result<T, CliError> {
    match src {
        Source::Inline(v) => Ok(v.clone()),
        Source::Path(p) => {
            let path = base.join(p);
            parse_json(&read(&path)?, &path)
        }
    }
}

/// Reads, resolves and validates a configuration file.
pub fn load_config(path: &Path) -> Result<Experiment, CliError> {
    let doc: ExperimentConfig = parse_json(&read(path)?, path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let params = resolve(&doc.model, base)?;
    let model = Model::new(params).map_err(|e| CliError::Validation(format!("model: {e}")))?;
    let gait = resolve(&doc.gait, base)?;
    gait.validate().map_err(|e| CliError::Validation(format!("gait: {e}")))?;
    doc.slip.validate().map_err(|e| CliError::Validation(format!("slip: {e}")))?;
    let sim = doc.simulation;
    if !(sim.max_stance_time.is_finite() && sim.max_stance_time > 0.0) {
        return Err(CliError::Validation("simulation.max_stance_time must be positive".into()));
    }
    Ok(Experiment {
        model,
        gait,
        slip: doc.slip,
        gains: doc.gains,
        mode: doc.mode,
        n_steps: doc.n_steps,
        outputs: doc.outputs,
        dense_logging: doc.dense_logging,
        seed: doc.seed,
        simulation: sim,
    })
}

impl Experiment {
    pub fn run_config(&self, mode: ControllerMode) -> RunConfig {
        let options = SimOptions {
            impact: self.simulation.impact,
            max_stance_time: self.simulation.max_stance_time,
            ..SimOptions::default()
        };
        RunConfig {
            model: self.model.clone(),
            gait: self.gait.clone(),
            slip: self.slip.clone(),
            gains: self.gains.clone(),
            mode,
            n_steps: self.n_steps,
            dense: self.dense_logging,
            options,
        }
    }

    /// The configuration with all references inlined.
    pub fn resolved(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: Source::Inline(self.model.params().clone()),
            gait: Source::Inline(self.gait.clone()),
            slip: self.slip.clone(),
            gains: self.gains.clone(),
            mode: self.mode,
            n_steps: self.n_steps,
            outputs: self.outputs.clone(),
            dense_logging: self.dense_logging,
            seed: self.seed,
            simulation: self.simulation,
        }
    }

    pub fn resolved_json(&self) -> serde_json::Value {
        serde_json::to_value(self.resolved()).expect("configuration serializes")
    }
}
