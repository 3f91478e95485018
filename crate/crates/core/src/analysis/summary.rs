//! Regularity and performance indicators of a pair of runs.

use serde::{Deserialize, Serialize};

use crate::hybrid::RunLog;

/// Row labels, in table order.
pub const ROW_LABELS: [&str; 5] = [
    "Successful steps",
    "Terminal pre-impact speed",
    "Mean |eta_s|",
    "min sigma_min(A)",
    "min ||M_s||",
];

/// Values reported for the published surrogate model, `(open-loop, controlled)`.
pub const PAPER_REFERENCE: [(f64, f64); 5] = [
    (29.0, 50.0),
    (0.2565, 0.5964),
    (0.6505, 0.0041),
    (0.4417, 0.4417),
    (1.0106, 1.0106),
];

/// Indicators of one run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CaseSummary {
    pub successful_steps: usize,
    pub terminal_pre_impact_speed: f64,
    pub mean_abs_eta_s: f64,
    pub min_sigma_min_a: f64,
    pub min_norm_ms: f64,
}

impl CaseSummary {
    pub fn from_log(log: &RunLog) -> Self {
        let successful_steps = log.successful_steps();
        let terminal_pre_impact_speed =
            log.steps.iter().rev().find(|s| s.success).map_or(0.0, |s| s.pre_impact_speed);
        let samples: usize = log.steps.iter().map(|s| s.samples).sum();
        let mean_abs_eta_s = if samples == 0 {
            0.0
        } else {
            log.steps.iter().map(|s| s.mean_abs_eta_s * s.samples as f64).sum::<f64>() / samples as f64
        };
        let min_of = |f: &dyn Fn(&crate::hybrid::StepRecord) -> f64| {
            let m = log.steps.iter().filter(|s| s.samples > 0).map(f).filter(|v| !v.is_nan()).fold(f64::INFINITY, f64::min);
            if m.is_finite() { m } else { 0.0 }
        };
        Self {
            successful_steps,
            terminal_pre_impact_speed,
            mean_abs_eta_s,
            min_sigma_min_a: min_of(&|s| s.min_sigma_min_a),
            min_norm_ms: min_of(&|s| s.min_norm_ms),
        }
    }

    pub fn values(&self) -> [f64; 5] {
        [
            self.successful_steps as f64,
            self.terminal_pre_impact_speed,
            self.mean_abs_eta_s,
            self.min_sigma_min_a,
            self.min_norm_ms,
        ]
    }
}

/// Side-by-side indicators of the open-loop and controlled runs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub open_loop: CaseSummary,
    pub controlled: CaseSummary,
}

pub fn summarize(controlled: &RunLog, open_loop: &RunLog) -> Summary {
    Summary { open_loop: CaseSummary::from_log(open_loop), controlled: CaseSummary::from_log(controlled) }
}

fn fmt_value(row: usize, v: f64) -> String {
    if row == 0 {
        format!("{}", v as usize)
    } else {
        format!("{v}")
    }
}

impl Summary {
    /// CSV with the published values alongside.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("quantity,open_loop,controlled,paper_open_loop,paper_controlled\n");
        let (o, c) = (self.open_loop.values(), self.controlled.values());
        for (i, label) in ROW_LABELS.iter().enumerate() {
            let (po, pc) = PAPER_REFERENCE[i];
            s.push_str(&format!("{label},{},{},{},{}\n", fmt_value(i, o[i]), fmt_value(i, c[i]), fmt_value(i, po), fmt_value(i, pc)));
        }
        s
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let (o, c) = (self.open_loop.values(), self.controlled.values());
        let mut s = format!(
            "{:<28}{:>14}{:>14}{:>16}{:>16}\n",
            "Quantity", "Open-loop", "Controlled", "Paper open", "Paper ctrl"
        );
        for (i, label) in ROW_LABELS.iter().enumerate() {
            let (po, pc) = PAPER_REFERENCE[i];
            let cell = |v: f64| if i == 0 { format!("{}", v as usize) } else { format!("{v:.4}") };
            s.push_str(&format!("{:<28}{:>14}{:>14}{:>16}{:>16}\n", label, cell(o[i]), cell(c[i]), cell(po), cell(pc)));
        }
        s
    }
}
