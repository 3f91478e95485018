//! Offline construction of a nominal gait.
//!
//! A kinematically feasible step is built in task space (stationary stance
//! foot, level hip, smooth swing-foot arc), mapped to joint space by two-link
//! inverse kinematics and fitted with degree-5 Bézier rows. The endpoint
//! coefficients reproduce the trajectory's endpoint values and slopes
//! exactly; the two interior coefficients are a Simpson-weighted least-squares
//! fit.

use serde::{Deserialize, Serialize};

use crate::dynamics::{coord, Model, NQ};
use crate::error::{Error, Result};
use crate::gait::{bezier_eval, default_h_select, GaitSpec, NY};
use crate::slip::SlipSchedule;

const DEGREE: usize = 5;

/// Task-space targets of the constructed step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitTargets {
    pub step_length: f64,
    pub duration: f64,
    pub clearance: f64,
    #[serde(default = "default_hip_height")]
    pub hip_height: f64,
    #[serde(default = "default_torso_lean")]
    pub torso_lean: f64,
    /// Share of the swing arc shaped like a parabola; sets the touchdown slope.
    #[serde(default = "default_touchdown_share")]
    pub touchdown_share: f64,
    /// Odd number of fit samples over the step.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_hip_height() -> f64 {
    0.74
}
fn default_torso_lean() -> f64 {
    0.05
}
fn default_touchdown_share() -> f64 {
    0.1
}
fn default_samples() -> usize {
    201
}

impl Default for FitTargets {
    fn default() -> Self {
        Self {
            step_length: 0.35,
            duration: 0.5,
            clearance: 0.05,
            hip_height: default_hip_height(),
            torso_lean: default_torso_lean(),
            touchdown_share: default_touchdown_share(),
            samples: default_samples(),
        }
    }
}

/// Joint angles `(thigh, shank)` measured from the downward vertical for a
/// foot at `(dx, dy)` relative to the hip, knee bent forward.
fn leg_ik(dx: f64, dy: f64, l1: f64, l2: f64) -> Result<(f64, f64)> {
    let d = dx.hypot(dy);
    if d >= 0.999 * (l1 + l2) || d <= (l1 - l2).abs() + 1e-3 {
        return Err(Error::InfeasibleTargets(format!("foot at distance {d:.4} m from the hip is out of reach")));
    }
    let phi = dx.atan2(-dy);
    let beta = ((l1 * l1 + d * d - l2 * l2) / (2.0 * l1 * d)).acos();
    let gamma = ((l2 * l2 + d * d - l1 * l1) / (2.0 * l2 * d)).acos();
    Ok((phi + beta, phi - gamma))
}

/// Swing-foot position relative to the stance foot at phase `s`.
fn swing_foot(t: &FitTargets, s: f64) -> (f64, f64) {
    let l = t.step_length;
    let smooth = s * s * (3.0 - 2.0 * s);
    let bump = (1.0 - t.touchdown_share) * 16.0 * s * s * (1.0 - s) * (1.0 - s) + t.touchdown_share * 4.0 * s * (1.0 - s);
    (-l + 2.0 * l * smooth, t.clearance * bump)
}

/// Output values `h_select q` of the constructed trajectory at phase `s`.
fn reference_outputs(model: &Model, t: &FitTargets, s: f64) -> Result<[f64; NY]> {
    let (l1, l2) = (model.thigh_length(), model.shank_length());
    let x = -0.5 * t.step_length + t.step_length * s;
    let (st1, st2) = leg_ik(-x, -t.hip_height, l1, l2)?;
    let (fx, fy) = swing_foot(t, s);
    let (sw1, sw2) = leg_ik(fx - x, fy - t.hip_height, l1, l2)?;
    let lean = t.torso_lean;
    Ok([0.0, lean, st1 - lean, st2 - st1, sw1 - lean, sw2 - sw1])
}

fn check_targets(t: &FitTargets) -> Result<()> {
    let positive = [("step_length", t.step_length), ("duration", t.duration), ("clearance", t.clearance), ("hip_height", t.hip_height)];
    for (name, v) in positive {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InfeasibleTargets(format!("{name} must be positive")));
        }
    }
    if !(0.0..=1.0).contains(&t.touchdown_share) || t.torso_lean.abs() >= 0.5 {
        return Err(Error::InfeasibleTargets("touchdown_share or torso_lean out of range".into()));
    }
    if t.samples < 5 || t.samples % 2 == 0 {
        return Err(Error::InfeasibleTargets("samples must be odd and at least 5".into()));
    }
    Ok(())
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Fits a degree-5 Bézier gait to the constructed step.
pub fn fit_nominal_gait(targets: &FitTargets, model: &Model) -> Result<GaitSpec> {
    check_targets(targets)?;
    let n = targets.samples;
    let grid: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let samples: Vec<[f64; NY]> = grid.iter().map(|&s| reference_outputs(model, targets, s)).collect::<Result<_>>()?;
    for row in &samples {
        // Knee flexion must stay on the forward-bent branch and within a sane range.
        for &knee in &[row[3], row[5]] {
            if !(-2.5..0.0).contains(&knee) {
                return Err(Error::InfeasibleTargets(format!("knee angle {knee:.3} rad outside (-2.5, 0)")));
            }
        }
    }
    // The trajectory is smooth slightly beyond [0, 1], so endpoint slopes use central differences.
    let h = 1e-5;
    let slope = |s: f64| -> Result<[f64; NY]> {
        let p = reference_outputs(model, targets, s + h)?;
        let m = reference_outputs(model, targets, s - h)?;
        let p2 = reference_outputs(model, targets, s + 2.0 * h)?;
        let m2 = reference_outputs(model, targets, s - 2.0 * h)?;
        Ok(std::array::from_fn(|i| (8.0 * (p[i] - m[i]) - (p2[i] - m2[i])) / (12.0 * h)))
    };
    let d0 = slope(0.0)?;
    let d1 = slope(1.0)?;

    let weights: Vec<f64> = (0..n)
        .map(|i| {
            let w = if i == 0 || i == n - 1 { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            w / (3.0 * (n - 1) as f64)
        })
        .collect();
    let basis: Vec<[f64; DEGREE + 1]> = grid
        .iter()
        .map(|&s| std::array::from_fn(|i| binomial(DEGREE, i) * s.powi(i as i32) * (1.0 - s).powi((DEGREE - i) as i32)))
        .collect();

    let mut alpha = vec![vec![0.0; DEGREE + 1]; NY];
    for out in 0..NY {
        let a = &mut alpha[out];
        a[0] = samples[0][out];
        a[DEGREE] = samples[n - 1][out];
        a[1] = a[0] + d0[out] / DEGREE as f64;
        a[DEGREE - 1] = a[DEGREE] - d1[out] / DEGREE as f64;
        let mut ata = nalgebra::Matrix2::<f64>::zeros();
        let mut atb = nalgebra::Vector2::<f64>::zeros();
        for j in 0..n {
            let b = &basis[j];
            let fixed = b[0] * a[0] + b[1] * a[1] + b[4] * a[4] + b[5] * a[5];
            let r = samples[j][out] - fixed;
            let v = nalgebra::Vector2::new(b[2], b[3]);
            ata += weights[j] * v * v.transpose();
            atb += weights[j] * r * v;
        }
        let sol = ata
            .lu()
            .solve(&atb)
            .ok_or_else(|| Error::InfeasibleTargets("degenerate least-squares system".into()))?;
        a[2] = sol[0];
        a[3] = sol[1];
    }
    let spec = GaitSpec {
        degree: DEGREE,
        alpha,
        theta_min: -0.5 * targets.step_length,
        theta_max: 0.5 * targets.step_length,
        h_select: default_h_select(),
    };
    spec.validate()?;
    Ok(spec)
}

/// Nominal reference `v_nom` under which a step on the gait lasts `duration`.
///
/// On the constraint manifold `A dq = b` reduces to `b = c(theta) d(q0)/dt`,
/// so the stance duration is `(integral of c over q0) / b`.
pub fn nominal_speed(gait: &GaitSpec, a_row: &[f64; NQ], duration: f64) -> f64 {
    let hs = gait.selection();
    let mut travel = (gait.theta_max - gait.theta_min) * a_row[coord::HIP_X];
    for i in 0..NY {
        let change = gait.alpha[i][gait.degree] - gait.alpha[i][0];
        let coeff: f64 = (0..NQ).map(|j| a_row[j] * hs[(i, j)]).sum();
        travel += coeff * change;
    }
    travel / duration
}

/// Default gait and matching schedule for the variable-slip experiment.
pub fn nominal_setup(model: &Model) -> Result<(GaitSpec, SlipSchedule)> {
    let targets = FitTargets::default();
    let gait = fit_nominal_gait(&targets, model)?;
    let mut slip = SlipSchedule::default();
    slip.v_nom = nominal_speed(&gait, &slip.a_row, targets.duration);
    Ok((gait, slip))
}

/// Largest swing-foot height along the fitted gait (forward kinematics).
pub fn max_swing_height(gait: &GaitSpec, model: &Model, samples: usize) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for i in 0..=samples {
        let q = gait.configuration_at(i as f64 / samples as f64)?;
        best = best.max(model.contact_geometry(&q).h_sw);
    }
    Ok(best)
}

/// Endpoint values of the fitted rows, for comparison with the construction.
pub fn fitted_endpoints(gait: &GaitSpec) -> Result<([f64; NY], [f64; NY])> {
    let mut start = [0.0; NY];
    let mut end = [0.0; NY];
    for i in 0..NY {
        start[i] = bezier_eval(&gait.alpha[i], 0.0)?.value;
        end[i] = bezier_eval(&gait.alpha[i], 1.0)?.value;
    }
    Ok((start, end))
}

/// Endpoint output values of the constructed (unfitted) trajectory.
pub fn constructed_endpoints(targets: &FitTargets, model: &Model) -> Result<([f64; NY], [f64; NY])> {
    Ok((reference_outputs(model, targets, 0.0)?, reference_outputs(model, targets, 1.0)?))
}
