//! Event-driven hybrid execution: stance integration, impact, leg swap and
//! the multi-step walking loop.

use nalgebra::{Matrix2, SVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::control::{Controller, ControllerMode, Gains};
use crate::dynamics::{coord, ContactForces, Model, State, Vec7, NQ};
use crate::error::{Error, Result};
use crate::gait::{GaitSpec, Vec6, NY};
use crate::integrate::{bisect_root, integrate, Dopri5Options, Flow};
use crate::slip::{slip_output, SlipLaw, SlipSchedule};

type Vec14 = SVector<f64, 14>;

const IMPACT_CONDITION_CEILING: f64 = 1e12;

/// What happens to the velocity at touchdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImpactMode {
    /// Plastic impact at the new stance foot.
    #[default]
    Plastic,
    /// Plastic impact followed by projection onto the constraint manifold.
    Projection,
}

/// Integration and failure-detection settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub integrator: Dopri5Options,
    pub max_stance_time: f64,
    /// Touchdown events are ignored for this long after a step starts.
    pub dwell: f64,
    pub event_tol: f64,
    pub sample_dt: f64,
    pub torso_limit: f64,
    pub min_hip_height: f64,
    pub impact: ImpactMode,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            integrator: Dopri5Options::default(),
            max_stance_time: 2.0,
            dwell: 0.01,
            event_tol: 1e-13,
            sample_dt: 1e-3,
            torso_limit: std::f64::consts::FRAC_PI_3,
            min_hip_height: 0.4,
            impact: ImpactMode::Plastic,
        }
    }
}

/// Everything needed to run the walking loop.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: Model,
    pub gait: GaitSpec,
    pub slip: SlipSchedule,
    pub gains: Gains,
    pub mode: ControllerMode,
    pub n_steps: usize,
    pub dense: bool,
    pub options: SimOptions,
}

impl RunConfig {
    /// Default model, fitted nominal gait, variable-slip schedule and gains.
    pub fn nominal(mode: ControllerMode, n_steps: usize) -> Result<Self> {
        let model = Model::new(crate::dynamics::ModelParams::default())?;
        let (gait, slip) = crate::analysis::nominal_setup(&model)?;
        Ok(Self {
            model,
            gait,
            slip,
            gains: Gains::default(),
            mode,
            n_steps,
            dense: false,
            options: SimOptions::default(),
        })
    }

    pub fn controller<'a>(&'a self, law: &'a dyn SlipLaw) -> Controller<'a> {
        Controller { model: &self.model, gait: &self.gait, gains: &self.gains, mode: self.mode, law }
    }
}

/// One logged point of a stance phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: State,
    pub u: Vec7,
    pub lambda: ContactForces,
    pub y: Vec6,
    pub eta_s: f64,
}

/// Aggregates over the sampled points of one stance phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StanceStats {
    pub samples: usize,
    pub mean_abs_eta_s: f64,
    pub max_abs_eta_s: f64,
    pub min_sigma_min_a: f64,
    pub min_norm_ms: f64,
    pub min_lambda_n: f64,
    /// `max |d(eta_s)/dt + k_s eta_s|`.
    pub max_slip_ode_residual: f64,
    /// `max |ydd + Kd yd + Kp y|_inf`.
    pub max_output_ode_residual: f64,
    /// Sampled phase decreases.
    pub theta_reversals: usize,
}

impl Default for StanceStats {
    fn default() -> Self {
        Self {
            samples: 0,
            mean_abs_eta_s: 0.0,
            max_abs_eta_s: 0.0,
            min_sigma_min_a: f64::INFINITY,
            min_norm_ms: f64::INFINITY,
            min_lambda_n: f64::INFINITY,
            max_slip_ode_residual: 0.0,
            max_output_ode_residual: 0.0,
            theta_reversals: 0,
        }
    }
}

/// Result of integrating one stance phase.
#[derive(Debug, Clone)]
pub struct StanceOutcome {
    pub samples: Vec<Sample>,
    pub stats: StanceStats,
    /// Pre-impact state, or the last state reached on failure.
    pub x_end: State,
    pub duration: f64,
    pub failure: Option<Error>,
}

#[derive(Default)]
struct Accumulator {
    stats: StanceStats,
    sum_abs_eta: f64,
    last_theta: Option<f64>,
    samples: Vec<Sample>,
}

/// Evaluates the closed loop at `x`, updates the statistics and checks the
/// failure conditions.
fn sample_point(ctrl: &Controller, opts: &SimOptions, t: f64, x: &State, acc: &mut Accumulator, keep: bool) -> Result<()> {
    let (q, dq) = (&x.q, &x.dq);
    if q[coord::TORSO].abs() > opts.torso_limit {
        return Err(Error::Fall(format!("torso pitch {:.3} rad", q[coord::TORSO])));
    }
    let hip = ctrl.model.hip_height(q);
    if hip < opts.min_hip_height {
        return Err(Error::Fall(format!("hip height {hip:.3} m")));
    }
    let (ddq, eval, contact) = ctrl.closed_loop(q, dq)?;
    if !contact.valid {
        return Err(Error::NegativeNormalForce(contact.forces.lambda_n));
    }
    let out = ctrl.gait.holonomic_output(q, dq)?;
    let g = ctrl.gains;
    let eta_dot = (ctrl.law.a_row(q) * ddq)[0] + ctrl.law.a_dot_dq(q, dq) - (ctrl.law.db_dq(q) * dq)[0];
    let ydd = out.jy * ddq + out.jy_dot_dq;
    let s = &mut acc.stats;
    s.samples += 1;
    acc.sum_abs_eta += eval.eta_s.abs();
    s.max_abs_eta_s = s.max_abs_eta_s.max(eval.eta_s.abs());
    s.min_sigma_min_a = s.min_sigma_min_a.min(eval.sigma_min_a);
    s.min_norm_ms = s.min_norm_ms.min(eval.norm_ms);
    s.min_lambda_n = s.min_lambda_n.min(contact.forces.lambda_n);
    s.max_slip_ode_residual = s.max_slip_ode_residual.max((eta_dot + g.k_s * eval.eta_s).abs());
    s.max_output_ode_residual = s.max_output_ode_residual.max((ydd + g.kd * out.ydot + g.kp * out.y).amax());
    if let Some(prev) = acc.last_theta {
        if out.theta < prev {
            s.theta_reversals += 1;
        }
    }
    acc.last_theta = Some(out.theta);
    if keep {
        acc.samples.push(Sample { t, state: *x, u: eval.u, lambda: contact.forces, y: eval.y, eta_s: eval.eta_s });
    }
    Ok(())
}

/// Integrates one closed-loop stance phase until touchdown of the swing foot.
///
/// Samples are taken on a fixed grid of `opts.sample_dt`; `t_offset` shifts
/// the logged times.
pub fn integrate_stance(ctrl: &Controller, x0: &State, opts: &SimOptions, t_offset: f64, keep_samples: bool) -> StanceOutcome {
    let model = ctrl.model;
    let mut acc = Accumulator::default();
    let mut next_sample = 0usize;
    let mut last = (0.0, *x0);
    let h_sw = |x: &Vec14| model.contact_geometry(&x.fixed_rows::<NQ>(0).into_owned()).h_sw;

    let result = integrate(
        |_, x: &Vec14| {
            let s = State::from_vector(x);
            let (ddq, _, _) = ctrl.closed_loop(&s.q, &s.dq)?;
            let mut dx = Vec14::zeros();
            dx.fixed_rows_mut::<NQ>(0).copy_from(&s.dq);
            dx.fixed_rows_mut::<NQ>(NQ).copy_from(&ddq);
            Ok(dx)
        },
        0.0,
        x0.to_vector(),
        opts.max_stance_time,
        &opts.integrator,
        |step| {
            // Locate touchdown first so that no sample lies past the event.
            let mut event = None;
            if step.t1() > opts.dwell {
                let lo = step.t0.max(opts.dwell);
                let g_lo = h_sw(&step.eval(lo));
                let g_hi = h_sw(&step.end());
                if g_lo > 0.0 && g_hi <= 0.0 {
                    let t = if g_hi.abs() < opts.event_tol {
                        step.t1()
                    } else {
                        bisect_root(step, lo, step.t1(), opts.event_tol, h_sw)
                    };
                    let x = State::from_vector(&step.eval(t));
                    let rate = (model.contact_geometry(&x.q).j_hsw * x.dq)[0];
                    if rate < 0.0 {
                        event = Some(t);
                    }
                }
            }
            let horizon = event.unwrap_or(step.t1());
            loop {
                let ts = next_sample as f64 * opts.sample_dt;
                if ts > horizon {
                    break;
                }
                let x = State::from_vector(&step.eval(ts));
                last = (ts, x);
                sample_point(ctrl, opts, t_offset + ts, &x, &mut acc, keep_samples)?;
                next_sample += 1;
            }
            let x_end = State::from_vector(&step.eval(horizon));
            last = (horizon, x_end);
            match event {
                Some(t) => Ok(Flow::Stop { t, x: step.eval(t) }),
                None => Ok(Flow::Continue),
            }
        },
    );

    let failure = match result {
        Ok(outcome) if outcome.stopped => None,
        Ok(_) => Some(Error::NoImpact(opts.max_stance_time)),
        Err(e) => Some(e),
    };
    let mut stats = acc.stats;
    if stats.samples > 0 {
        stats.mean_abs_eta_s = acc.sum_abs_eta / stats.samples as f64;
    }
    StanceOutcome { samples: acc.samples, stats, x_end: last.1, duration: last.0, failure }
}

/// Velocity jump at touchdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpactResult {
    pub x_plus: State,
    pub impulse: Vector2<f64>,
    /// `|D (dq+ - dq-) - J_i^T Lambda|_inf`.
    pub momentum_residual: f64,
    /// `|J_i dq+|_inf`.
    pub velocity_residual: f64,
    pub kinetic_before: f64,
    pub kinetic_after: f64,
}

/// Plastic impact at the swing foot: solves
/// `[D, -J_i^T; J_i, 0] [dq+; Lambda] = [D dq-; 0]`.
pub fn impact_map(model: &Model, x_minus: &State) -> Result<ImpactResult> {
    let q = &x_minus.q;
    let d = model.mass_matrix(q);
    let j = model.contact_geometry(q).j_i;
    let mut saddle = nalgebra::SMatrix::<f64, 9, 9>::zeros();
    saddle.fixed_view_mut::<NQ, NQ>(0, 0).copy_from(&d);
    saddle.fixed_view_mut::<NQ, 2>(0, NQ).copy_from(&(-j.transpose()));
    saddle.fixed_view_mut::<2, NQ>(NQ, 0).copy_from(&j);
    let mut rhs = SVector::<f64, 9>::zeros();
    rhs.fixed_rows_mut::<NQ>(0).copy_from(&(d * x_minus.dq));

    let chol = d.cholesky().ok_or(Error::SingularMass(f64::INFINITY))?;
    let schur: Matrix2<f64> = j * chol.solve(&j.transpose());
    let sv = schur.singular_values();
    let cond = sv.max() / sv.min();
    if !(cond <= IMPACT_CONDITION_CEILING) {
        return Err(Error::SingularImpact(cond));
    }
    let sol = saddle.lu().solve(&rhs).ok_or(Error::SingularImpact(f64::INFINITY))?;
    let dq_plus: Vec7 = sol.fixed_rows::<NQ>(0).into_owned();
    let impulse = Vector2::new(sol[NQ], sol[NQ + 1]);
    Ok(ImpactResult {
        x_plus: State::new(*q, dq_plus),
        impulse,
        momentum_residual: (d * (dq_plus - x_minus.dq) - j.transpose() * impulse).amax(),
        velocity_residual: (j * dq_plus).amax(),
        kinetic_before: 0.5 * x_minus.dq.dot(&(d * x_minus.dq)),
        kinetic_after: 0.5 * dq_plus.dot(&(d * dq_plus)),
    })
}

/// Relabels the legs and re-anchors the step frame at the new stance foot.
///
/// Returns the swapped state and the horizontal shift of the frame origin.
pub fn leg_swap(model: &Model, x: &State) -> (State, f64) {
    let geo = model.contact_geometry(&x.q);
    let (q, dq) = (&x.q, &x.dq);
    let shift = geo.p_sw[0];
    let q_new = Vec7::from_column_slice(&[q[0] - shift, geo.p_sw[1], q[2], q[5], q[6], q[3], q[4]]);
    let sw_rate = geo.j_i * dq;
    let dq_new = Vec7::from_column_slice(&[dq[0], sw_rate[1], dq[2], dq[5], dq[6], dq[3], dq[4]]);
    (State::new(q_new, dq_new), shift)
}

/// Velocity on the constraint manifold at `q`: `[A; Jy] dq = [b; 0]`.
pub fn manifold_velocity(gait: &GaitSpec, law: &dyn SlipLaw, q: &Vec7) -> Result<Vec7> {
    let out = gait.holonomic_output(q, &Vec7::zeros())?;
    let mut m = nalgebra::SMatrix::<f64, NQ, NQ>::zeros();
    m.set_row(0, &law.a_row(q));
    m.fixed_rows_mut::<NY>(1).copy_from(&out.jy);
    let mut rhs = Vec7::zeros();
    rhs[0] = law.b(q);
    m.lu().solve(&rhs).ok_or_else(|| Error::Validation("slip row is dependent on the outputs".into()))
}

/// State on the constraint manifold at phase zero.
pub fn initial_state(gait: &GaitSpec, law: &dyn SlipLaw) -> Result<State> {
    let q = gait.configuration_at(0.0)?;
    Ok(State::new(q, manifold_velocity(gait, law, &q)?))
}

/// Norm of `(y, ydot, eta_s)`.
pub fn transverse_residual(gait: &GaitSpec, law: &dyn SlipLaw, x: &State) -> Result<f64> {
    let out = gait.holonomic_output(&x.q, &x.dq)?;
    let eta = slip_output(law, &x.q, &x.dq);
    Ok((out.y.norm_squared() + out.ydot.norm_squared() + eta * eta).sqrt())
}

/// Why a step failed.
pub fn failure_reason(e: &Error) -> &'static str {
    match e {
        Error::Fall(_) => "fall",
        Error::NoImpact(_) => "no-impact-timeout",
        Error::NearSingularDecoupling(_) | Error::HolonomicChannelSingular(_) | Error::SlipChannelSingular(_) => {
            "singular-decoupling"
        }
        Error::NegativeNormalForce(_) => "negative-normal-force",
        _ => "fall",
    }
}

/// Per-step indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: usize,
    pub slip_level: f64,
    pub b_k: f64,
    /// Base-x velocity just before touchdown.
    pub pre_impact_speed: f64,
    /// `A dq` just before touchdown.
    pub pre_impact_tangential: f64,
    pub mean_abs_eta_s: f64,
    pub max_abs_eta_s: f64,
    pub samples: usize,
    pub min_sigma_min_a: f64,
    pub min_norm_ms: f64,
    pub min_lambda_n: f64,
    pub max_slip_ode_residual: f64,
    pub max_output_ode_residual: f64,
    pub theta_reversals: usize,
    pub impact_impulse: [f64; 2],
    pub momentum_residual: f64,
    pub impact_velocity_residual: f64,
    pub kinetic_before: f64,
    pub kinetic_after: f64,
    pub h_sw_at_impact: f64,
    pub hdot_sw_at_impact: f64,
    pub post_reset_residual: f64,
    pub stance_duration: f64,
    pub success: bool,
    pub reason: Option<String>,
}

/// Dense sample in the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSample {
    pub step: usize,
    pub sample: Sample,
    /// World x of the step-frame origin.
    pub frame_x: f64,
}

/// Outcome of a multi-step run.
#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub mode: Option<ControllerMode>,
    pub steps: Vec<StepRecord>,
    pub dense: Option<Vec<DenseSample>>,
    /// `(t, hip x, hip y)` in the world frame on the sample grid.
    pub hip_path: Vec<[f64; 3]>,
    pub config_echo: serde_json::Value,
    /// Post-reset state of every completed step.
    pub post_reset_states: Vec<State>,
}

impl RunLog {
    pub fn successful_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.success).count()
    }

    pub fn completed(&self, n_steps: usize) -> bool {
        self.successful_steps() == n_steps
    }

    pub fn failure(&self) -> Option<&StepRecord> {
        self.steps.iter().find(|s| !s.success)
    }
}

fn nan_record(k: usize, level: f64, b_k: f64) -> StepRecord {
    StepRecord {
        step_index: k,
        slip_level: level,
        b_k,
        pre_impact_speed: f64::NAN,
        pre_impact_tangential: f64::NAN,
        mean_abs_eta_s: 0.0,
        max_abs_eta_s: 0.0,
        samples: 0,
        min_sigma_min_a: f64::NAN,
        min_norm_ms: f64::NAN,
        min_lambda_n: f64::NAN,
        max_slip_ode_residual: f64::NAN,
        max_output_ode_residual: f64::NAN,
        theta_reversals: 0,
        impact_impulse: [f64::NAN; 2],
        momentum_residual: f64::NAN,
        impact_velocity_residual: f64::NAN,
        kinetic_before: f64::NAN,
        kinetic_after: f64::NAN,
        h_sw_at_impact: f64::NAN,
        hdot_sw_at_impact: f64::NAN,
        post_reset_residual: f64::NAN,
        stance_duration: 0.0,
        success: false,
        reason: None,
    }
}

/// Result of one full hybrid step from a post-reset state.
pub struct HybridStep {
    pub stance: StanceOutcome,
    pub impact: Option<ImpactResult>,
    pub x_next: Option<State>,
    pub shift: f64,
}

/// Stance to touchdown, impact and leg swap. `law_next` is used only by the
/// projection impact mode.
pub fn hybrid_step(
    cfg: &RunConfig,
    law: &dyn SlipLaw,
    law_next: &dyn SlipLaw,
    x: &State,
    t_offset: f64,
    keep_samples: bool,
) -> Result<HybridStep> {
    let ctrl = cfg.controller(law);
    let stance = integrate_stance(&ctrl, x, &cfg.options, t_offset, keep_samples);
    if stance.failure.is_some() {
        return Ok(HybridStep { stance, impact: None, x_next: None, shift: 0.0 });
    }
    let impact = impact_map(&cfg.model, &stance.x_end)?;
    let (mut swapped, shift) = leg_swap(&cfg.model, &impact.x_plus);
    if cfg.options.impact == ImpactMode::Projection {
        swapped.dq = manifold_velocity(&cfg.gait, law_next, &swapped.q)?;
    }
    Ok(HybridStep { stance, impact: Some(impact), x_next: Some(swapped), shift })
}

/// Runs the walking loop for `cfg.n_steps` steps, stopping at the first failure.
pub fn run_steps(cfg: &RunConfig) -> RunLog {
    let mut log = RunLog {
        mode: Some(cfg.mode),
        dense: cfg.dense.then(Vec::new),
        ..RunLog::default()
    };
    if cfg.n_steps == 0 {
        return log;
    }
    let mut x = match initial_state(&cfg.gait, &cfg.slip.law(1)) {
        Ok(x) => x,
        Err(e) => {
            let mut rec = nan_record(1, cfg.slip.level(1), cfg.slip.reference(1));
            rec.reason = Some(failure_reason(&e).to_string());
            log.steps.push(rec);
            return log;
        }
    };
    let mut t = 0.0;
    let mut frame_x = 0.0;
    for k in 1..=cfg.n_steps {
        let law = cfg.slip.law(k);
        let law_next = cfg.slip.law(k + 1);
        let mut rec = nan_record(k, cfg.slip.level(k), law.b_k);
        let step = hybrid_step(cfg, &law, &law_next, &x, t, true);
        let step = match step {
            Ok(s) => s,
            Err(e) => {
                rec.reason = Some(failure_reason(&e).to_string());
                log.steps.push(rec);
                break;
            }
        };
        let st = &step.stance;
        for s in &st.samples {
            let hip = cfg.model.hip_position(&s.state.q);
            log.hip_path.push([s.t, hip[0] + frame_x, hip[1]]);
        }
        if let Some(dense) = log.dense.as_mut() {
            dense.extend(st.samples.iter().map(|s| DenseSample { step: k, sample: s.clone(), frame_x }));
        }
        let stats = &st.stats;
        rec.mean_abs_eta_s = stats.mean_abs_eta_s;
        rec.max_abs_eta_s = stats.max_abs_eta_s;
        rec.samples = stats.samples;
        rec.min_sigma_min_a = stats.min_sigma_min_a;
        rec.min_norm_ms = stats.min_norm_ms;
        rec.min_lambda_n = stats.min_lambda_n;
        rec.max_slip_ode_residual = stats.max_slip_ode_residual;
        rec.max_output_ode_residual = stats.max_output_ode_residual;
        rec.theta_reversals = stats.theta_reversals;
        rec.stance_duration = st.duration;
        rec.pre_impact_speed = st.x_end.dq[coord::HIP_X];
        rec.pre_impact_tangential = (law.a_row * st.x_end.dq)[0];
        let geo = cfg.model.contact_geometry(&st.x_end.q);
        rec.h_sw_at_impact = geo.h_sw;
        rec.hdot_sw_at_impact = (geo.j_hsw * st.x_end.dq)[0];

        if let Some(e) = &st.failure {
            rec.reason = Some(failure_reason(e).to_string());
            log::info!("{} run: step {k} failed: {e}", cfg.mode);
            log.steps.push(rec);
            break;
        }
        let (impact, x_next) = (step.impact.unwrap(), step.x_next.unwrap());
        rec.impact_impulse = [impact.impulse[0], impact.impulse[1]];
        rec.momentum_residual = impact.momentum_residual;
        rec.impact_velocity_residual = impact.velocity_residual;
        rec.kinetic_before = impact.kinetic_before;
        rec.kinetic_after = impact.kinetic_after;
        rec.post_reset_residual = transverse_residual(&cfg.gait, &law_next, &x_next).unwrap_or(f64::NAN);
        rec.success = true;
        log.steps.push(rec);
        log.post_reset_states.push(x_next);
        t += st.duration;
        frame_x += step.shift;
        x = x_next;
    }
    log
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ModelParams;

    #[test]
    fn impact_with_zero_velocity_is_trivial() {
        let m = Model::new(ModelParams::default()).unwrap();
        let q = Vec7::from_column_slice(&[0.1, 0.0, 0.05, 0.3, -0.2, -0.3, -0.1]);
        let r = impact_map(&m, &State::new(q, Vec7::zeros())).unwrap();
        assert_eq!(r.impulse, Vector2::zeros());
        assert_eq!(r.x_plus.dq, Vec7::zeros());
    }

    #[test]
    fn leg_swap_is_involution_up_to_frame() {
        let m = Model::new(ModelParams::default()).unwrap();
        let q = Vec7::from_column_slice(&[0.1, 0.0, 0.05, 0.3, -0.2, -0.3, -0.1]);
        let dq = Vec7::from_column_slice(&[0.7, 0.0, 0.1, -0.5, 0.4, 1.2, -0.8]);
        let x = State::new(q, dq);
        let (once, _) = leg_swap(&m, &x);
        let (twice, _) = leg_swap(&m, &once);
        let foot_x = m.contact_geometry(&q).p_f[0];
        let mut expected = x;
        expected.q[0] -= foot_x;
        assert!((twice.q - expected.q).amax() < 1e-12);
        assert!((twice.dq - expected.dq).amax() < 1e-12);
        assert!((m.hip_height(&once.q) - m.hip_height(&q)).abs() < 1e-12);
    }

    #[test]
    fn failure_reasons() {
        assert_eq!(failure_reason(&Error::NoImpact(2.0)), "no-impact-timeout");
        assert_eq!(failure_reason(&Error::NearSingularDecoupling(0.0)), "singular-decoupling");
        assert_eq!(failure_reason(&Error::NegativeNormalForce(-1.0)), "negative-normal-force");
    }
}
