//! Poincaré return map on the touchdown surface, fixed-point shooting and
//! finite-difference linearization.
//!
//! The chart is the pre-impact state without the horizontal hip position:
//! `(q1..q6, dq0..dq6)`, 13 coordinates. The dropped coordinate is the step
//! frame position, which the leg swap re-anchors, so the return map does not
//! depend on it.

use nalgebra::{Complex, DMatrix, DVector};
use serde_json::json;

use crate::control::ControllerMode;
use crate::dynamics::{State, Vec7, NQ};
use crate::error::{Error, Result};
use crate::hybrid::{hybrid_step, RunConfig};
use crate::slip::ConstantSlip;

/// Chart dimension.
pub const CHART_DIM: usize = 2 * NQ - 1;

const NEWTON_TOL: f64 = 1e-9;
const MAX_NEWTON_ITERS: usize = 50;
const MAX_HALVINGS: usize = 8;
const STABILITY_MARGIN: f64 = 1e-6;
/// Integration tolerances of the return map. Differencing the map with steps
/// of 1e-6 needs its noise floor well below the walking-run tolerance.
const MAP_RTOL: f64 = 1e-11;
const MAP_ATOL: f64 = 1e-13;

/// One-step return map at a fixed slip reference.
pub struct ReturnMap<'a> {
    pub cfg: &'a RunConfig,
    pub law: ConstantSlip,
}

pub fn chart(x: &State) -> DVector<f64> {
    let mut c = DVector::zeros(CHART_DIM);
    for i in 1..NQ {
        c[i - 1] = x.q[i];
    }
    for i in 0..NQ {
        c[NQ - 1 + i] = x.dq[i];
    }
    c
}

pub fn embed(c: &DVector<f64>) -> State {
    let mut q = Vec7::zeros();
    let mut dq = Vec7::zeros();
    for i in 1..NQ {
        q[i] = c[i - 1];
    }
    for i in 0..NQ {
        dq[i] = c[NQ - 1 + i];
    }
    State::new(q, dq)
}

impl<'a> ReturnMap<'a> {
    /// Controlled-mode return map with `b = v_nom + slip_level`.
    pub fn new(cfg: &'a RunConfig, slip_level: f64) -> Self {
        let law = ConstantSlip { a_row: cfg.slip.a(), b_k: cfg.slip.v_nom + slip_level };
        Self { cfg, law }
    }

    /// Impact, leg swap and one stance phase, from pre-impact to pre-impact.
    pub fn apply_state(&self, x_minus: &State) -> Result<State> {
        let cfg = self.cfg;
        let impact = crate::hybrid::impact_map(&cfg.model, x_minus)?;
        let (x_plus, _) = crate::hybrid::leg_swap(&cfg.model, &impact.x_plus);
        let x_plus = if cfg.options.impact == crate::hybrid::ImpactMode::Projection {
            State::new(x_plus.q, crate::hybrid::manifold_velocity(&cfg.gait, &self.law, &x_plus.q)?)
        } else {
            x_plus
        };
        let step = hybrid_step_from_post(cfg, &self.law, &x_plus)?;
        if !step.is_finite() {
            return Err(Error::SectionMiss("non-finite return state".into()));
        }
        Ok(step)
    }

    pub fn apply(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(chart(&self.apply_state(&embed(c))?))
    }
}

fn hybrid_step_from_post(cfg: &RunConfig, law: &ConstantSlip, x_plus: &State) -> Result<State> {
    let mut run = cfg.clone();
    run.mode = ControllerMode::Controlled;
    let tol = &mut run.options.integrator;
    tol.rtol = tol.rtol.min(MAP_RTOL);
    tol.atol = tol.atol.min(MAP_ATOL);
    let step = hybrid_step(&run, law, law, x_plus, 0.0, false)?;
    match step.stance.failure {
        Some(e) => Err(Error::StepFailed(e.to_string())),
        None => {
            let x = step.stance.x_end;
            let h = cfg.model.contact_geometry(&x.q).h_sw;
            if h.abs() > 1e-8 {
                return Err(Error::SectionMiss(format!("return state off the touchdown surface (h_sw = {h:e})")));
            }
            Ok(x)
        }
    }
}

/// Fixed point and linearization of the return map.
#[derive(Debug, Clone)]
pub struct PoincareResult {
    pub fixed_point: State,
    pub chart_point: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub a_p: DMatrix<f64>,
    pub eigenvalues: Vec<Complex<f64>>,
    pub spectral_radius: f64,
    pub stable: bool,
}

impl PoincareResult {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "residual": self.residual_norm,
            "eigenvalues": self.eigenvalues.iter().map(|e| [e.re, e.im]).collect::<Vec<_>>(),
            "spectral_radius": self.spectral_radius,
            "stable": self.stable,
            "iterations": self.iterations,
            "dimension": self.a_p.nrows(),
            "fixed_point": self.chart_point.iter().copied().collect::<Vec<_>>(),
        })
    }
}

/// Converged fixed point of the return map.
#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub chart_point: DVector<f64>,
    pub state: State,
    pub residual_norm: f64,
    pub iterations: usize,
}

fn scaled_step(c: f64, base: f64) -> f64 {
    base * c.abs().max(1.0)
}

/// Damped Newton iteration on `F(x) = P(x) - x` with a forward-difference Jacobian.
pub fn find_fixed_point(map: &ReturnMap, guess: &State) -> Result<FixedPoint> {
    let no_conv = |iterations, residual, detail: String| Error::NoConvergence { iterations, residual, detail };
    let residual = |c: &DVector<f64>| -> Result<DVector<f64>> { Ok(map.apply(c)? - c) };
    let mut c = chart(guess);
    let mut f = residual(&c).map_err(|e| no_conv(0, f64::INFINITY, format!(": {e}")))?;
    let mut norm = f.amax();
    for iter in 0..MAX_NEWTON_ITERS {
        if norm < NEWTON_TOL {
            return Ok(FixedPoint { state: embed(&c), chart_point: c, residual_norm: norm, iterations: iter });
        }
        let mut jac = DMatrix::zeros(CHART_DIM, CHART_DIM);
        for j in 0..CHART_DIM {
            let h = scaled_step(c[j], 1e-6);
            let mut cp = c.clone();
            cp[j] += h;
            let fp = residual(&cp).map_err(|e| no_conv(iter, norm, format!(": {e}")))?;
            jac.set_column(j, &((fp - &f) / h));
        }
        let delta = jac
            .lu()
            .solve(&(-&f))
            .ok_or_else(|| no_conv(iter, norm, ": singular Newton matrix".into()))?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let trial = &c + &delta * t;
            if let Ok(ft) = residual(&trial) {
                let n = ft.amax();
                if n < norm {
                    c = trial;
                    f = ft;
                    norm = n;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        log::debug!("newton iteration {iter}: residual {norm:e}");
        if !accepted {
            if norm < NEWTON_TOL {
                break;
            }
            return Err(no_conv(iter + 1, norm, ": line search failed".into()));
        }
    }
    if norm < NEWTON_TOL {
        return Ok(FixedPoint { state: embed(&c), chart_point: c, residual_norm: norm, iterations: MAX_NEWTON_ITERS });
    }
    Err(no_conv(MAX_NEWTON_ITERS, norm, String::new()))
}

/// Central-difference Jacobian of the return map.
pub fn jacobian(map: &ReturnMap, c: &DVector<f64>, step: f64, central: bool) -> Result<DMatrix<f64>> {
    let base = if central { None } else { Some(map.apply(c)?) };
    let mut jac = DMatrix::zeros(CHART_DIM, CHART_DIM);
    for j in 0..CHART_DIM {
        let h = scaled_step(c[j], step);
        let mut cp = c.clone();
        cp[j] += h;
        let fp = map.apply(&cp)?;
        let col = match &base {
            Some(f0) => (fp - f0) / h,
            None => {
                let mut cm = c.clone();
                cm[j] -= h;
                (fp - map.apply(&cm)?) / (2.0 * h)
            }
        };
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Linearizes the return map at a fixed point and tests the spectrum.
pub fn linearize_poincare(map: &ReturnMap, fixed: &FixedPoint, step: f64) -> Result<PoincareResult> {
    let a_p = jacobian(map, &fixed.chart_point, step, true)?;
    let eigenvalues: Vec<Complex<f64>> = a_p.complex_eigenvalues().iter().copied().collect();
    let spectral_radius = eigenvalues.iter().map(|e| e.norm()).fold(0.0, f64::max);
    Ok(PoincareResult {
        fixed_point: fixed.state,
        chart_point: fixed.chart_point.clone(),
        residual_norm: fixed.residual_norm,
        iterations: fixed.iterations,
        a_p,
        eigenvalues,
        spectral_radius,
        stable: spectral_radius < 1.0 - STABILITY_MARGIN,
    })
}

/// Pre-impact state at the end of the first step of a nominal run, a
/// natural seed for the shooting iteration.
pub fn seed_from_first_step(map: &ReturnMap) -> Result<State> {
    let x0 = crate::hybrid::initial_state(&map.cfg.gait, &map.law)?;
    hybrid_step_from_post(map.cfg, &map.law, &x0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_round_trip() {
        let c = DVector::from_fn(CHART_DIM, |i, _| i as f64 * 0.1 - 0.3);
        assert_eq!(chart(&embed(&c)), c);
    }
}
