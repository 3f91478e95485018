//! Acceptance checks.
//!
//! Each check returns a [`Verdict`] with the measured quantities, so a
//! failing criterion reports how far off it is instead of aborting the rest.

use std::fmt;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{Complex, DVector, SMatrix};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use slipgait::analysis::poincare::seed_from_first_step;
use slipgait::analysis::summary::ROW_LABELS;
use slipgait::analysis::transverse::block_eigenvalues;
use slipgait::analysis::{find_fixed_point, linearize_poincare, transverse_matrix, ReturnMap};
use slipgait::dynamics::{Mat7, Vec7, NQ};
use slipgait::gait::{Mat6, NY};
use slipgait::hybrid::{integrate_stance, manifold_velocity, StanceOutcome};
use slipgait::integrate::{integrate, Dopri5Options, Flow};
use slipgait::slip::ConstantSlip;
use slipgait::{ControllerMode, Error, Gains, Model, RunConfig, RunLog, State};
use slipgait_cli::RunReport;

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "criterion {:>2} [{tag}] {}: {}", self.id, self.name, self.detail)
    }
}

fn verdict(id: usize, name: &'static str, passed: bool, detail: String) -> Verdict {
    Verdict { id, name, passed, detail }
}

fn logs(report: &RunReport) -> (&RunLog, &RunLog) {
    (
        report.controlled.as_ref().expect("controlled run requested"),
        report.open_loop.as_ref().expect("open-loop run requested"),
    )
}

/// 1. Controlled run completes the horizon, open-loop fails strictly earlier, in time.
pub fn table_direction(report: &RunReport, n_steps: usize, elapsed: Duration) -> Verdict {
    let (c, o) = logs(report);
    let (cs, os) = (c.successful_steps(), o.successful_steps());
    let passed = c.completed(n_steps) && os < cs && elapsed < Duration::from_secs(60);
    verdict(
        1,
        "directional Table 1",
        passed,
        format!("controlled {cs}/{n_steps}, open-loop {os}/{n_steps}, runtime {:.2} s (< 60 s)", elapsed.as_secs_f64()),
    )
}

/// 2. Slip regulation magnitude.
pub fn slip_regulation(report: &RunReport) -> Verdict {
    let s = report.summary.expect("both modes run");
    let (c, o) = (s.controlled.mean_abs_eta_s, s.open_loop.mean_abs_eta_s);
    let ratio = o / c;
    verdict(
        2,
        "slip regulation",
        c < 0.01 && ratio >= 50.0,
        format!("mean |eta_s| controlled {c:.3e} (< 1e-2), open-loop {o:.4}, ratio {ratio:.1} (>= 50)"),
    )
}

/// 3. Decoupling regularity along the controlled run.
pub fn regularity(controlled: &RunLog) -> Verdict {
    let min = |f: fn(&slipgait::StepRecord) -> f64| {
        controlled.steps.iter().filter(|s| s.samples > 0).map(f).fold(f64::INFINITY, f64::min)
    };
    let (sigma, ms) = (min(|s| s.min_sigma_min_a), min(|s| s.min_norm_ms));
    verdict(
        3,
        "regularity indicators",
        sigma > 0.05 && ms > 0.1,
        format!("min sigma_min(A) {sigma:.4} (> 0.05), min ||M_s|| {ms:.4} (> 0.1)"),
    )
}

/// 4. Closed-loop output ODE residuals on every controlled stance phase.
pub fn output_odes(controlled: &RunLog) -> Verdict {
    let max = |f: fn(&slipgait::StepRecord) -> f64| controlled.steps.iter().map(f).fold(0.0, f64::max);
    let (slip, out) = (max(|s| s.max_slip_ode_residual), max(|s| s.max_output_ode_residual));
    let phases = controlled.steps.iter().filter(|s| s.samples > 0).count();
    verdict(
        4,
        "closed-loop output ODEs",
        phases > 0 && slip < 1e-6 && out < 1e-6,
        format!("{phases} stance phases, max |deta_s + k_s eta_s| {slip:.2e}, max ||ddy + Kd dy + Kp y|| {out:.2e} (< 1e-6)"),
    )
}

/// 5. Invariance and exponential recovery of the slip constraint under the slip-only law.
///
/// The slip-only law leaves the posture unregulated, so the stance phase ends
/// when the fall guard trips; the bounds are checked over that whole phase.
pub fn slip_invariance(nominal: &RunConfig) -> Verdict {
    let mut cfg = nominal.clone();
    cfg.mode = ControllerMode::SlipOnly;
    let law = cfg.slip.law(1);
    let ctrl = cfg.controller(&law);
    let start = |eta0: f64| {
        let q = cfg.gait.configuration_at(0.0).expect("phase in range");
        let shifted = ConstantSlip { b_k: law.b_k + eta0, ..law };
        State::new(q, manifold_velocity(&cfg.gait, &shifted, &q).expect("regular manifold"))
    };
    let on = integrate_stance(&ctrl, &start(0.0), &cfg.options, 0.0, true);
    let off = integrate_stance(&ctrl, &start(0.1), &cfg.options, 0.0, true);
    let k = cfg.gains.k_s;
    let drift = on.samples.iter().map(|s| s.eta_s.abs()).fold(0.0, f64::max);
    let dev = off.samples.iter().map(|s| (s.eta_s - 0.1 * (-k * s.t).exp()).abs()).fold(0.0, f64::max);
    // Relative to the initial amplitude 0.1.
    let rel = dev / 0.1;
    let ended = |o: &StanceOutcome| match &o.failure {
        None => "touchdown".to_string(),
        Some(Error::Fall(_)) => "fall guard".to_string(),
        Some(e) => format!("error ({e})"),
    };
    let physical = |o: &StanceOutcome| matches!(o.failure, None | Some(Error::Fall(_))) && o.samples.len() > 100;
    let passed = physical(&on) && physical(&off) && drift < 1e-8 && rel < 1e-6;
    verdict(
        5,
        "slip-only invariance",
        passed,
        format!(
            "from eta_s = 0: max |eta_s| {drift:.2e} (< 1e-8) over {:.3} s to {}; from 0.1: max |eta_s - 0.1 e^(-k_s t)| / 0.1 = {rel:.2e} (< 1e-6) over {:.3} s to {}",
            on.duration,
            ended(&on),
            off.duration,
            ended(&off)
        ),
    )
}

/// 6. Momentum balance, post-impact constraint and energy loss at every impact.
pub fn impact_exactness(runs: &[&RunLog]) -> Verdict {
    let impacts: Vec<_> = runs.iter().flat_map(|l| &l.steps).filter(|s| s.momentum_residual.is_finite()).collect();
    let mom = impacts.iter().map(|s| s.momentum_residual).fold(0.0, f64::max);
    let vel = impacts.iter().map(|s| s.impact_velocity_residual).fold(0.0, f64::max);
    let gained = impacts.iter().filter(|s| s.kinetic_after > s.kinetic_before).count();
    verdict(
        6,
        "impact map exactness",
        !impacts.is_empty() && mom < 1e-10 && vel < 1e-10 && gained == 0,
        format!(
            "{} impacts, max momentum residual {mom:.2e}, max |J_i dq+| {vel:.2e} (< 1e-10), energy gains {gained}",
            impacts.len()
        ),
    )
}

fn random_configuration(rng: &mut StdRng) -> Vec7 {
    let lo = [-0.3, -0.05, -0.4, -0.8, -1.2, -0.8, -1.2];
    let hi = [0.3, 0.05, 0.4, 0.8, 0.0, 0.8, 0.0];
    Vec7::from_fn(|i, _| rng.gen_range(lo[i]..hi[i]))
}

fn fd5<const R: usize, const C: usize>(
    f: impl Fn(&Vec7) -> SMatrix<f64, R, C>,
    q: &Vec7,
    dir: &Vec7,
    h: f64,
) -> SMatrix<f64, R, C> {
    let at = |s: f64| f(&(q + dir * s));
    (at(-2.0 * h) - at(-h) * 8.0 + at(h) * 8.0 - at(2.0 * h)) / (12.0 * h)
}

/// Relative energy drift of the unactuated, frictionless stance dynamics.
pub fn energy_drift(model: &Model, horizon: f64) -> f64 {
    let q = Vec7::from_column_slice(&[0.02, 0.0, 0.05, 0.25, -0.3, -0.2, -0.4]);
    let dq = Vec7::from_column_slice(&[0.3, 0.0, -0.1, 0.4, 0.2, -0.5, 0.3]);
    let x0 = State::new(q, dq);
    let e0 = model.total_energy(&x0);
    let opts = Dopri5Options { rtol: 1e-11, atol: 1e-13, ..Dopri5Options::default() };
    let mut worst: f64 = 0.0;
    let res = integrate(
        |_, x| {
            let s = State::from_vector(x);
            let (ddq, _) = model.forward_dynamics(&s.q, &s.dq, &Vec7::zeros())?;
            let mut dx = *x;
            dx.fixed_rows_mut::<NQ>(0).copy_from(&s.dq);
            dx.fixed_rows_mut::<NQ>(NQ).copy_from(&ddq);
            Ok(dx)
        },
        0.0,
        x0.to_vector(),
        horizon,
        &opts,
        |step| {
            let e = model.total_energy(&State::from_vector(&step.end()));
            worst = worst.max((e - e0).abs() / e0.abs());
            Ok(Flow::Continue)
        },
    );
    match res {
        Ok(out) if (out.t - horizon).abs() < 1e-12 => worst,
        _ => f64::INFINITY,
    }
}

/// 7. Structural properties of the rigid-body model on random states.
pub fn dynamics_suite(nominal: &RunConfig, samples: usize, seed: u64, stance_time: f64) -> Verdict {
    let m = &nominal.model;
    let gait = &nominal.gait;
    let mut rng = StdRng::seed_from_u64(seed);
    let (mut not_spd, mut skew, mut jac): (usize, f64, f64) = (0, 0.0, 0.0);
    for _ in 0..samples {
        let q = random_configuration(&mut rng);
        let dq = Vec7::from_fn(|_, _| rng.gen_range(-2.0..2.0));
        let d = m.mass_matrix(&q);
        if (d - d.transpose()).amax() > 1e-12 || d.symmetric_eigen().eigenvalues.min() <= 0.0 {
            not_spd += 1;
        }
        let n = m.mass_matrix_rate(&q, &dq) - m.coriolis_matrix(&q, &dq) * 2.0;
        skew = skew.max((n + n.transpose()).amax());

        // Directional rate of D along dq.
        let d_rate: Mat7 = fd5(|x| m.mass_matrix(x), &q, &dq, 3e-4);
        jac = jac.max((m.mass_matrix_rate(&q, &dq) - d_rate).amax() / (1.0 + d_rate.amax()));
        let geo = m.contact_geometry(&q);
        // Output Jacobian inside the phase range of the gait.
        let mut qg = q;
        qg[0] = rng.gen_range(-0.15..0.15);
        let out = gait.holonomic_output(&qg, &Vec7::zeros()).expect("configuration in range");
        for i in 0..NQ {
            let e = Vec7::from_fn(|r, _| if r == i { 1.0 } else { 0.0 });
            let col = |j: &dyn Fn(usize) -> f64, n: usize| DVector::from_fn(n, |r, _| j(r));
            let jf = fd5(|x| m.contact_geometry(x).p_f, &q, &e, 1e-4);
            let ji = fd5(|x| m.contact_geometry(x).p_sw, &q, &e, 1e-4);
            let jh = fd5(|x| SMatrix::<f64, 1, 1>::new(m.contact_geometry(x).h_sw), &q, &e, 1e-4);
            let g = fd5(|x| SMatrix::<f64, 1, 1>::new(m.potential_energy(x)), &q, &e, 1e-4);
            let jy = fd5(
                |x| gait.holonomic_output(x, &Vec7::zeros()).map(|o| o.y).unwrap_or_else(|_| nalgebra::Vector6::from_element(f64::NAN)),
                &qg,
                &e,
                1e-4,
            );
            let analytic = [
                (col(&|r| geo.j_f[(r, i)], 2), col(&|r| jf[r], 2)),
                (col(&|r| geo.j_i[(r, i)], 2), col(&|r| ji[r], 2)),
                (col(&|_| geo.j_hsw[i], 1), col(&|_| jh[0], 1)),
                (col(&|_| m.gravity_vector(&q)[i], 1), col(&|_| g[0], 1)),
                (col(&|r| out.jy[(r, i)], NY), col(&|r| jy[r], NY)),
            ];
            for (a, b) in analytic {
                let err = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0)).fold(0.0, f64::max);
                jac = jac.max(if err.is_nan() { f64::INFINITY } else { err });
            }
        }
    }
    let drift = energy_drift(m, stance_time);
    verdict(
        7,
        "dynamics property suite",
        not_spd == 0 && skew < 1e-9 && jac < 1e-6 && drift < 1e-6,
        format!(
            "{samples} random states: D not SPD {not_spd}, max |N + N^T| {skew:.2e} (< 1e-9), max Jacobian rel. error {jac:.2e} (< 1e-6); energy drift {drift:.2e} over {stance_time:.2} s (< 1e-6)"
        ),
    )
}

/// 8. Fixed point, spectral radius and contraction of the zero-slip return map.
pub fn poincare_stability(nominal: &RunConfig) -> Verdict {
    let t0 = Instant::now();
    let map = ReturnMap::new(nominal, 0.0);
    let result = seed_from_first_step(&map)
        .and_then(|seed| find_fixed_point(&map, &seed))
        .and_then(|fixed| Ok((linearize_poincare(&map, &fixed, 1e-6)?, fixed)));
    let (lin, fixed) = match result {
        Ok(v) => v,
        Err(e) => return verdict(8, "Poincare stability", false, format!("analysis failed: {e}")),
    };
    let x_star = &fixed.chart_point;
    let mut c = x_star.clone();
    c[3] += 1e-3 / 2f64.sqrt();
    c[9] -= 1e-3 / 2f64.sqrt();
    let mut dists = vec![(&c - x_star).norm()];
    for _ in 0..13 {
        match map.apply(&c) {
            Ok(next) => c = next,
            Err(e) => return verdict(8, "Poincare stability", false, format!("perturbed rollout failed: {e}")),
        }
        dists.push((&c - x_star).norm());
    }
    let contracting = (3..dists.len() - 1).all(|k| dists[k + 1] < dists[k]);
    let elapsed = t0.elapsed();
    let passed = fixed.residual_norm < 1e-9 && lin.spectral_radius < 1.0 && contracting && elapsed < Duration::from_secs(300);
    verdict(
        8,
        "Poincare stability",
        passed,
        format!(
            "residual {:.2e} (< 1e-9), spectral radius {:.4} (< 1), distance {:.2e} -> {:.2e} -> {:.2e} monotone after step 3 over {} steps: {contracting}, {:.1} s",
            fixed.residual_norm,
            lin.spectral_radius,
            dists[0],
            dists[3],
            dists[dists.len() - 1],
            dists.len() - 4,
            elapsed.as_secs_f64()
        ),
    )
}

fn random_spd(rng: &mut StdRng, spread: f64, floor: f64) -> Mat6 {
    let l = Mat6::from_fn(|i, j| if j <= i { rng.gen_range(-spread..spread) } else { 0.0 });
    l * l.transpose() + Mat6::identity() * rng.gen_range(floor..10.0 * floor)
}

/// Largest distance from an eigenvalue of `a` to its nearest unused partner in `b`.
pub fn spectrum_mismatch(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm() / (1.0 + y.norm())))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .expect("equal lengths");
        used[j] = true;
        worst = worst.max(d);
    }
    worst
}

/// 9. Transverse matrix spectra over random valid gains.
pub fn transverse_spectra(sets: usize, seed: u64) -> Verdict {
    let mut rng = StdRng::seed_from_u64(seed);
    let (mut not_hurwitz, mut worst): (usize, f64) = (0, 0.0);
    for _ in 0..sets {
        let g = Gains::new(rng.gen_range(0.1..50.0), random_spd(&mut rng, 5.0, 0.1), random_spd(&mut rng, 3.0, 0.1))
            .expect("SPD construction");
        let spec = transverse_matrix(&g);
        if !spec.hurwitz {
            not_hurwitz += 1;
        }
        worst = worst.max(spectrum_mismatch(&spec.eigenvalues, &block_eigenvalues(&g)));
    }
    verdict(
        9,
        "transverse matrix",
        not_hurwitz == 0 && worst < 1e-10,
        format!("{sets} gain sets: not Hurwitz {not_hurwitz}, max eigenvalue mismatch {worst:.2e} (< 1e-10)"),
    )
}

/// 10. Byte-identical reruns, verbatim labels and the shipped schedule.
pub fn determinism_and_format(first: &Path, second: &Path, shipped_config: &Path) -> Verdict {
    let mut notes = Vec::new();
    let mut identical = true;
    for name in ["steps_controlled.csv", "steps_openloop.csv"] {
        let same = matches!((fs::read(first.join(name)), fs::read(second.join(name))), (Ok(a), Ok(b)) if a == b);
        identical &= same;
    }
    notes.push(format!("step CSVs identical: {identical}"));
    let labels: Vec<String> = fs::read_to_string(first.join("summary.csv"))
        .map(|s| s.lines().skip(1).map(|l| l.split(',').next().unwrap_or_default().to_string()).collect())
        .unwrap_or_default();
    let labels_ok = labels == ROW_LABELS;
    notes.push(format!("summary labels verbatim: {labels_ok}"));
    let doc: serde_json::Value = fs::read_to_string(shipped_config)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default();
    let floats = |v: &serde_json::Value| -> Option<Vec<f64>> { v.as_array()?.iter().map(|x| x.as_f64()).collect() };
    let levels_ok = floats(&doc["slip"]["s_levels"]) == Some(vec![0.0, 0.015, 0.03, 0.0, 0.02]);
    let row_ok = floats(&doc["slip"]["A_row"]) == Some(vec![1.0, 0.0, 0.10, 0.08, 0.04, -0.05, -0.03]);
    notes.push(format!("shipped s_levels exact: {levels_ok}, A_row exact: {row_ok}"));
    verdict(10, "determinism and format", identical && labels_ok && levels_ok && row_ok, notes.join(", "))
}
