use nalgebra::{Complex, DVector};
use proptest::prelude::*;
use slipgait::analysis::fit::{constructed_endpoints, fitted_endpoints, max_swing_height};
use slipgait::analysis::poincare::{chart, embed, jacobian, seed_from_first_step, CHART_DIM};
use slipgait::analysis::transverse::{block_eigenvalues, slowest_rate};
use slipgait::hybrid::{integrate_stance, manifold_velocity, SimOptions};
use slipgait::slip::{slip_output, ConstantSlip};
use slipgait::analysis::{find_fixed_point, fit_nominal_gait, linearize_poincare, transverse_matrix, FitTargets, ReturnMap};
use slipgait::gait::{Mat6, NY};
use slipgait::{ControllerMode, Error, Gains, Model, ModelParams, RunConfig, State};

fn model() -> Model {
    Model::new(ModelParams::default()).unwrap()
}

#[test]
fn fitted_gait_reproduces_constructed_endpoints() {
    let m = model();
    let t = FitTargets::default();
    let g = fit_nominal_gait(&t, &m).unwrap();
    g.validate().unwrap();
    let (fs, fe) = fitted_endpoints(&g).unwrap();
    let (cs, ce) = constructed_endpoints(&t, &m).unwrap();
    for i in 0..NY {
        assert!((fs[i] - cs[i]).abs() < 1e-8);
        assert!((fe[i] - ce[i]).abs() < 1e-8);
    }
}

#[test]
fn fit_is_converged_in_sample_density() {
    let m = model();
    let t = FitTargets::default();
    let a = fit_nominal_gait(&t, &m).unwrap();
    let b = fit_nominal_gait(&FitTargets { samples: 2 * t.samples - 1, ..t }, &m).unwrap();
    let diff = a.alpha.iter().flatten().zip(b.alpha.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-6, "{diff:e}");
}

#[test]
fn fitted_gait_clears_the_ground() {
    let m = model();
    let g = fit_nominal_gait(&FitTargets::default(), &m).unwrap();
    let top = max_swing_height(&g, &m, 400).unwrap();
    assert!(top >= 0.04, "clearance {top}");
    // The swing foot stays above ground strictly inside the step.
    for i in 1..100 {
        let q = g.configuration_at(i as f64 / 100.0).unwrap();
        assert!(m.contact_geometry(&q).h_sw > 0.0);
    }
}

fn sorted(mut v: Vec<Complex<f64>>) -> Vec<Complex<f64>> {
    v.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
    v
}

/// Roots of `s^2 + kd s + kp` for each diagonal gain pair, plus `-k_s`.
fn analytic_roots(k_s: f64, kp: &[f64], kd: &[f64]) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::new(-k_s, 0.0)];
    for (p, d) in kp.iter().zip(kd) {
        let disc = d * d - 4.0 * p;
        if disc >= 0.0 {
            out.push(Complex::new((-d + disc.sqrt()) / 2.0, 0.0));
            out.push(Complex::new((-d - disc.sqrt()) / 2.0, 0.0));
        } else {
            out.push(Complex::new(-d / 2.0, (-disc).sqrt() / 2.0));
            out.push(Complex::new(-d / 2.0, -(-disc).sqrt() / 2.0));
        }
    }
    out
}

fn spd(entries: &[f64], diag: &[f64]) -> Mat6 {
    let l = Mat6::from_fn(|i, j| if j < i { entries[i * NY + j] } else { 0.0 });
    l * l.transpose() + Mat6::from_diagonal(&nalgebra::Vector6::from_column_slice(diag))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn diagonal_gains_match_analytic_spectrum(
        k_s in 0.5..50.0f64,
        kp in proptest::collection::vec(1.0..200.0f64, NY),
        ratio in proptest::collection::vec(prop_oneof![0.2..1.6f64, 2.4..5.0f64], NY),
    ) {
        // kd = ratio * sqrt(kp) keeps the discriminant away from a double root.
        let kd: Vec<f64> = kp.iter().zip(&ratio).map(|(p, r)| r * p.sqrt()).collect();
        let g = Gains::new(
            k_s,
            Mat6::from_diagonal(&nalgebra::Vector6::from_column_slice(&kp)),
            Mat6::from_diagonal(&nalgebra::Vector6::from_column_slice(&kd)),
        ).unwrap();
        let spec = transverse_matrix(&g);
        prop_assert!(spec.hurwitz);
        let (num, exact) = (sorted(spec.eigenvalues.clone()), sorted(analytic_roots(k_s, &kp, &kd)));
        prop_assert_eq!(num.len(), 2 * NY + 1);
        for (a, b) in num.iter().zip(&exact) {
            prop_assert!((a - b).norm() < 1e-10 * (1.0 + b.norm()), "{} vs {}", a, b);
        }
    }

    #[test]
    fn spd_gains_are_hurwitz(
        k_s in 0.1..50.0f64,
        lp in proptest::collection::vec(-5.0..5.0f64, NY * NY),
        ld in proptest::collection::vec(-3.0..3.0f64, NY * NY),
        dp in proptest::collection::vec(0.1..10.0f64, NY),
        dd in proptest::collection::vec(0.1..10.0f64, NY),
    ) {
        let g = Gains::new(k_s, spd(&lp, &dp), spd(&ld, &dd)).unwrap();
        let spec = transverse_matrix(&g);
        prop_assert!(spec.hurwitz);
        prop_assert!(spec.eigenvalues.iter().all(|e| e.re < 0.0));
        let block = sorted(block_eigenvalues(&g));
        let full = sorted(spec.eigenvalues.clone());
        for (a, b) in full.iter().zip(&block) {
            prop_assert!((a - b).norm() < 1e-6 * (1.0 + b.norm()));
        }
    }
}

#[test]
fn infeasible_seed_reports_no_convergence() {
    let cfg = RunConfig::nominal(ControllerMode::Controlled, 1).unwrap();
    let map = ReturnMap::new(&cfg, 0.0);
    let mut bad = seed_from_first_step(&map).unwrap();
    bad.q[2] = 1.3;
    match find_fixed_point(&map, &bad) {
        Err(Error::NoConvergence { iterations, .. }) => assert_eq!(iterations, 0),
        other => panic!("expected NoConvergence, got {other:?}"),
    }
}

#[test]
fn transverse_perturbations_decay_as_the_linear_model_predicts() {
    let cfg = RunConfig::nominal(ControllerMode::Controlled, 1).unwrap();
    let law = cfg.slip.law(1);
    let a = transverse_matrix(&cfg.gains).a_perp;
    let transverse = |x: &State| {
        let out = cfg.gait.holonomic_output(&x.q, &x.dq).unwrap();
        let mut z = DVector::zeros(2 * NY + 1);
        z.rows_mut(0, NY).copy_from(&out.y);
        z.rows_mut(NY, NY).copy_from(&out.ydot);
        z[2 * NY] = slip_output(&law, &x.q, &x.dq);
        z
    };
    let perturbed = |eps: f64| {
        let mut q = cfg.gait.configuration_at(0.0).unwrap();
        q[3] += 0.6 * eps;
        q[6] -= 0.6 * eps;
        let shifted = ConstantSlip { b_k: law.b_k + 0.5 * eps, ..law };
        let mut dq = manifold_velocity(&cfg.gait, &shifted, &q).unwrap();
        dq[4] += 0.2 * eps;
        State::new(q, dq)
    };
    let ctrl = cfg.controller(&law);

    // Across a full stance phase, up to touchdown.
    let x0 = perturbed(1e-3);
    let z0 = transverse(&x0);
    let st = integrate_stance(&ctrl, &x0, &cfg.options, 0.0, false);
    assert!(st.failure.is_none(), "{:?}", st.failure);
    let predicted = (&a * st.duration).exp() * &z0;
    let ratio = transverse(&st.x_end).norm() / predicted.norm();
    assert!((ratio - 1.0).abs() < 0.3, "ratio {ratio}");

    // Larger perturbation: decay no slower than the transverse spectrum allows.
    let x0 = perturbed(0.045);
    let z0 = transverse(&x0);
    assert!(z0.norm() > 0.04 && z0.norm() <= 0.05);
    let opts = SimOptions { max_stance_time: 0.4, ..cfg.options };
    let st = integrate_stance(&ctrl, &x0, &opts, 0.0, true);
    assert!(st.samples.len() > 350);
    assert!(slowest_rate(&transverse_matrix(&cfg.gains)) > 0.0);
    for s in &st.samples {
        let z = transverse(&s.state);
        let bound = (&a * s.t).exp().norm() * z0.norm();
        assert!(z.norm() <= 1.2 * bound, "t = {}: {:e} > {:e}", s.t, z.norm(), bound);
    }
}

#[test]
fn poincare_fixed_point_is_stable_and_robust() {
    let cfg = RunConfig::nominal(ControllerMode::Controlled, 1).unwrap();
    let map = ReturnMap::new(&cfg, 0.0);
    let seed = seed_from_first_step(&map).unwrap();
    let fixed = find_fixed_point(&map, &seed).unwrap();
    assert!(fixed.residual_norm < 1e-9);

    // Replaying the map reproduces the fixed point.
    let replay = map.apply(&fixed.chart_point).unwrap();
    assert!((&replay - &fixed.chart_point).amax() < 1e-9);

    let lin = linearize_poincare(&map, &fixed, 1e-6).unwrap();
    assert_eq!(lin.a_p.nrows(), CHART_DIM);
    assert!(lin.stable);
    assert!(lin.spectral_radius < 1.0);

    // Spectral radius insensitive to the difference step.
    let coarse = linearize_poincare(&map, &fixed, 1e-5).unwrap();
    assert!((coarse.spectral_radius - lin.spectral_radius).abs() < 1e-3);

    // Forward and central differences agree relative to the largest entry.
    let forward = jacobian(&map, &fixed.chart_point, 1e-6, false).unwrap();
    let scale = lin.a_p.amax();
    let diff = (&forward - &lin.a_p).amax();
    assert!(diff <= 1e-4 * scale, "{diff:e} vs {scale:e}");

    // Restarting at the fixed point needs no Newton step.
    let again = find_fixed_point(&map, &fixed.state).unwrap();
    assert!(again.iterations <= 1);

    // Perturbed rollouts contract towards the fixed point after a short transient.
    let mut c: DVector<f64> = fixed.chart_point.clone();
    c[3] += 1e-3 / 2f64.sqrt();
    c[9] -= 1e-3 / 2f64.sqrt();
    let mut dists = vec![(&c - &fixed.chart_point).norm()];
    let mut iterates = vec![c.clone()];
    for _ in 0..12 {
        c = map.apply(&c).unwrap();
        dists.push((&c - &fixed.chart_point).norm());
        iterates.push(c.clone());
    }
    for k in 3..dists.len() - 1 {
        assert!(dists[k + 1] < dists[k], "step {k}: {:e} -> {:e}", dists[k], dists[k + 1]);
    }
    assert!(dists.last().unwrap() < &dists[3]);
    let step = |k: usize| (&iterates[k + 1] - &iterates[k]).norm();
    // Successive increments shrink once the first impacts have mixed the perturbation.
    for k in 3..11 {
        assert!(step(k + 1) < step(k));
    }
    let json = lin.to_json();
    assert_eq!(json["dimension"], CHART_DIM);
    assert_eq!(json["stable"], true);
    assert_eq!(chart(&embed(&fixed.chart_point)), fixed.chart_point);
}
