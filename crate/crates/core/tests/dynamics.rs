use nalgebra::{SMatrix, Vector2};
use proptest::prelude::*;
use slipgait::dynamics::{Mat7, Vec7, NQ};
use slipgait::integrate::{integrate, Dopri5Options, Flow};
use slipgait::{Model, ModelParams, State, TangentialLaw};

fn model() -> Model {
    Model::new(ModelParams::default()).unwrap()
}

fn q_strategy() -> impl Strategy<Value = Vec7> {
    (
        -0.3..0.3f64,
        -0.05..0.05f64,
        -0.4..0.4f64,
        -0.8..0.8f64,
        -1.2..0.0f64,
        -0.8..0.8f64,
        -1.2..0.0f64,
    )
        .prop_map(|(a, b, c, d, e, f, g)| Vec7::from_column_slice(&[a, b, c, d, e, f, g]))
}

fn dq_strategy() -> impl Strategy<Value = Vec7> {
    proptest::collection::vec(-2.0..2.0f64, NQ).prop_map(|v| Vec7::from_column_slice(&v))
}

fn unit(i: usize) -> Vec7 {
    let mut e = Vec7::zeros();
    e[i] = 1.0;
    e
}

/// Five-point central difference of a vector function along `dir`.
fn fd5<const R: usize>(f: impl Fn(&Vec7) -> SMatrix<f64, R, 1>, q: &Vec7, dir: &Vec7, h: f64) -> SMatrix<f64, R, 1> {
    let at = |s: f64| f(&(q + dir * s));
    (at(-2.0 * h) - at(-h) * 8.0 + at(h) * 8.0 - at(2.0 * h)) / (12.0 * h)
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mass_matrix_spd(q in q_strategy()) {
        let d = model().mass_matrix(&q);
        prop_assert!((d - d.transpose()).amax() < 1e-12);
        let eig = d.symmetric_eigen().eigenvalues;
        prop_assert!(eig.min() > 0.0);
    }

    #[test]
    fn passivity_skew_symmetry(q in q_strategy(), dq in dq_strategy()) {
        let m = model();
        let c = m.coriolis_matrix(&q, &dq);
        let h = 3e-4;
        let d = |s: f64| m.mass_matrix(&(q + dq * s));
        let d_dot = (d(-2.0 * h) - d(-h) * 8.0 + d(h) * 8.0 - d(2.0 * h)) / (12.0 * h);
        let n = d_dot - c * 2.0;
        let scale = 1.0 + d_dot.amax();
        prop_assert!((n + n.transpose()).amax() < 1e-8 * scale, "max |N + N^T| = {}", (n + n.transpose()).amax());
        let analytic = m.mass_matrix_rate(&q, &dq);
        prop_assert!((analytic - d_dot).amax() < 1e-8 * scale);
    }

    #[test]
    fn gravity_is_potential_gradient(q in q_strategy()) {
        let m = model();
        let g = m.gravity_vector(&q);
        for i in 0..NQ {
            let fd = fd5(|x| SMatrix::<f64, 1, 1>::new(m.potential_energy(x)), &q, &unit(i), 1e-4)[0];
            prop_assert!(rel_close(g[i], fd, 1e-6), "G[{i}] {} vs {}", g[i], fd);
        }
    }

    #[test]
    fn foot_jacobians_match_finite_differences(q in q_strategy()) {
        let m = model();
        let geo = m.contact_geometry(&q);
        for i in 0..NQ {
            let e = unit(i);
            let jf = fd5(|x| m.contact_geometry(x).p_f, &q, &e, 1e-4);
            let ji = fd5(|x| m.contact_geometry(x).p_sw, &q, &e, 1e-4);
            let jh = fd5(|x| SMatrix::<f64, 1, 1>::new(m.contact_geometry(x).h_sw), &q, &e, 1e-4)[0];
            for r in 0..2 {
                prop_assert!(rel_close(geo.j_f[(r, i)], jf[r], 1e-6));
                prop_assert!(rel_close(geo.j_i[(r, i)], ji[r], 1e-6));
            }
            prop_assert!(rel_close(geo.j_hsw[i], jh, 1e-6));
        }
    }

    #[test]
    fn foot_bias_is_jacobian_rate(q in q_strategy(), dq in dq_strategy()) {
        let m = model();
        let h = 1e-5;
        let rate = |f: &dyn Fn(&Vec7) -> SMatrix<f64, 2, 7>| (f(&(q + dq * h)) - f(&(q - dq * h))) / (2.0 * h) * dq;
        let sw: Vector2<f64> = rate(&|x| m.contact_geometry(x).j_i);
        let st: Vector2<f64> = rate(&|x| m.contact_geometry(x).j_f);
        prop_assert!((m.swing_foot_bias(&q, &dq) - sw).amax() < 1e-6);
        prop_assert!((m.stance_foot_bias(&q, &dq) - st).amax() < 1e-6);
    }

    #[test]
    fn equations_of_motion_residual(q in q_strategy(), dq in dq_strategy(), u in dq_strategy()) {
        let m = model();
        let u = u * 20.0;
        let (ddq, contact) = m.forward_dynamics(&q, &dq, &u).unwrap();
        let geo = m.contact_geometry(&q);
        let lhs = m.mass_matrix(&q) * ddq + m.coriolis_matrix(&q, &dq) * dq + m.gravity_vector(&q);
        let rhs = m.actuation() * u + geo.j_f.transpose() * contact.forces.as_vector();
        prop_assert!((lhs - rhs).amax() < 1e-10 * (1.0 + rhs.amax()));
        // Stabilized normal-acceleration condition.
        let v_n = (geo.j_f.row(1) * dq)[0];
        let acc = (geo.j_f.row(1) * ddq)[0] + m.stance_foot_bias(&q, &dq)[1];
        let omega = slipgait::dynamics::BAUMGARTE_OMEGA;
        let residual = acc + 2.0 * omega * v_n + omega * omega * geo.p_f[1];
        prop_assert!(residual.abs() < 1e-9, "normal residual {residual:e}");
    }
}

#[test]
fn energy_is_conserved_without_input_or_friction() {
    let m = model();
    // Stance foot on the ground and at rest in the normal direction.
    let q = Vec7::from_column_slice(&[0.02, 0.0, 0.05, 0.25, -0.3, -0.2, -0.4]);
    let dq = Vec7::from_column_slice(&[0.3, 0.0, -0.1, 0.4, 0.2, -0.5, 0.3]);
    let x0 = State::new(q, dq);
    let e0 = m.total_energy(&x0);
    let opts = Dopri5Options { rtol: 1e-11, atol: 1e-13, ..Dopri5Options::default() };
    let mut worst: f64 = 0.0;
    let out = integrate(
        |_, x| {
            let s = State::from_vector(x);
            let (ddq, _) = m.forward_dynamics(&s.q, &s.dq, &Vec7::zeros())?;
            let mut dx = *x;
            dx.fixed_rows_mut::<7>(0).copy_from(&s.dq);
            dx.fixed_rows_mut::<7>(7).copy_from(&ddq);
            Ok(dx)
        },
        0.0,
        x0.to_vector(),
        0.3,
        &opts,
        |step| {
            let e = m.total_energy(&State::from_vector(&step.end()));
            worst = worst.max((e - e0).abs() / e0.abs());
            Ok(Flow::Continue)
        },
    )
    .unwrap();
    assert!((out.t - 0.3).abs() < 1e-12);
    assert!(worst < 1e-6, "relative energy drift {worst:e}");
}

#[test]
fn power_balance_with_input() {
    let m = model();
    let q = Vec7::from_column_slice(&[0.0, 0.0, 0.05, 0.2, -0.3, -0.2, -0.4]);
    let dq = Vec7::from_column_slice(&[0.4, 0.0, 0.1, -0.3, 0.2, 0.6, -0.2]);
    let u = Vec7::from_column_slice(&[0.0, 0.0, 3.0, -5.0, 2.0, 1.0, -1.5]);
    let (ddq, contact) = m.forward_dynamics(&q, &dq, &u).unwrap();
    let h = 1e-6;
    let e = |s: f64| m.total_energy(&State::new(q + dq * s + ddq * (0.5 * s * s), dq + ddq * s));
    let de = (e(h) - e(-h)) / (2.0 * h);
    let geo = m.contact_geometry(&q);
    let power = (m.actuation() * u).dot(&dq) + (geo.j_f.transpose() * contact.forces.as_vector()).dot(&dq);
    assert!((de - power).abs() < 1e-5 * (1.0 + power.abs()), "{de} vs {power}");
}

#[test]
fn prescribed_tangential_force_is_applied() {
    let mut p = ModelParams::default();
    p.tangential_law = TangentialLaw::Prescribed { force: 12.5 };
    let m = Model::new(p).unwrap();
    let q = Vec7::from_column_slice(&[0.0, 0.0, 0.05, 0.2, -0.3, -0.2, -0.4]);
    let c = m.contact_forces(&q, &Vec7::zeros(), &Vec7::zeros()).unwrap();
    assert_eq!(c.forces.lambda_t, 12.5);
    assert!(c.valid);
}

#[test]
fn non_identity_actuation_reaches_equations() {
    let mut p = ModelParams::default();
    let mut b = Mat7::identity();
    b[(3, 2)] = -1.0;
    p.actuation = (0..NQ).map(|i| (0..NQ).map(|j| b[(i, j)]).collect()).collect();
    let m = Model::new(p).unwrap();
    let q = Vec7::from_column_slice(&[0.0, 0.0, 0.05, 0.2, -0.3, -0.2, -0.4]);
    let dq = Vec7::from_column_slice(&[0.4, 0.0, 0.1, -0.3, 0.2, 0.6, -0.2]);
    let u = Vec7::from_column_slice(&[0.0, 0.0, 3.0, -5.0, 2.0, 1.0, -1.5]);
    let (ddq, contact) = m.forward_dynamics(&q, &dq, &u).unwrap();
    let lhs = m.mass_matrix(&q) * ddq + m.bias_forces(&q, &dq);
    let rhs = b * u + m.contact_geometry(&q).j_f.transpose() * contact.forces.as_vector();
    assert!((lhs - rhs).amax() < 1e-10);
}
