//! Planar five-link biped with a floating base.
//!
//! Generalized coordinates, in order:
//!
//! | index | coordinate                                   |
//! |-------|----------------------------------------------|
//! | 0     | hip horizontal position (m)                  |
//! | 1     | stance-foot height (m)                       |
//! | 2     | torso pitch, absolute, forward positive (rad)|
//! | 3     | stance hip, thigh relative to torso (rad)    |
//! | 4     | stance knee, shank relative to thigh (rad)   |
//! | 5     | swing hip (rad)                              |
//! | 6     | swing knee (rad)                             |
//!
//! The base is split between the hip (horizontal) and the stance foot
//! (vertical), so every body point translates one-to-one with `q[0]`
//! horizontally and with `q[1]` vertically, and the normal contact constraint
//! at the stance foot is the linear relation `q[1] = 0`.
//!
//! Leg link directions are measured from the downward vertical, positive when
//! the distal end is ahead of the proximal joint. All absolute link angles are
//! linear in `q`, which keeps every Jacobian and its derivatives closed-form.

use nalgebra::{Cholesky, SMatrix, SVector, Vector2, U7};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec7 = SVector<f64, 7>;
pub type Mat7 = SMatrix<f64, 7, 7>;
pub type Row7 = SMatrix<f64, 1, 7>;
pub type Jac2 = SMatrix<f64, 2, 7>;

/// Number of generalized coordinates.
pub const NQ: usize = 7;

/// Natural frequency of the Baumgarte stabilization of the normal contact (1/s).
pub const BAUMGARTE_OMEGA: f64 = 50.0;

/// Below this tangential speed the Coulomb sign function is linearly regularized.
pub const SLIP_VELOCITY_EPS: f64 = 1e-6;

const CONTACT_OPERATOR_FLOOR: f64 = 1e-10;
const MASS_CONDITION_CEILING: f64 = 1e12;

pub mod coord {
    pub const HIP_X: usize = 0;
    pub const FOOT_Y: usize = 1;
    pub const TORSO: usize = 2;
    pub const STANCE_HIP: usize = 3;
    pub const STANCE_KNEE: usize = 4;
    pub const SWING_HIP: usize = 5;
    pub const SWING_KNEE: usize = 6;
}

// Kinematic link order used internally.
const TORSO: usize = 0;
const ST_THIGH: usize = 1;
const ST_SHANK: usize = 2;
const SW_THIGH: usize = 3;
const SW_SHANK: usize = 4;

/// Absolute link angle = `LINK_ANGLE[link] . q`.
const LINK_ANGLE: [[f64; NQ]; 5] = [
    [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0],
];

/// Tangential ground-reaction law applied during stance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TangentialLaw {
    /// `lambda_t = 0`.
    #[default]
    Frictionless,
    /// Kinetic Coulomb friction `lambda_t = -mu_kinetic * lambda_n * sign(v_t)`.
    Coulomb,
    /// A fixed tangential force (N).
    Prescribed { force: f64 },
}

/// Physical parameters of the biped.
///
/// Per-link arrays are ordered `[torso, thigh, thigh, shank, shank]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub link_masses: [f64; 5],
    pub link_lengths: [f64; 5],
    pub link_com_offsets: [f64; 5],
    pub link_inertias: [f64; 5],
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    #[serde(default)]
    pub mu_kinetic: f64,
    /// Constant 7x7 actuation matrix, row-major.
    #[serde(default = "identity_actuation")]
    pub actuation: Vec<Vec<f64>>,
    #[serde(default)]
    pub tangential_law: TangentialLaw,
}

fn default_gravity() -> f64 {
    9.81
}

fn identity_actuation() -> Vec<Vec<f64>> {
    (0..NQ)
        .map(|i| (0..NQ).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

impl Default for ModelParams {
    fn default() -> Self {
        let masses = [20.0, 5.0, 5.0, 3.0, 3.0];
        let lengths = [0.5, 0.4, 0.4, 0.4, 0.4];
        let mut inertias = [0.0; 5];
        for i in 0..5 {
            inertias[i] = masses[i] * lengths[i] * lengths[i] / 12.0;
        }
        Self {
            link_masses: masses,
            link_lengths: lengths,
            link_com_offsets: [0.25, 0.2, 0.2, 0.2, 0.2],
            link_inertias: inertias,
            gravity: default_gravity(),
            mu_kinetic: 0.0,
            actuation: identity_actuation(),
            tangential_law: TangentialLaw::Frictionless,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("link_masses", &self.link_masses),
            ("link_lengths", &self.link_lengths),
            ("link_inertias", &self.link_inertias),
        ];
        for (name, values) in named {
            if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::Validation(format!("{name} must be strictly positive")));
            }
        }
        if self.link_com_offsets.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("link_com_offsets must be finite".into()));
        }
        // Leg swapping relabels the legs, so both legs must be identical.
        for (a, b) in [(1, 2), (3, 4)] {
            if self.link_masses[a] != self.link_masses[b]
                || self.link_lengths[a] != self.link_lengths[b]
                || self.link_com_offsets[a] != self.link_com_offsets[b]
                || self.link_inertias[a] != self.link_inertias[b]
            {
                return Err(Error::Validation("left and right leg links must be identical".into()));
            }
        }
        if !self.gravity.is_finite() || self.gravity < 0.0 {
            return Err(Error::Validation("gravity must be finite and non-negative".into()));
        }
        if !(self.mu_kinetic.is_finite() && self.mu_kinetic >= 0.0) {
            return Err(Error::Validation("mu_kinetic must be non-negative".into()));
        }
        if let TangentialLaw::Prescribed { force } = self.tangential_law {
            if !force.is_finite() {
                return Err(Error::Validation("prescribed tangential force must be finite".into()));
            }
        }
        let b = self.actuation_matrix()?;
        let rank = b.svd(false, false).rank(1e-10);
        if rank != NQ {
            return Err(Error::Validation(format!(
                "actuation matrix must have full column rank 7 (rank {rank})"
            )));
        }
        Ok(())
    }

    pub fn actuation_matrix(&self) -> Result<Mat7> {
        if self.actuation.len() != NQ || self.actuation.iter().any(|r| r.len() != NQ) {
            return Err(Error::Validation("actuation must be a 7x7 matrix".into()));
        }
        if self.actuation.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("actuation entries must be finite".into()));
        }
        Ok(Mat7::from_fn(|i, j| self.actuation[i][j]))
    }

    pub fn total_mass(&self) -> f64 {
        self.link_masses.iter().sum()
    }
}

/// Configuration and generalized velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q: Vec7,
    pub dq: Vec7,
}

impl State {
    pub fn new(q: Vec7, dq: Vec7) -> Self {
        Self { q, dq }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.dq.iter()).all(|v| v.is_finite())
    }

    pub fn to_vector(&self) -> SVector<f64, 14> {
        let mut x = SVector::<f64, 14>::zeros();
        x.fixed_rows_mut::<7>(0).copy_from(&self.q);
        x.fixed_rows_mut::<7>(7).copy_from(&self.dq);
        x
    }

    pub fn from_vector(x: &SVector<f64, 14>) -> Self {
        Self {
            q: x.fixed_rows::<7>(0).into_owned(),
            dq: x.fixed_rows::<7>(7).into_owned(),
        }
    }
}

/// Ground reaction at the stance foot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactForces {
    pub lambda_t: f64,
    pub lambda_n: f64,
}

impl ContactForces {
    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.lambda_t, self.lambda_n)
    }
}

/// Contact forces together with the stance validity flag (`lambda_n >= 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactSolution {
    pub forces: ContactForces,
    pub valid: bool,
}

/// Foot positions and Jacobians at one configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactGeometry {
    pub p_f: Vector2<f64>,
    pub p_sw: Vector2<f64>,
    /// Stance-foot Jacobian; coincides with the contact Jacobian `J_c`.
    pub j_f: Jac2,
    /// Swing-foot Jacobian, the impact contact Jacobian.
    pub j_i: Jac2,
    pub h_sw: f64,
    pub j_hsw: Row7,
}

/// A body point written as `(q0 + sum a sin(psi), q1 + sum b cos(psi))`.
#[derive(Debug, Clone)]
struct ChainPoint {
    sin_terms: Vec<(usize, f64)>,
    cos_terms: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy)]
struct Trig {
    sin: [f64; 5],
    cos: [f64; 5],
}

impl Trig {
    fn new(q: &Vec7) -> Self {
        let mut sin = [0.0; 5];
        let mut cos = [0.0; 5];
        for l in 0..5 {
            let psi = link_angle(l, q);
            sin[l] = psi.sin();
            cos[l] = psi.cos();
        }
        Self { sin, cos }
    }
}

fn link_angle(link: usize, v: &Vec7) -> f64 {
    LINK_ANGLE[link].iter().zip(v.iter()).map(|(c, x)| c * x).sum()
}

fn link_row(link: usize) -> Row7 {
    Row7::from_row_slice(&LINK_ANGLE[link])
}

impl ChainPoint {
    fn position(&self, q: &Vec7, t: &Trig) -> Vector2<f64> {
        let x = q[0] + self.sin_terms.iter().map(|&(l, a)| a * t.sin[l]).sum::<f64>();
        let y = q[1] + self.cos_terms.iter().map(|&(l, b)| b * t.cos[l]).sum::<f64>();
        Vector2::new(x, y)
    }

    fn jacobian(&self, t: &Trig) -> Jac2 {
        let mut j = Jac2::zeros();
        j[(0, 0)] = 1.0;
        j[(1, 1)] = 1.0;
        for &(l, a) in &self.sin_terms {
            for k in 0..NQ {
                j[(0, k)] += a * t.cos[l] * LINK_ANGLE[l][k];
            }
        }
        for &(l, b) in &self.cos_terms {
            for k in 0..NQ {
                j[(1, k)] -= b * t.sin[l] * LINK_ANGLE[l][k];
            }
        }
        j
    }

    /// `dJ/dq_i`.
    fn jacobian_partial(&self, t: &Trig, i: usize) -> Jac2 {
        let mut j = Jac2::zeros();
        for &(l, a) in &self.sin_terms {
            let ci = LINK_ANGLE[l][i];
            if ci != 0.0 {
                for k in 0..NQ {
                    j[(0, k)] -= a * t.sin[l] * ci * LINK_ANGLE[l][k];
                }
            }
        }
        for &(l, b) in &self.cos_terms {
            let ci = LINK_ANGLE[l][i];
            if ci != 0.0 {
                for k in 0..NQ {
                    j[(1, k)] -= b * t.cos[l] * ci * LINK_ANGLE[l][k];
                }
            }
        }
        j
    }

    /// `dJ/dt * dq`.
    fn jdot_dq(&self, t: &Trig, dq: &Vec7) -> Vector2<f64> {
        let mut out = Vector2::zeros();
        for &(l, a) in &self.sin_terms {
            let w = link_angle(l, dq);
            out[0] -= a * t.sin[l] * w * w;
        }
        for &(l, b) in &self.cos_terms {
            let w = link_angle(l, dq);
            out[1] -= b * t.cos[l] * w * w;
        }
        out
    }
}

/// Everything the controllers and the forward dynamics need at one state.
#[derive(Debug, Clone)]
pub struct StanceTerms {
    pub mass: Mat7,
    pub chol: Cholesky<f64, U7>,
    /// `C(q, dq) dq + G(q)`.
    pub bias: Vec7,
    pub contact: ContactGeometry,
    /// Tangential stance-foot velocity `v_t`.
    pub v_t: f64,
    /// `lambda_t = tau * lambda_n + lambda_t0` for the configured law.
    pub tau: f64,
    pub lambda_t0: f64,
    /// Generalized force produced by a unit normal force, friction coupling included.
    pub normal_direction: Vec7,
    /// Generalized force of the `lambda_n`-independent tangential force.
    pub tangential_offset: Vec7,
    /// Right-hand side of the stabilized normal-acceleration condition.
    pub normal_accel_target: f64,
}

impl StanceTerms {
    pub fn solve_mass(&self, rhs: &Vec7) -> Vec7 {
        self.chol.solve(rhs)
    }

    /// Generalized contact force `J_c^T lambda`.
    pub fn contact_generalized(&self, forces: &ContactForces) -> Vec7 {
        self.contact.j_f.transpose() * forces.as_vector()
    }

    /// Tangential force implied by the configured law for a normal force.
    pub fn tangential_for(&self, lambda_n: f64) -> f64 {
        self.tau * lambda_n + self.lambda_t0
    }
}

/// Validated model with precomputed kinematic structure.
#[derive(Debug, Clone)]
pub struct Model {
    params: ModelParams,
    actuation: Mat7,
    com: [ChainPoint; 5],
    stance_foot: ChainPoint,
    swing_foot: ChainPoint,
    hip: ChainPoint,
    masses: [f64; 5],
    inertias: [f64; 5],
}

impl Model {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.validate()?;
        let actuation = params.actuation_matrix()?;
        let [_, lt, _, ls, _] = params.link_lengths;
        let [ct_torso, ct, _, cs, _] = params.link_com_offsets;
        // Hip height above the stance foot is lt cos(psi1) + ls cos(psi2).
        let up = vec![(ST_THIGH, lt), (ST_SHANK, ls)];
        let with_up = |extra: &[(usize, f64)]| {
            let mut v = up.clone();
            v.extend_from_slice(extra);
            v
        };
        let com = [
            ChainPoint { sin_terms: vec![(TORSO, ct_torso)], cos_terms: with_up(&[(TORSO, ct_torso)]) },
            ChainPoint { sin_terms: vec![(ST_THIGH, ct)], cos_terms: vec![(ST_THIGH, lt - ct), (ST_SHANK, ls)] },
            ChainPoint { sin_terms: vec![(ST_THIGH, lt), (ST_SHANK, cs)], cos_terms: vec![(ST_SHANK, ls - cs)] },
            ChainPoint { sin_terms: vec![(SW_THIGH, ct)], cos_terms: with_up(&[(SW_THIGH, -ct)]) },
            ChainPoint {
                sin_terms: vec![(SW_THIGH, lt), (SW_SHANK, cs)],
                cos_terms: with_up(&[(SW_THIGH, -lt), (SW_SHANK, -cs)]),
            },
        ];
        let m = params.link_masses;
        let inertia = params.link_inertias;
        Ok(Self {
            actuation,
            com,
            stance_foot: ChainPoint { sin_terms: vec![(ST_THIGH, lt), (ST_SHANK, ls)], cos_terms: vec![] },
            swing_foot: ChainPoint {
                sin_terms: vec![(SW_THIGH, lt), (SW_SHANK, ls)],
                cos_terms: with_up(&[(SW_THIGH, -lt), (SW_SHANK, -ls)]),
            },
            hip: ChainPoint { sin_terms: vec![], cos_terms: up },
            masses: [m[0], m[1], m[3], m[2], m[4]],
            inertias: [inertia[0], inertia[1], inertia[3], inertia[2], inertia[4]],
            params,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn actuation(&self) -> &Mat7 {
        &self.actuation
    }

    pub fn thigh_length(&self) -> f64 {
        self.params.link_lengths[1]
    }

    pub fn shank_length(&self) -> f64 {
        self.params.link_lengths[3]
    }

    /// Inertia matrix `D(q)`.
    pub fn mass_matrix(&self, q: &Vec7) -> Mat7 {
        let t = Trig::new(q);
        let mut d = Mat7::zeros();
        for l in 0..5 {
            let j = self.com[l].jacobian(&t);
            d += self.masses[l] * j.transpose() * j;
            let c = link_row(l);
            d += self.inertias[l] * c.transpose() * c;
        }
        d
    }

    /// `dD/dq_i` for every coordinate.
    pub fn mass_matrix_partials(&self, q: &Vec7) -> [Mat7; NQ] {
        let t = Trig::new(q);
        let jac: Vec<Jac2> = self.com.iter().map(|p| p.jacobian(&t)).collect();
        let mut out = [Mat7::zeros(); NQ];
        // Base translations leave D unchanged.
        for (i, slot) in out.iter_mut().enumerate().skip(2) {
            for l in 0..5 {
                let dj = self.com[l].jacobian_partial(&t, i);
                let prod = dj.transpose() * jac[l];
                *slot += self.masses[l] * (prod + prod.transpose());
            }
        }
        out
    }

    /// Coriolis matrix from the Christoffel symbols of `D`.
    pub fn coriolis_matrix(&self, q: &Vec7, dq: &Vec7) -> Mat7 {
        let partials = self.mass_matrix_partials(q);
        let mut d_dot = Mat7::zeros();
        let mut e = Mat7::zeros();
        for i in 0..NQ {
            d_dot += partials[i] * dq[i];
            e.set_column(i, &(partials[i] * dq));
        }
        0.5 * (d_dot + e - e.transpose())
    }

    /// `dD/dt` along the velocity `dq`.
    pub fn mass_matrix_rate(&self, q: &Vec7, dq: &Vec7) -> Mat7 {
        let partials = self.mass_matrix_partials(q);
        (0..NQ).fold(Mat7::zeros(), |acc, i| acc + partials[i] * dq[i])
    }

    pub fn gravity_vector(&self, q: &Vec7) -> Vec7 {
        let t = Trig::new(q);
        let g = self.params.gravity;
        let mut out = Vec7::zeros();
        for l in 0..5 {
            let j = self.com[l].jacobian(&t);
            out += self.masses[l] * g * j.row(1).transpose();
        }
        out
    }

    /// `C(q, dq) dq + G(q)`.
    pub fn bias_forces(&self, q: &Vec7, dq: &Vec7) -> Vec7 {
        self.coriolis_matrix(q, dq) * dq + self.gravity_vector(q)
    }

    pub fn potential_energy(&self, q: &Vec7) -> f64 {
        let t = Trig::new(q);
        (0..5)
            .map(|l| self.masses[l] * self.params.gravity * self.com[l].position(q, &t)[1])
            .sum()
    }

    pub fn kinetic_energy(&self, q: &Vec7, dq: &Vec7) -> f64 {
        0.5 * dq.dot(&(self.mass_matrix(q) * dq))
    }

    pub fn total_energy(&self, state: &State) -> f64 {
        self.kinetic_energy(&state.q, &state.dq) + self.potential_energy(&state.q)
    }

    pub fn contact_geometry(&self, q: &Vec7) -> ContactGeometry {
        let t = Trig::new(q);
        let p_sw = self.swing_foot.position(q, &t);
        let j_i = self.swing_foot.jacobian(&t);
        ContactGeometry {
            p_f: self.stance_foot.position(q, &t),
            p_sw,
            j_f: self.stance_foot.jacobian(&t),
            j_i,
            h_sw: p_sw[1],
            j_hsw: j_i.row(1).into_owned(),
        }
    }

    /// `dJ_i/dt * dq` for the swing foot.
    pub fn swing_foot_bias(&self, q: &Vec7, dq: &Vec7) -> Vector2<f64> {
        self.swing_foot.jdot_dq(&Trig::new(q), dq)
    }

    /// `dJ_f/dt * dq` for the stance foot.
    pub fn stance_foot_bias(&self, q: &Vec7, dq: &Vec7) -> Vector2<f64> {
        self.stance_foot.jdot_dq(&Trig::new(q), dq)
    }

    pub fn hip_position(&self, q: &Vec7) -> Vector2<f64> {
        self.hip.position(q, &Trig::new(q))
    }

    pub fn hip_height(&self, q: &Vec7) -> f64 {
        self.hip_position(q)[1]
    }

    /// Hip, torso tip, stance knee, stance foot, swing knee and swing foot, for drawing.
    pub fn joint_positions(&self, q: &Vec7) -> [[f64; 2]; 6] {
        let t = Trig::new(q);
        let [lto, lt, _, ls, _] = self.params.link_lengths;
        let hip = self.hip_position(q);
        let along = |from: Vector2<f64>, l: usize, len: f64, sign: f64| {
            from + Vector2::new(len * t.sin[l], sign * len * t.cos[l])
        };
        let st_knee = along(hip, ST_THIGH, lt, -1.0);
        let sw_knee = along(hip, SW_THIGH, lt, -1.0);
        [
            hip,
            along(hip, TORSO, lto, 1.0),
            st_knee,
            along(st_knee, ST_SHANK, ls, -1.0),
            sw_knee,
            along(sw_knee, SW_SHANK, ls, -1.0),
        ]
        .map(|p| [p[0], p[1]])
    }

    /// Horizontal hip offset from the stance foot, `x_hip - x_foot`.
    pub fn stance_leg_reach(&self, q: &Vec7) -> f64 {
        let t = Trig::new(q);
        -(self.thigh_length() * t.sin[ST_THIGH] + self.shank_length() * t.sin[ST_SHANK])
    }

    /// Horizontal hip offset from the swing foot, `x_hip - x_swing_foot`.
    pub fn swing_leg_reach(&self, q: &Vec7) -> f64 {
        let t = Trig::new(q);
        -(self.thigh_length() * t.sin[SW_THIGH] + self.shank_length() * t.sin[SW_SHANK])
    }

    pub fn center_of_mass(&self, q: &Vec7) -> Vector2<f64> {
        let t = Trig::new(q);
        let total: f64 = self.masses.iter().sum();
        (0..5).fold(Vector2::zeros(), |acc, l| acc + self.masses[l] * self.com[l].position(q, &t)) / total
    }

    fn tangential_coupling(&self, v_t: f64) -> (f64, f64) {
        match self.params.tangential_law {
            TangentialLaw::Frictionless => (0.0, 0.0),
            TangentialLaw::Coulomb => (-self.params.mu_kinetic * regularized_sign(v_t), 0.0),
            TangentialLaw::Prescribed { force } => (0.0, force),
        }
    }

    /// Evaluates the mass matrix, bias forces and contact quantities at a state.
    pub fn stance_terms(&self, q: &Vec7, dq: &Vec7) -> Result<StanceTerms> {
        let mass = self.mass_matrix(q);
        let chol = Cholesky::new(mass).ok_or(Error::SingularMass(f64::INFINITY))?;
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        let cond = (hi / lo).powi(2);
        if !(cond <= MASS_CONDITION_CEILING) {
            return Err(Error::SingularMass(cond));
        }
        let contact = self.contact_geometry(q);
        let v_t = (contact.j_f.row(0) * dq)[0];
        let (tau, lambda_t0) = self.tangential_coupling(v_t);
        let jt = contact.j_f.row(0).transpose();
        let jn = contact.j_f.row(1).transpose();
        let foot_bias = self.stance_foot_bias(q, dq);
        let p_n = contact.p_f[1];
        let v_n = (contact.j_f.row(1) * dq)[0];
        let normal_accel_target =
            -foot_bias[1] - 2.0 * BAUMGARTE_OMEGA * v_n - BAUMGARTE_OMEGA * BAUMGARTE_OMEGA * p_n;
        Ok(StanceTerms {
            bias: self.bias_forces(q, dq),
            mass,
            chol,
            v_t,
            tau,
            lambda_t0,
            normal_direction: jn + tau * jt,
            tangential_offset: lambda_t0 * jt,
            normal_accel_target,
            contact,
        })
    }

    /// Ground reaction at the stance foot for a given input.
    pub fn contact_forces(&self, q: &Vec7, dq: &Vec7, u: &Vec7) -> Result<ContactSolution> {
        let terms = self.stance_terms(q, dq)?;
        self.contact_forces_with(&terms, u)
    }

    pub fn contact_forces_with(&self, terms: &StanceTerms, u: &Vec7) -> Result<ContactSolution> {
        let (lambda_n0, per_unit) = self.normal_force_affine(terms)?;
        let lambda_n = lambda_n0 + per_unit.dot(u);
        let forces = ContactForces { lambda_t: terms.tangential_for(lambda_n), lambda_n };
        Ok(ContactSolution { forces, valid: lambda_n >= 0.0 })
    }

    /// The normal force is affine in the input: `lambda_n = a + b . u`.
    pub fn normal_force_affine(&self, terms: &StanceTerms) -> Result<(f64, Vec7)> {
        let jn = terms.contact.j_f.row(1).transpose();
        let dinv_c = terms.solve_mass(&terms.normal_direction);
        let operator = jn.dot(&dinv_c);
        if operator.abs() < CONTACT_OPERATOR_FLOOR {
            return Err(Error::SingularContact(operator));
        }
        let drift = terms.solve_mass(&(terms.tangential_offset - terms.bias));
        let lambda0 = (terms.normal_accel_target - jn.dot(&drift)) / operator;
        // d lambda / du = -(J_n D^-1 B) / operator
        let per_unit = -(self.actuation.transpose() * terms.solve_mass(&jn)) / operator;
        Ok((lambda0, per_unit))
    }

    /// Constrained stance accelerations.
    pub fn forward_dynamics(&self, q: &Vec7, dq: &Vec7, u: &Vec7) -> Result<(Vec7, ContactSolution)> {
        let terms = self.stance_terms(q, dq)?;
        self.forward_dynamics_with(&terms, u)
    }

    pub fn forward_dynamics_with(&self, terms: &StanceTerms, u: &Vec7) -> Result<(Vec7, ContactSolution)> {
        let contact = self.contact_forces_with(terms, u)?;
        let forcing = self.actuation * u + terms.contact_generalized(&contact.forces) - terms.bias;
        Ok((terms.solve_mass(&forcing), contact))
    }

    /// Accelerations for prescribed contact forces (no constraint solve).
    pub fn accelerations_given_forces(&self, terms: &StanceTerms, u: &Vec7, forces: &ContactForces) -> Vec7 {
        let forcing = self.actuation * u + terms.contact_generalized(forces) - terms.bias;
        terms.solve_mass(&forcing)
    }
}

/// `sign(v)` with a linear ramp on `|v| <= SLIP_VELOCITY_EPS`.
pub fn regularized_sign(v: f64) -> f64 {
    if v.abs() > SLIP_VELOCITY_EPS {
        v.signum()
    } else {
        v / SLIP_VELOCITY_EPS
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand::rngs::StdRng;

    fn model() -> Model {
        Model::new(ModelParams::default()).unwrap()
    }

    fn random_q(rng: &mut StdRng) -> Vec7 {
        Vec7::from_fn(|i, _| match i {
            0 => rng.gen_range(-0.3..0.3),
            1 => rng.gen_range(-0.05..0.05),
            _ => rng.gen_range(-1.0..1.0),
        })
    }

    fn random_v(rng: &mut StdRng) -> Vec7 {
        Vec7::from_fn(|_, _| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn mass_matrix_symmetric_with_total_mass_translation() {
        let m = model();
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..50 {
            let d = m.mass_matrix(&random_q(&mut rng));
            assert!((d - d.transpose()).amax() < 1e-12);
            assert!((d[(0, 0)] - 36.0).abs() < 1e-12);
            assert!((d[(1, 1)] - 36.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mass_matrix_positive_definite() {
        let m = model();
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..100 {
            let q = random_q(&mut rng);
            let v = random_v(&mut rng);
            assert!(v.dot(&(m.mass_matrix(&q) * v)) > 0.0);
            assert!(m.mass_matrix(&q).symmetric_eigenvalues().min() > 0.0);
        }
    }

    #[test]
    fn no_gravity_no_velocity_no_bias() {
        let params = ModelParams { gravity: 0.0, ..ModelParams::default() };
        let m = Model::new(params).unwrap();
        let q = Vec7::from_column_slice(&[0.1, 0.0, 0.1, 0.3, -0.4, -0.2, -0.3]);
        assert_eq!(m.bias_forces(&q, &Vec7::zeros()), Vec7::zeros());
    }

    #[test]
    fn coriolis_matches_point_mass_form() {
        // For point masses plus planar rotations, C dq = sum m J^T (dJ/dt dq).
        let m = model();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..20 {
            let q = random_q(&mut rng);
            let dq = random_v(&mut rng);
            let t = Trig::new(&q);
            let mut expected = Vec7::zeros();
            for l in 0..5 {
                let j = m.com[l].jacobian(&t);
                expected += m.masses[l] * j.transpose() * m.com[l].jdot_dq(&t, &dq);
            }
            let got = m.coriolis_matrix(&q, &dq) * dq;
            assert!((got - expected).amax() < 1e-10, "{}", (got - expected).amax());
        }
    }

    #[test]
    fn static_pose_normal_force_is_weight() {
        let m = model();
        let q = Vec7::from_column_slice(&[0.0, 0.0, 0.05, 0.1, -0.2, -0.1, -0.3]);
        let dq = Vec7::zeros();
        let mut u = m.gravity_vector(&q);
        u[coord::FOOT_Y] = 0.0;
        let sol = m.contact_forces(&q, &dq, &u).unwrap();
        assert!((sol.forces.lambda_n - 36.0 * 9.81).abs() < 1e-8);
        assert_eq!(sol.forces.lambda_t, 0.0);
        assert!(sol.valid);
    }

    #[test]
    fn quiescent_force_free_equilibrium() {
        let m = Model::new(ModelParams { gravity: 0.0, ..ModelParams::default() }).unwrap();
        let q = Vec7::from_column_slice(&[0.0, 0.0, 0.0, 0.2, -0.3, -0.2, -0.1]);
        let (ddq, sol) = m.forward_dynamics(&q, &Vec7::zeros(), &Vec7::zeros()).unwrap();
        assert_eq!(sol.forces.lambda_n, 0.0);
        assert!(ddq.amax() == 0.0);
    }

    #[test]
    fn coulomb_opposes_sliding() {
        let params = ModelParams {
            mu_kinetic: 0.3,
            tangential_law: TangentialLaw::Coulomb,
            ..ModelParams::default()
        };
        let m = Model::new(params).unwrap();
        let q = Vec7::from_column_slice(&[0.0, 0.0, 0.0, 0.2, -0.3, -0.2, -0.1]);
        let mut dq = Vec7::zeros();
        dq[0] = 0.5;
        let sol = m.contact_forces(&q, &dq, &Vec7::zeros()).unwrap();
        assert!(sol.forces.lambda_n > 0.0);
        assert!((sol.forces.lambda_t + 0.3 * sol.forces.lambda_n).abs() < 1e-9);
    }

    #[test]
    fn frictionless_has_zero_tangential_force_even_with_mu() {
        let params = ModelParams { mu_kinetic: 0.5, ..ModelParams::default() };
        let m = Model::new(params).unwrap();
        let q = Vec7::from_column_slice(&[0.0, 0.0, 0.0, 0.2, -0.3, -0.2, -0.1]);
        let dq = Vec7::from_element(0.3);
        let sol = m.contact_forces(&q, &dq, &Vec7::zeros()).unwrap();
        assert_eq!(sol.forces.lambda_t, 0.0);
    }

    #[test]
    fn rejects_invalid_params() {
        let mut p = ModelParams::default();
        p.link_masses[0] = 0.0;
        assert!(Model::new(p).is_err());
        let mut p = ModelParams::default();
        p.mu_kinetic = -0.1;
        assert!(Model::new(p).is_err());
        let mut p = ModelParams::default();
        p.actuation[3] = vec![0.0; 7];
        assert!(matches!(Model::new(p), Err(Error::Validation(_))));
    }

    #[test]
    fn params_json_round_trip() {
        let p = ModelParams::default();
        let text = serde_json::to_string(&p).unwrap();
        assert!(text.contains("\"link_com_offsets\""));
        let back: ModelParams = serde_json::from_str(&text).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn skeleton_matches_contact_points() {
        let m = model();
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..20 {
            let q = random_q(&mut rng);
            let geo = m.contact_geometry(&q);
            let p = m.joint_positions(&q);
            let close = |a: [f64; 2], b: Vector2<f64>| (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12;
            assert!(close(p[0], m.hip_position(&q)));
            assert!(close(p[3], geo.p_f));
            assert!(close(p[5], geo.p_sw));
            let len = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
            assert!((len(p[0], p[2]) - m.thigh_length()).abs() < 1e-12);
            assert!((len(p[4], p[5]) - m.shank_length()).abs() < 1e-12);
        }
    }
}
