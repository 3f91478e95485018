//! Feedback laws enforcing the holonomic and slip constraints.
//!
//! Every law is affine in the assumed normal contact force, and the actual
//! normal force is in turn affine in the input. The two are closed exactly:
//! when the pair has a unique consistent solution it is used, otherwise (the
//! outputs already pin the normal acceleration of the stance foot, so any
//! assumed force is reproduced) the assumed force minimizing `|u|` is taken.

use nalgebra::{SMatrix, Vector2};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ContactForces, ContactSolution, Model, StanceTerms, Vec7, NQ};
use crate::error::{Error, Result};
use crate::gait::{GaitSpec, Mat6, OutputEval, Vec6, NY};
use crate::slip::{slip_decomposition, SlipLaw};

pub const DECOUPLING_FLOOR: f64 = 1e-8;
pub const CHANNEL_FLOOR: f64 = 1e-10;
const CLOSURE_DEGENERACY: f64 = 1e-8;

type Mat7 = SMatrix<f64, NQ, NQ>;

/// Which feedback law drives the stance phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerMode {
    /// Combined law: slip channel and holonomic outputs.
    Controlled,
    /// Holonomic outputs only, slip channel off.
    OpenLoop,
    /// Slip channel only.
    SlipOnly,
}

impl std::fmt::Display for ControllerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Controlled => "controlled",
            Self::OpenLoop => "open-loop",
            Self::SlipOnly => "slip-only",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum GainEntry {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl GainEntry {
    fn to_matrix(&self, name: &str) -> Result<Mat6> {
        match self {
            Self::Scalar(v) => Ok(Mat6::identity() * *v),
            Self::Matrix(rows) => {
                if rows.len() != NY || rows.iter().any(|r| r.len() != NY) {
                    return Err(Error::Validation(format!("{name} must be a scalar or a 6x6 matrix")));
                }
                Ok(Mat6::from_fn(|i, j| rows[i][j]))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GainsDoc {
    k_s: f64,
    kp: GainEntry,
    kd: GainEntry,
}

/// Feedback gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GainsDoc", into = "GainsDoc")]
pub struct Gains {
    pub k_s: f64,
    pub kp: Mat6,
    pub kd: Mat6,
}

impl TryFrom<GainsDoc> for Gains {
    type Error = Error;

    fn try_from(doc: GainsDoc) -> Result<Self> {
        Gains::new(doc.k_s, doc.kp.to_matrix("kp")?, doc.kd.to_matrix("kd")?)
    }
}

impl From<Gains> for GainsDoc {
    fn from(g: Gains) -> Self {
        let entry = |m: &Mat6| {
            if *m == Mat6::identity() * m[(0, 0)] {
                GainEntry::Scalar(m[(0, 0)])
            } else {
                GainEntry::Matrix((0..NY).map(|i| (0..NY).map(|j| m[(i, j)]).collect()).collect())
            }
        };
        GainsDoc { k_s: g.k_s, kp: entry(&g.kp), kd: entry(&g.kd) }
    }
}

fn is_spd(m: &Mat6) -> bool {
    (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0) && m.symmetric_eigenvalues().min() > 0.0
}

impl Gains {
    pub fn new(k_s: f64, kp: Mat6, kd: Mat6) -> Result<Self> {
        if !(k_s.is_finite() && k_s > 0.0) {
            return Err(Error::Validation("k_s must be positive".into()));
        }
        if !is_spd(&kp) {
            return Err(Error::Validation("kp must be symmetric positive definite".into()));
        }
        if !is_spd(&kd) {
            return Err(Error::Validation("kd must be symmetric positive definite".into()));
        }
        Ok(Self { k_s, kp, kd })
    }

    pub fn scalar(k_s: f64, kp: f64, kd: f64) -> Result<Self> {
        Self::new(k_s, Mat6::identity() * kp, Mat6::identity() * kd)
    }

    /// Skips validation; used to construct deliberately invalid gains in tests.
    pub fn unchecked(k_s: f64, kp: Mat6, kd: Mat6) -> Self {
        Self { k_s, kp, kd }
    }
}

impl Default for Gains {
    fn default() -> Self {
        Self { k_s: 20.0, kp: Mat6::identity() * 100.0, kd: Mat6::identity() * 20.0 }
    }
}

/// Input and logged indicators at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlEval {
    pub u: Vec7,
    /// Contact force assumed by the law.
    pub lambda: ContactForces,
    pub sigma_min_a: f64,
    pub norm_ms: f64,
    pub eta_s: f64,
    pub y: Vec6,
    pub ydot: Vec6,
    pub theta: f64,
}

/// Stacked decoupling matrix `[M_s; M_h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoupling {
    pub matrix: Mat7,
    pub sigma_min: f64,
}

fn stacked(m_s: &SMatrix<f64, 1, NQ>, m_h: &SMatrix<f64, NY, NQ>) -> Mat7 {
    let mut a = Mat7::zeros();
    a.set_row(0, m_s);
    a.fixed_rows_mut::<NY>(1).copy_from(m_h);
    a
}

fn sigma_min(m: &SMatrix<f64, NY, NQ>) -> f64 {
    m.singular_values().min()
}

/// Everything a feedback law needs at one state.
pub struct Channels {
    pub out: OutputEval,
    pub eta_s: f64,
    /// Drift of `eta_s` and `y` with zero normal force.
    pub gamma0: f64,
    pub h0: Vec6,
    /// Their sensitivities to the normal force.
    pub dgamma: f64,
    pub dh: Vec6,
    pub m_s: SMatrix<f64, 1, NQ>,
    pub m_h: SMatrix<f64, NY, NQ>,
}

/// Feedback law bound to a model, gait, gains and the current slip reference.
pub struct Controller<'a> {
    pub model: &'a Model,
    pub gait: &'a GaitSpec,
    pub gains: &'a Gains,
    pub mode: ControllerMode,
    pub law: &'a dyn SlipLaw,
}

impl<'a> Controller<'a> {
    pub fn channels(&self, q: &Vec7, dq: &Vec7, terms: &StanceTerms) -> Result<Channels> {
        let out = self.gait.holonomic_output(q, dq)?;
        let b = self.model.actuation();
        let lambda0 = Vector2::new(terms.lambda_t0, 0.0);
        let s = slip_decomposition(self.law, q, dq, terms, b, &lambda0);
        let (h0, m_h) = self.gait.output_accel_decomposition(&out, terms, b, &lambda0);
        let per_normal = terms.solve_mass(&terms.normal_direction);
        let dgamma = (self.law.a_row(q) * per_normal)[0];
        let dh = out.jy * per_normal;
        Ok(Channels { eta_s: s.eta_s, gamma0: s.gamma_s, h0, dgamma, dh, m_s: s.m_s, m_h, out })
    }

    pub fn decoupling(&self, ch: &Channels) -> Decoupling {
        let matrix = stacked(&ch.m_s, &ch.m_h);
        let sigma_min = matrix.singular_values().min();
        Decoupling { matrix, sigma_min }
    }

    /// Feedback at a state whose stance quantities are already evaluated.
    pub fn evaluate(&self, q: &Vec7, dq: &Vec7, terms: &StanceTerms) -> Result<ControlEval> {
        let ch = self.channels(q, dq, terms)?;
        let dec = self.decoupling(&ch);
        let g = self.gains;
        let v_s = -g.k_s * ch.eta_s;
        let v_h = -g.kd * ch.out.ydot - g.kp * ch.out.y;

        let (u0, w) = match self.mode {
            ControllerMode::Controlled => {
                if dec.sigma_min < DECOUPLING_FLOOR {
                    return Err(Error::NearSingularDecoupling(dec.sigma_min));
                }
                let lu = dec.matrix.lu();
                let mut rhs = Vec7::zeros();
                rhs[0] = v_s - ch.gamma0;
                rhs.fixed_rows_mut::<NY>(1).copy_from(&(v_h - ch.h0));
                let mut sens = Vec7::zeros();
                sens[0] = ch.dgamma;
                sens.fixed_rows_mut::<NY>(1).copy_from(&ch.dh);
                let singular = || Error::NearSingularDecoupling(dec.sigma_min);
                (lu.solve(&rhs).ok_or_else(singular)?, lu.solve(&sens).ok_or_else(singular)?)
            }
            ControllerMode::OpenLoop => {
                let smin = sigma_min(&ch.m_h);
                if smin < CHANNEL_FLOOR {
                    return Err(Error::HolonomicChannelSingular(smin));
                }
                let gram = (ch.m_h * ch.m_h.transpose())
                    .cholesky()
                    .ok_or(Error::HolonomicChannelSingular(smin))?;
                let pinv = |r: Vec6| ch.m_h.transpose() * gram.solve(&r);
                (pinv(v_h - ch.h0), pinv(ch.dh))
            }
            ControllerMode::SlipOnly => {
                let norm = ch.m_s.norm();
                if norm <= CHANNEL_FLOOR {
                    return Err(Error::SlipChannelSingular(norm));
                }
                let pinv = ch.m_s.transpose() / (norm * norm);
                (pinv * (v_s - ch.gamma0), pinv * ch.dgamma)
            }
        };

        let (a, b) = self.model.normal_force_affine(terms)?;
        let kappa = 1.0 + b.dot(&w);
        let lambda_n = if kappa.abs() > CLOSURE_DEGENERACY {
            (a + b.dot(&u0)) / kappa
        } else if w.norm_squared() > 0.0 {
            w.dot(&u0) / w.norm_squared()
        } else {
            a + b.dot(&u0)
        };
        let u = u0 - w * lambda_n;
        Ok(ControlEval {
            u,
            lambda: ContactForces { lambda_t: terms.tangential_for(lambda_n), lambda_n },
            sigma_min_a: dec.sigma_min,
            norm_ms: ch.m_s.norm(),
            eta_s: ch.eta_s,
            y: ch.out.y,
            ydot: ch.out.ydot,
            theta: ch.out.theta,
        })
    }

    /// Closed-loop accelerations with the realized contact forces.
    pub fn closed_loop(&self, q: &Vec7, dq: &Vec7) -> Result<(Vec7, ControlEval, ContactSolution)> {
        let terms = self.model.stance_terms(q, dq)?;
        let eval = self.evaluate(q, dq, &terms)?;
        let (ddq, contact) = self.model.forward_dynamics_with(&terms, &eval.u)?;
        Ok((ddq, eval, contact))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gains_validation() {
        assert!(Gains::scalar(0.0, 100.0, 20.0).is_err());
        assert!(Gains::scalar(20.0, -1.0, 20.0).is_err());
        let mut kp = Mat6::identity();
        kp[(0, 1)] = 0.5;
        assert!(Gains::new(1.0, kp, Mat6::identity()).is_err());
        assert!(Gains::scalar(20.0, 100.0, 20.0).is_ok());
    }

    #[test]
    fn gains_json_scalar_or_matrix() {
        let g: Gains = serde_json::from_str(r#"{"k_s": 20, "kp": 100, "kd": 20}"#).unwrap();
        assert_eq!(g, Gains::default());
        let rows: Vec<Vec<f64>> = (0..6).map(|i| (0..6).map(|j| if i == j { 2.0 + i as f64 } else { 0.0 }).collect()).collect();
        let text = serde_json::json!({"k_s": 5.0, "kp": rows, "kd": 3.0}).to_string();
        let g: Gains = serde_json::from_str(&text).unwrap();
        assert_eq!(g.kp[(5, 5)], 7.0);
        let back: Gains = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(back, g);
        let err = serde_json::from_str::<Gains>(r#"{"k_s": 0, "kp": 100, "kd": 20}"#).unwrap_err();
        assert!(err.to_string().contains("k_s must be positive"));
    }

    #[test]
    fn mode_names() {
        let m: ControllerMode = serde_json::from_str("\"open-loop\"").unwrap();
        assert_eq!(m, ControllerMode::OpenLoop);
        assert_eq!(ControllerMode::Controlled.to_string(), "controlled");
    }
}
