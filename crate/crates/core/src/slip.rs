//! Virtual affine nonholonomic constraint `A(q) dq = b(q)` on the stance foot.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Mat7, Row7, StanceTerms, Vec7, NQ};
use crate::error::{Error, Result};

/// Mixing row used by the variable-slip experiment.
pub const PAPER_A_ROW: [f64; NQ] = [1.0, 0.0, 0.10, 0.08, 0.04, -0.05, -0.03];

/// Slip offsets of the variable-slip experiment (m/s).
pub const PAPER_S_LEVELS: [f64; 5] = [0.0, 0.015, 0.03, 0.0, 0.02];

/// A general affine velocity constraint.
pub trait SlipLaw {
    fn a_row(&self, q: &Vec7) -> Row7;
    /// `dA/dt * dq`.
    fn a_dot_dq(&self, q: &Vec7, dq: &Vec7) -> f64;
    fn b(&self, q: &Vec7) -> f64;
    fn db_dq(&self, q: &Vec7) -> Row7;
}

/// Constant `A` and a constant reference `b_k` during one stance phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantSlip {
    pub a_row: Row7,
    pub b_k: f64,
}

impl SlipLaw for ConstantSlip {
    fn a_row(&self, _q: &Vec7) -> Row7 {
        self.a_row
    }

    fn a_dot_dq(&self, _q: &Vec7, _dq: &Vec7) -> f64 {
        0.0
    }

    fn b(&self, _q: &Vec7) -> f64 {
        self.b_k
    }

    fn db_dq(&self, _q: &Vec7) -> Row7 {
        Row7::zeros()
    }
}

/// Per-step slip schedule `b_k = v_nom + s_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlipSchedule {
    #[serde(rename = "A_row")]
    pub a_row: [f64; NQ],
    pub v_nom: f64,
    pub s_levels: Vec<f64>,
    /// Consecutive steps spent on each level.
    #[serde(default = "default_block_len")]
    pub block_len: usize,
}

fn default_block_len() -> usize {
    10
}

impl Default for SlipSchedule {
    fn default() -> Self {
        Self { a_row: PAPER_A_ROW, v_nom: 0.0, s_levels: PAPER_S_LEVELS.to_vec(), block_len: default_block_len() }
    }
}

impl SlipSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.a_row.iter().any(|v| !v.is_finite()) || self.a_row.iter().all(|v| *v == 0.0) {
            return Err(Error::Validation("A_row must be finite and nonzero".into()));
        }
        if self.s_levels.is_empty() {
            return Err(Error::Validation("s_levels must contain at least one level".into()));
        }
        if self.s_levels.iter().any(|v| !v.is_finite()) || !self.v_nom.is_finite() {
            return Err(Error::Validation("slip levels and v_nom must be finite".into()));
        }
        if self.block_len == 0 {
            return Err(Error::Validation("block_len must be at least 1".into()));
        }
        Ok(())
    }

    pub fn a(&self) -> Row7 {
        Row7::from_row_slice(&self.a_row)
    }

    /// Slip offset for step `k` (1-based); levels cycle after the last block.
    pub fn level(&self, k: usize) -> f64 {
        let k = k.max(1);
        self.s_levels[((k - 1) / self.block_len) % self.s_levels.len()]
    }

    pub fn reference(&self, k: usize) -> f64 {
        self.v_nom + self.level(k)
    }

    pub fn law(&self, k: usize) -> ConstantSlip {
        ConstantSlip { a_row: self.a(), b_k: self.reference(k) }
    }
}

/// `eta_s`, its drift and its input row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlipEval {
    pub eta_s: f64,
    pub gamma_s: f64,
    pub m_s: Row7,
}

pub fn slip_output<L: SlipLaw + ?Sized>(law: &L, q: &Vec7, dq: &Vec7) -> f64 {
    (law.a_row(q) * dq)[0] - law.b(q)
}

/// `d(eta_s)/dt = Gamma_s + M_s u` for contact forces `lambda`.
pub fn slip_decomposition<L: SlipLaw + ?Sized>(
    law: &L,
    q: &Vec7,
    dq: &Vec7,
    terms: &StanceTerms,
    actuation: &Mat7,
    lambda: &Vector2<f64>,
) -> SlipEval {
    let a = law.a_row(q);
    let drift = terms.solve_mass(&(terms.contact.j_f.transpose() * lambda - terms.bias));
    let gamma_s = (a * drift)[0] + law.a_dot_dq(q, dq) - (law.db_dq(q) * dq)[0];
    let m_s = a * terms.chol.solve(actuation);
    SlipEval { eta_s: slip_output(law, q, dq), gamma_s, m_s }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slip_output_examples() {
        let law = SlipSchedule::default().law(1);
        let mut dq = Vec7::zeros();
        dq[0] = 1.0;
        assert_eq!(slip_output(&law, &Vec7::zeros(), &dq), 1.0);
        let law = ConstantSlip { a_row: Row7::from_row_slice(&PAPER_A_ROW), b_k: 0.015 };
        assert_eq!(slip_output(&law, &Vec7::zeros(), &Vec7::zeros()), -0.015);
        let mut dq = Vec7::zeros();
        dq[2] = 1.0;
        let law = ConstantSlip { b_k: 0.0, ..law };
        assert_eq!(slip_output(&law, &Vec7::zeros(), &dq), 0.10);
    }

    #[test]
    fn reference_schedule() {
        let s = SlipSchedule::default();
        assert_eq!(s.reference(1), 0.0);
        assert_eq!(s.reference(21), 0.03);
        assert_eq!(s.reference(50), 0.02);
        assert_eq!(s.reference(51), 0.0);
        let s = SlipSchedule { v_nom: 0.1, ..SlipSchedule::default() };
        assert_eq!(s.reference(1), 0.1);
        let s = SlipSchedule { block_len: 1, ..SlipSchedule::default() };
        assert_eq!(s.level(7), s.s_levels[1]);
    }

    #[test]
    fn validation() {
        assert!(SlipSchedule::default().validate().is_ok());
        let s = SlipSchedule { a_row: [0.0; NQ], ..SlipSchedule::default() };
        assert!(s.validate().is_err());
        let s = SlipSchedule { s_levels: vec![], ..SlipSchedule::default() };
        assert!(s.validate().is_err());
    }

    #[test]
    fn schedule_json_field_names() {
        let text = serde_json::to_string(&SlipSchedule::default()).unwrap();
        assert!(text.contains("\"A_row\""));
        assert!(text.contains("\"block_len\":10"));
    }
}
