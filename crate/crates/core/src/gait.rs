//! Virtual holonomic constraints `y = h_select q - h_d(theta(q))`.
//!
//! The desired evolutions `h_d` are Bézier polynomials in a normalized
//! phasing variable. The phasing variable is the horizontal hip position in
//! the step frame, whose origin is the stance contact point at the start of
//! the step; it keeps increasing when the stance foot slides forward.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{coord, Jac2, Row7, StanceTerms, Vec7, NQ};
use crate::error::{Error, Result};

/// Number of holonomic outputs.
pub const NY: usize = 6;

pub type Vec6 = SVector<f64, NY>;
pub type Mat6 = SMatrix<f64, NY, NY>;
pub type Jac6 = SMatrix<f64, NY, NQ>;

const RANGE_SLACK: f64 = 1e-12;

/// Touchdown can land slightly past the end of the phase range. Up to this
/// far outside `[0, 1]` the polynomial is continued; further out it is clamped.
pub const PHASE_CONTINUATION: f64 = 0.05;

/// Bézier gait description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitSpec {
    pub degree: usize,
    /// One row of `degree + 1` coefficients per output.
    pub alpha: Vec<Vec<f64>>,
    pub theta_min: f64,
    pub theta_max: f64,
    #[serde(default = "default_h_select")]
    pub h_select: Vec<Vec<f64>>,
}

/// Selects coordinates 1..=6, leaving the hip progression for the phase.
pub fn default_h_select() -> Vec<Vec<f64>> {
    (0..NY).map(|i| (0..NQ).map(|j| if j == i + 1 { 1.0 } else { 0.0 }).collect()).collect()
}

/// Bézier value and its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BezierEval {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Normalized phase and its gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    pub theta: f64,
    pub dtheta_dq: Row7,
    /// The raw value lies outside `[0, 1]`; the desired outputs are then
    /// continued (or clamped beyond [`PHASE_CONTINUATION`]).
    pub clamped: bool,
}

/// Holonomic outputs at a state.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputEval {
    pub y: Vec6,
    pub jy: Jac6,
    pub ydot: Vec6,
    pub theta: f64,
    pub theta_dot: f64,
    /// `dJy/dt * dq`.
    pub jy_dot_dq: Vec6,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Bernstein basis of degree `m` at `s`.
fn bernstein(m: usize, s: f64) -> Vec<f64> {
    (0..=m).map(|i| binomial(m, i) * s.powi(i as i32) * (1.0 - s).powi((m - i) as i32)).collect()
}

/// Evaluates a Bézier polynomial and its first two derivatives.
pub fn bezier_eval(alpha: &[f64], theta: f64) -> Result<BezierEval> {
    if alpha.len() < 3 {
        return Err(Error::DegreeTooLow(alpha.len().saturating_sub(1)));
    }
    let m = alpha.len() - 1;
    let window = -PHASE_CONTINUATION..=1.0 + PHASE_CONTINUATION;
    if !window.contains(&theta) {
        // Derivatives of the clamped curve, so that ydot stays the derivative of y.
        log::warn!("phase {theta} outside [0, 1], clamped");
        let end = if theta < 0.0 { alpha[0] } else { alpha[m] };
        return Ok(BezierEval { value: end, d1: 0.0, d2: 0.0 });
    }
    let s = theta;
    let b0 = bernstein(m, s);
    let b1 = bernstein(m - 1, s);
    let b2 = bernstein(m - 2, s);
    let value = b0.iter().zip(alpha).map(|(b, a)| b * a).sum();
    let d1 = m as f64 * (0..m).map(|i| (alpha[i + 1] - alpha[i]) * b1[i]).sum::<f64>();
    let d2 = (m * (m - 1)) as f64
        * (0..m - 1).map(|i| (alpha[i + 2] - 2.0 * alpha[i + 1] + alpha[i]) * b2[i]).sum::<f64>();
    Ok(BezierEval { value, d1, d2 })
}

impl GaitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.degree < 2 {
            return Err(Error::DegreeTooLow(self.degree));
        }
        if self.alpha.len() != NY {
            return Err(Error::Validation(format!("alpha must have {NY} rows")));
        }
        if self.alpha.iter().any(|r| r.len() != self.degree + 1) {
            return Err(Error::Validation("every alpha row must have degree + 1 entries".into()));
        }
        if self.alpha.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("alpha entries must be finite".into()));
        }
        if !(self.theta_max > self.theta_min) || !self.theta_min.is_finite() || !self.theta_max.is_finite() {
            return Err(Error::Validation("theta_max must exceed theta_min".into()));
        }
        if self.h_select.len() != NY || self.h_select.iter().any(|r| r.len() != NQ) {
            return Err(Error::Validation("h_select must be 6x7".into()));
        }
        let hs = self.selection();
        if hs.svd(false, false).rank(1e-10) != NY {
            return Err(Error::Validation("h_select must have full row rank 6".into()));
        }
        let mut stacked = SMatrix::<f64, NQ, NQ>::zeros();
        stacked.fixed_rows_mut::<NY>(0).copy_from(&hs);
        stacked.set_row(NY, &self.phase_gradient());
        if stacked.svd(false, false).rank(1e-10) != NQ {
            return Err(Error::Validation("h_select rows must be independent of the phasing coordinate".into()));
        }
        Ok(())
    }

    pub fn selection(&self) -> Jac6 {
        Jac6::from_fn(|i, j| self.h_select[i][j])
    }

    fn phase_gradient(&self) -> Row7 {
        let mut g = Row7::zeros();
        g[coord::HIP_X] = 1.0 / (self.theta_max - self.theta_min);
        g
    }

    /// Normalized phasing variable.
    pub fn phase(&self, q: &Vec7) -> Phase {
        let raw = (q[coord::HIP_X] - self.theta_min) / (self.theta_max - self.theta_min);
        let clamped = !(-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&raw);
        Phase { theta: raw, dtheta_dq: self.phase_gradient(), clamped }
    }

    /// Desired outputs and their first two phase derivatives.
    pub fn desired(&self, theta: f64) -> Result<(Vec6, Vec6, Vec6)> {
        let mut v = Vec6::zeros();
        let mut d1 = Vec6::zeros();
        let mut d2 = Vec6::zeros();
        for i in 0..NY {
            let e = bezier_eval(&self.alpha[i], theta)?;
            v[i] = e.value;
            d1[i] = e.d1;
            d2[i] = e.d2;
        }
        Ok((v, d1, d2))
    }

    pub fn holonomic_output(&self, q: &Vec7, dq: &Vec7) -> Result<OutputEval> {
        let phase = self.phase(q);
        let (hd, hd1, hd2) = self.desired(phase.theta)?;
        let hs = self.selection();
        let y = hs * q - hd;
        let jy = hs - hd1 * phase.dtheta_dq;
        let ydot = jy * dq;
        let theta_dot = (phase.dtheta_dq * dq)[0];
        // The phase gradient is constant, so only h_d'' contributes.
        let jy_dot_dq = -hd2 * (theta_dot * theta_dot);
        Ok(OutputEval { y, jy, ydot, theta: phase.theta, theta_dot, jy_dot_dq })
    }

    /// `ydd = H + M_h u` along the stance dynamics for contact forces `lambda`.
    pub fn output_accel_decomposition(
        &self,
        out: &OutputEval,
        terms: &StanceTerms,
        actuation: &SMatrix<f64, NQ, NQ>,
        lambda: &nalgebra::Vector2<f64>,
    ) -> (Vec6, SMatrix<f64, NY, NQ>) {
        let j_c: &Jac2 = &terms.contact.j_f;
        let drift = terms.solve_mass(&(j_c.transpose() * lambda - terms.bias));
        let h = out.jy * drift + out.jy_dot_dq;
        let dinv_b = terms.chol.solve(actuation);
        (h, out.jy * dinv_b)
    }

    /// Configuration on the constraint surface at phase `theta`.
    pub fn configuration_at(&self, theta: f64) -> Result<Vec7> {
        let (hd, _, _) = self.desired(theta)?;
        let mut stacked = SMatrix::<f64, NQ, NQ>::zeros();
        stacked.fixed_rows_mut::<NY>(0).copy_from(&self.selection());
        stacked.set_row(NY, &self.phase_gradient());
        let mut rhs = Vec7::zeros();
        rhs.fixed_rows_mut::<NY>(0).copy_from(&hd);
        rhs[NY] = theta + self.theta_min / (self.theta_max - self.theta_min);
        stacked
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Validation("selection and phase are dependent".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GaitSpec {
        let alpha = (0..NY)
            .map(|i| (0..6).map(|j| 0.1 * (i as f64 + 1.0) * ((j as f64) * 0.7).sin()).collect())
            .collect();
        GaitSpec { degree: 5, alpha, theta_min: -0.2, theta_max: 0.15, h_select: default_h_select() }
    }

    #[test]
    fn bezier_endpoints_and_midpoint() {
        let a = [0.3, -1.0, 2.0, 0.5, 0.7, -0.4];
        assert_eq!(bezier_eval(&a, 0.0).unwrap().value, 0.3);
        assert!((bezier_eval(&a, 1.0).unwrap().value + 0.4).abs() < 1e-15);
        assert!((bezier_eval(&[0.0, 1.0, 0.0], 0.5).unwrap().value - 0.5).abs() < 1e-15);
        assert_eq!(bezier_eval(&[1.0, 2.0], 0.5), Err(Error::DegreeTooLow(1)));
    }

    #[test]
    fn bezier_derivative_at_zero() {
        let a = [0.3, -1.0, 2.0, 0.5, 0.7, -0.4];
        let e = bezier_eval(&a, 0.0).unwrap();
        assert!((e.d1 - 5.0 * (-1.3)).abs() < 1e-12);
    }

    #[test]
    fn bezier_derivatives_match_finite_differences() {
        let a = [0.3, -1.0, 2.0, 0.5, 0.7, -0.4];
        for &s in &[0.1, 0.37, 0.5, 0.81] {
            let h = 1e-5;
            let f = |t| bezier_eval(&a, t).unwrap();
            let fd1 = (f(s + h).value - f(s - h).value) / (2.0 * h);
            let fd2 = (f(s + h).d1 - f(s - h).d1) / (2.0 * h);
            assert!((fd1 - f(s).d1).abs() < 1e-8);
            assert!((fd2 - f(s).d2).abs() < 1e-7);
        }
    }

    #[test]
    fn continued_past_the_end_and_clamped_far_out() {
        let a = [0.3, -1.0, 2.0, 0.5, 0.7, -0.4];
        let end = bezier_eval(&a, 1.0).unwrap();
        let past = bezier_eval(&a, 1.0 + 1e-4).unwrap();
        let taylor = end.value + 1e-4 * end.d1 + 0.5e-8 * end.d2;
        assert!((past.value - taylor).abs() < 1e-10);
        let far = bezier_eval(&a, 1.3).unwrap();
        assert_eq!(far, BezierEval { value: -0.4, d1: 0.0, d2: 0.0 });
        assert_eq!(bezier_eval(&a, -2.0).unwrap().value, 0.3);
    }

    #[test]
    fn partition_of_unity() {
        for m in 2..8 {
            for i in 0..=1000 {
                let s = i as f64 / 1000.0;
                let total: f64 = bernstein(m, s).iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn phase_normalization() {
        let g = spec();
        let mut q = Vec7::zeros();
        q[0] = g.theta_min;
        assert_eq!(g.phase(&q).theta, 0.0);
        q[0] = 0.5 * (g.theta_min + g.theta_max);
        assert!((g.phase(&q).theta - 0.5).abs() < 1e-15);
        q[0] = g.theta_max + 0.1;
        assert!(g.phase(&q).clamped);
    }

    #[test]
    fn on_constraint_output_is_zero() {
        let g = spec();
        for &s in &[0.0, 0.3, 0.75, 1.0] {
            let q = g.configuration_at(s).unwrap();
            let out = g.holonomic_output(&q, &Vec7::zeros()).unwrap();
            assert!(out.y.amax() < 1e-14);
            assert_eq!(out.ydot, Vec6::zeros());
        }
    }

    #[test]
    fn output_jacobian_matches_finite_differences() {
        let g = spec();
        let q = Vec7::from_column_slice(&[0.01, 0.002, 0.1, 0.2, -0.3, -0.1, -0.2]);
        let out = g.holonomic_output(&q, &Vec7::zeros()).unwrap();
        for j in 0..NQ {
            let h = 1e-6;
            let mut qp = q;
            let mut qm = q;
            qp[j] += h;
            qm[j] -= h;
            let yp = g.holonomic_output(&qp, &Vec7::zeros()).unwrap().y;
            let ym = g.holonomic_output(&qm, &Vec7::zeros()).unwrap().y;
            let fd = (yp - ym) / (2.0 * h);
            assert!((fd - out.jy.column(j)).amax() < 1e-6);
        }
    }

    #[test]
    fn validation() {
        assert!(spec().validate().is_ok());
        let mut g = spec();
        g.degree = 1;
        assert_eq!(g.validate(), Err(Error::DegreeTooLow(1)));
        let mut g = spec();
        g.theta_max = g.theta_min;
        assert!(g.validate().is_err());
        let mut g = spec();
        // Row picking the hip progression collides with the phase.
        g.h_select[0] = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!(g.validate().is_err());
    }
}
