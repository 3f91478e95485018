//! Dormand–Prince 5(4) integrator with continuous (dense) output.
//!
//! The integrator hands every accepted step to an observer, which can inspect
//! the step's interpolant and stop the integration at any time inside it.
//! Event location and sampling are therefore left to the caller.

use nalgebra::SVector;

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Tolerances and step limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Self { rtol: 1e-9, atol: 1e-11, h_init: 1e-4, h_max: 0.02, h_min: 1e-13, max_steps: 200_000 }
    }
}

/// One accepted step with its fifth-order-consistent interpolant.
#[derive(Debug, Clone)]
pub struct DenseStep<const N: usize> {
    pub t0: f64,
    pub h: f64,
    rcont: [SVector<f64, N>; 5],
}

impl<const N: usize> DenseStep<N> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn start(&self) -> SVector<f64, N> {
        self.rcont[0]
    }

    pub fn end(&self) -> SVector<f64, N> {
        self.rcont[0] + self.rcont[1]
    }

    /// Interpolated state at `t` in `[t0, t0 + h]`.
    pub fn eval(&self, t: f64) -> SVector<f64, N> {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let r = &self.rcont;
        r[0] + (r[1] + (r[2] + (r[3] + r[4] * s1) * s) * s1) * s
    }
}

/// What the observer wants after seeing a step.
#[derive(Debug, Clone, PartialEq)]
pub enum Flow<const N: usize> {
    Continue,
    Stop { t: f64, x: SVector<f64, N> },
}

/// Final state of an integration.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome<const N: usize> {
    pub t: f64,
    pub x: SVector<f64, N>,
    /// `true` if the observer stopped the run, `false` if `t_end` was reached.
    pub stopped: bool,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

/// Integrates `dx/dt = f(t, x)` from `t0` to `t_end`.
pub fn integrate<const N: usize, F, O>(
    mut f: F,
    t0: f64,
    x0: SVector<f64, N>,
    t_end: f64,
    opts: &Dopri5Options,
    mut observer: O,
) -> Result<Outcome<N>>
where
    F: FnMut(f64, &SVector<f64, N>) -> Result<SVector<f64, N>>,
    O: FnMut(&DenseStep<N>) -> Result<Flow<N>>,
{
    if !(t_end >= t0) {
        return Err(Error::Integrator(format!("t_end {t_end} precedes t0 {t0}")));
    }
    let mut t = t0;
    let mut x = x0;
    let mut k1 = f(t, &x)?;
    let mut h = opts.h_init.min(opts.h_max).min((t_end - t0).max(opts.h_min));
    let mut accepted = 0;
    let mut rejected = 0;
    let mut last_rejected = false;

    while t < t_end {
        if accepted + rejected >= opts.max_steps {
            return Err(Error::Integrator(format!("step budget exhausted at t = {t}")));
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }

        let k2 = f(t + C2 * h, &(x + k1 * (h * A21)))?;
        let k3 = f(t + C3 * h, &(x + (k1 * A31 + k2 * A32) * h))?;
        let k4 = f(t + C4 * h, &(x + (k1 * A41 + k2 * A42 + k3 * A43) * h))?;
        let k5 = f(t + C5 * h, &(x + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * h))?;
        let k6 = f(t + h, &(x + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * h))?;
        let x1 = x + (k1 * A71 + k3 * A73 + k4 * A74 + k5 * A75 + k6 * A76) * h;
        let k7 = f(t + h, &x1)?;

        let err_vec = (k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6 + k7 * E7) * h;
        let mut sum = 0.0;
        for i in 0..N {
            let sc = opts.atol + opts.rtol * x[i].abs().max(x1[i].abs());
            sum += (err_vec[i] / sc).powi(2);
        }
        let err = (sum / N as f64).sqrt();
        if !err.is_finite() {
            return Err(Error::Integrator(format!("non-finite error estimate at t = {t}")));
        }

        if err <= 1.0 {
            let r2 = x1 - x;
            let r3 = k1 * h - r2;
            let r4 = r2 - k7 * h - r3;
            let r5 = (k1 * D1 + k3 * D3 + k4 * D4 + k5 * D5 + k6 * D6 + k7 * D7) * h;
            let step = DenseStep { t0: t, h, rcont: [x, r2, r3, r4, r5] };
            accepted += 1;
            let t_next = if last { t_end } else { t + h };
            match observer(&step)? {
                Flow::Stop { t: ts, x: xs } => {
                    return Ok(Outcome { t: ts, x: xs, stopped: true, accepted_steps: accepted, rejected_steps: rejected });
                }
                Flow::Continue => {}
            }
            t = t_next;
            x = x1;
            k1 = k7;
            let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
            if last_rejected {
                fac = fac.min(1.0);
            }
            h = (h * fac.clamp(0.2, 5.0)).min(opts.h_max);
            last_rejected = false;
        } else {
            rejected += 1;
            last_rejected = true;
            h *= (0.9 * err.powf(-0.2)).max(0.2);
            if h < opts.h_min {
                return Err(Error::Integrator(format!("step size underflow at t = {t}")));
            }
        }
    }
    Ok(Outcome { t, x, stopped: false, accepted_steps: accepted, rejected_steps: rejected })
}

/// Locates a root of `g` inside a dense step by bisection.
///
/// `g(t0)` and `g(t1)` must bracket the root. Returns the time where `|g|`
/// first drops below `tol` (or the bracket collapses).
pub fn bisect_root<const N: usize, G>(step: &DenseStep<N>, mut lo: f64, mut hi: f64, tol: f64, mut g: G) -> f64
where
    G: FnMut(&SVector<f64, N>) -> f64,
{
    let mut g_lo = g(&step.eval(lo));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let g_mid = g(&step.eval(mid));
        if g_mid.abs() < tol || hi - lo < 1e-15 {
            return mid;
        }
        if (g_mid > 0.0) == (g_lo > 0.0) {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    #[test]
    fn exponential_decay_accuracy() {
        let out = integrate(
            |_, x: &SVector<f64, 1>| Ok(-x),
            0.0,
            SVector::<f64, 1>::new(1.0),
            2.0,
            &Dopri5Options::default(),
            |_| Ok(Flow::Continue),
        )
        .unwrap();
        assert!(!out.stopped);
        assert!((out.x[0] - (-2.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn dense_output_tracks_harmonic_oscillator() {
        let mut worst: f64 = 0.0;
        integrate(
            |_, x: &Vector2<f64>| Ok(Vector2::new(x[1], -x[0])),
            0.0,
            Vector2::new(1.0, 0.0),
            6.0,
            &Dopri5Options::default(),
            |step| {
                for i in 0..=10 {
                    let t = step.t0 + step.h * i as f64 / 10.0;
                    worst = worst.max((step.eval(t)[0] - t.cos()).abs());
                }
                Ok(Flow::Continue)
            },
        )
        .unwrap();
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn observer_stop_and_bisection() {
        // x' = 1 from 0; stop when x crosses 0.37.
        let out = integrate(
            |_, _x: &SVector<f64, 1>| Ok(SVector::<f64, 1>::new(1.0)),
            0.0,
            SVector::<f64, 1>::zeros(),
            1.0,
            &Dopri5Options { h_init: 0.05, ..Default::default() },
            |step| {
                let g = |x: &SVector<f64, 1>| x[0] - 0.37;
                if g(&step.start()) < 0.0 && g(&step.end()) >= 0.0 {
                    let t = bisect_root(step, step.t0, step.t1(), 1e-12, g);
                    return Ok(Flow::Stop { t, x: step.eval(t) });
                }
                Ok(Flow::Continue)
            },
        )
        .unwrap();
        assert!(out.stopped);
        assert!((out.t - 0.37).abs() < 1e-11);
    }

    #[test]
    fn rhs_errors_propagate() {
        let res = integrate(
            |t, x: &SVector<f64, 1>| if t > 0.5 { Err(Error::Fall("test".into())) } else { Ok(*x) },
            0.0,
            SVector::<f64, 1>::new(1.0),
            1.0,
            &Dopri5Options::default(),
            |_| Ok(Flow::Continue),
        );
        assert!(matches!(res, Err(Error::Fall(_))));
    }
}
