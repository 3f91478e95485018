//! Linear dynamics of the transverse coordinates `(y, ydot, eta_s)`.

use nalgebra::{Complex, DMatrix};

use crate::control::Gains;
use crate::gait::NY;

/// `A_perp` and its spectrum.
#[derive(Debug, Clone)]
pub struct TransverseSpec {
    pub a_perp: DMatrix<f64>,
    pub eigenvalues: Vec<Complex<f64>>,
    pub hurwitz: bool,
}

/// Assembles `[0, I, 0; -Kp, -Kd, 0; 0, 0, -k_s]`.
pub fn transverse_matrix(gains: &Gains) -> TransverseSpec {
    let n = 2 * NY + 1;
    let mut a = DMatrix::zeros(n, n);
    for i in 0..NY {
        a[(i, NY + i)] = 1.0;
        for j in 0..NY {
            a[(NY + i, j)] = -gains.kp[(i, j)];
            a[(NY + i, NY + j)] = -gains.kd[(i, j)];
        }
    }
    a[(n - 1, n - 1)] = -gains.k_s;
    let eigenvalues: Vec<Complex<f64>> = a.complex_eigenvalues().iter().copied().collect();
    let hurwitz = eigenvalues.iter().all(|e| e.re < 0.0);
    TransverseSpec { a_perp: a, eigenvalues, hurwitz }
}

/// Eigenvalues of the output block alone together with `-k_s`.
pub fn block_eigenvalues(gains: &Gains) -> Vec<Complex<f64>> {
    let mut block = DMatrix::zeros(2 * NY, 2 * NY);
    for i in 0..NY {
        block[(i, NY + i)] = 1.0;
        for j in 0..NY {
            block[(NY + i, j)] = -gains.kp[(i, j)];
            block[(NY + i, NY + j)] = -gains.kd[(i, j)];
        }
    }
    let mut eig: Vec<Complex<f64>> = block.complex_eigenvalues().iter().copied().collect();
    eig.push(Complex::new(-gains.k_s, 0.0));
    eig
}

/// Slowest decay rate `min(-Re lambda)` of the transverse dynamics.
pub fn slowest_rate(spec: &TransverseSpec) -> f64 {
    spec.eigenvalues.iter().map(|e| -e.re).fold(f64::INFINITY, f64::min)
}
