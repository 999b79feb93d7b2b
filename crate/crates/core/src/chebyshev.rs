//! Jacobi-preconditioned Chebyshev semi-iteration for mass matrices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

pub const DEFAULT_STEPS: usize = 20;

/// Fixed-step Chebyshev solver for an SPD matrix whose Jacobi-scaled
/// spectrum lies in a known interval.
#[derive(Debug, Clone)]
pub struct ChebyshevMassSolver {
    matrix: SparseMatrix,
    inv_diag: Vec<f64>,
    lambda_min: f64,
    lambda_max: f64,
    steps: usize,
}

impl ChebyshevMassSolver {
    pub fn new(matrix: SparseMatrix, interval: (f64, f64), steps: usize) -> Result<Self> {
        let (lambda_min, lambda_max) = interval;
        if !(lambda_min > 0.0) || !lambda_min.is_finite() {
            return Err(Error::Config(format!(
                "Chebyshev interval must have a positive lower end, got {lambda_min}"
            )));
        }
        if !(lambda_max >= lambda_min) || !lambda_max.is_finite() {
            return Err(Error::Config(format!(
                "invalid Chebyshev interval [{lambda_min}, {lambda_max}]"
            )));
        }
        if steps == 0 {
            return Err(Error::Config("Chebyshev step count must be positive".into()));
        }
        let diag = matrix.diagonal();
        if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::Config(format!(
                "Jacobi scaling needs a positive diagonal (entry {i} is {})",
                diag[i]
            )));
        }
        let inv_diag = diag.iter().map(|d| 1.0 / d).collect();
        Ok(Self {
            matrix,
            inv_diag,
            lambda_min,
            lambda_max,
            steps,
        })
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lambda_min, self.lambda_max)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.inv_diag.len()
    }

    /// Contraction factor of the residual polynomial after `k` steps.
    pub fn error_bound(&self, k: usize) -> f64 {
        let kappa = self.lambda_max / self.lambda_min;
        let q = (kappa.sqrt() - 1.0) / (kappa.sqrt() + 1.0);
        2.0 * q.powi(k as i32) / (1.0 + q.powi(2 * k as i32))
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; b.len()];
        self.solve_into(b, &mut x);
        x
    }

    pub fn solve_into(&self, b: &[f64], x: &mut [f64]) {
        let n = b.len();
        debug_assert_eq!(n, self.dim());
        let theta = 0.5 * (self.lambda_max + self.lambda_min);
        let delta = 0.5 * (self.lambda_max - self.lambda_min);

        if delta == 0.0 {
            for i in 0..n {
                x[i] = self.inv_diag[i] * b[i] / theta;
            }
            return;
        }

        let sigma = theta / delta;
        let mut rho = 1.0 / sigma;
        let mut r = b.to_vec();
        let mut d: Vec<f64> = (0..n).map(|i| self.inv_diag[i] * r[i] / theta).collect();
        let mut ad = vec![0.0; n];
        x.iter_mut().for_each(|v| *v = 0.0);

        for step in 0..self.steps {
            for i in 0..n {
                x[i] += d[i];
            }
            if step + 1 == self.steps {
                break;
            }
            self.matrix.matvec_into(&d, &mut ad);
            for i in 0..n {
                r[i] -= ad[i];
            }
            let rho_next = 1.0 / (2.0 * sigma - rho);
            let c1 = rho_next * rho;
            let c2 = 2.0 * rho_next / delta;
            for i in 0..n {
                d[i] = c1 * d[i] + c2 * self.inv_diag[i] * r[i];
            }
            rho = rho_next;
        }
    }
}

/// Extreme eigenvalues of `D^{-1} M` for a small dense SPD matrix, with `D`
/// its diagonal. Applied to an element mass matrix this bounds the spectrum
/// of the Jacobi-scaled assembled matrix.
pub fn scaled_spectrum(m: &DMatrix<f64>) -> (f64, f64) {
    let n = m.nrows();
    let s = DMatrix::from_fn(n, n, |i, j| m[(i, j)] / (m[(i, i)] * m[(j, j)]).sqrt());
    let eig = nalgebra::SymmetricEigen::new(s).eigenvalues;
    let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}
