//! Restarted GMRES and flexible GMRES with right preconditioning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{axpy, dot, norm2, SparseMatrix};

/// Loss of orthogonality that triggers a second Gram-Schmidt pass.
const REORTH_THRESHOLD: f64 = 1e-8;

pub trait LinearOperator {
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl<F: Fn(&[f64], &mut [f64])> LinearOperator for F {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self(x, y)
    }
}

impl LinearOperator for SparseMatrix {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_into(x, y)
    }
}

/// A preconditioner application `y = P^{-1} x`. May carry internal state
/// (inner solvers, scratch), hence `&mut self`.
pub trait Preconditioner {
    fn apply(&mut self, x: &[f64], y: &mut [f64]);
}

impl<F: FnMut(&[f64], &mut [f64])> Preconditioner for F {
    fn apply(&mut self, x: &[f64], y: &mut [f64]) {
        self(x, y)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPrecond;

impl Preconditioner for IdentityPrecond {
    fn apply(&mut self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrylovConfig {
    pub restart: usize,
    pub rtol: f64,
    pub atol: f64,
    pub max_iters: usize,
    /// Run exactly this many iterations, ignoring the tolerances.
    pub fixed_iters: Option<usize>,
    pub flexible: bool,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self {
            restart: 10,
            rtol: 1e-6,
            atol: 0.0,
            max_iters: 200,
            fixed_iters: None,
            flexible: true,
        }
    }
}

impl KrylovConfig {
    /// Inner solver setting: `k` GMRES steps, no restart inside, no exit test.
    pub fn fixed(k: usize) -> Self {
        Self {
            restart: k.max(1),
            rtol: f64::MIN_POSITIVE,
            atol: 0.0,
            max_iters: k,
            fixed_iters: Some(k),
            flexible: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.restart == 0 {
            return Err(Error::Config("restart length must be at least 1".into()));
        }
        if self.fixed_iters.is_none() && !(self.rtol > 0.0) {
            return Err(Error::Config(format!("relative tolerance must be positive, got {}", self.rtol)));
        }
        if !(self.atol >= 0.0) {
            return Err(Error::Config(format!("absolute tolerance must be nonnegative, got {}", self.atol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KrylovStats {
    pub iterations: usize,
    pub converged: bool,
    pub breakdown: bool,
    pub restarts: usize,
    pub reorthogonalizations: usize,
    pub initial_residual: f64,
    /// True residual `||b - A x||` at exit.
    pub final_residual: f64,
    /// Arnoldi residual estimate after each iteration, starting with the
    /// initial residual.
    pub history: Vec<f64>,
}

impl KrylovStats {
    pub fn relative_residual(&self) -> f64 {
        if self.initial_residual == 0.0 {
            0.0
        } else {
            self.final_residual / self.initial_residual
        }
    }
}

/// Right-preconditioned restarted GMRES. The preconditioner must be a fixed
/// linear operator.
pub fn gmres<A, P>(a: &A, p: &mut P, b: &[f64], x: &mut [f64], cfg: &KrylovConfig) -> Result<KrylovStats>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner + ?Sized,
{
    solve(a, p, b, x, cfg)
}

/// Flexible GMRES: the preconditioner may change between iterations.
pub fn fgmres<A, P>(a: &A, p: &mut P, b: &[f64], x: &mut [f64], cfg: &KrylovConfig) -> Result<KrylovStats>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner + ?Sized,
{
    solve(a, p, b, x, cfg)
}

// Both variants store the preconditioned basis, so with a fixed
// preconditioner they produce identical iterates.
fn solve<A, P>(a: &A, p: &mut P, b: &[f64], x: &mut [f64], cfg: &KrylovConfig) -> Result<KrylovStats>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner + ?Sized,
{
    cfg.validate()?;
    let n = b.len();
    if x.len() != n {
        return Err(Error::Dimension(format!("initial guess has length {}, rhs {}", x.len(), n)));
    }
    let max_iters = cfg.fixed_iters.unwrap_or(cfg.max_iters);
    let m = cfg.restart;

    let mut stats = KrylovStats::default();
    let mut r = vec![0.0; n];
    true_residual(a, b, x, &mut r);
    let mut beta = norm2(&r);
    let bnorm = norm2(b);
    stats.initial_residual = beta;
    stats.history.push(beta);
    let target = if cfg.fixed_iters.is_some() {
        0.0
    } else {
        (cfg.rtol * bnorm).max(cfg.atol)
    };
    if beta == 0.0 || (cfg.fixed_iters.is_none() && beta <= target) {
        stats.converged = true;
        stats.final_residual = beta;
        return Ok(stats);
    }

    let mut v: Vec<Vec<f64>> = (0..=m).map(|_| vec![0.0; n]).collect();
    let mut z: Vec<Vec<f64>> = (0..m).map(|_| vec![0.0; n]).collect();
    let mut h = vec![vec![0.0; m]; m + 1];
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = vec![0.0; m + 1];
    let mut w = vec![0.0; n];

    loop {
        for (vi, ri) in v[0].iter_mut().zip(&r) {
            *vi = ri / beta;
        }
        g.iter_mut().for_each(|gi| *gi = 0.0);
        g[0] = beta;
        let mut k = 0;
        let mut happy = false;

        while k < m && stats.iterations < max_iters {
            p.apply(&v[k], &mut z[k]);
            a.apply(&z[k], &mut w);
            let wnorm0 = norm2(&w);

            for i in 0..=k {
                let hik = dot(&w, &v[i]);
                h[i][k] = hik;
                axpy(-hik, &v[i], &mut w);
            }
            let mut wnorm = norm2(&w);
            if wnorm > 0.0 {
                let loss = (0..=k)
                    .map(|i| (dot(&w, &v[i]) / wnorm).abs())
                    .fold(0.0, f64::max);
                if loss > REORTH_THRESHOLD {
                    stats.reorthogonalizations += 1;
                    for i in 0..=k {
                        let c = dot(&w, &v[i]);
                        h[i][k] += c;
                        axpy(-c, &v[i], &mut w);
                    }
                    wnorm = norm2(&w);
                }
            }
            h[k + 1][k] = wnorm;

            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let (c, s) = givens(h[k][k], h[k + 1][k]);
            cs[k] = c;
            sn[k] = s;
            h[k][k] = c * h[k][k] + s * h[k + 1][k];
            h[k + 1][k] = 0.0;
            g[k + 1] = -s * g[k];
            g[k] *= c;

            stats.iterations += 1;
            k += 1;
            let est = g[k].abs();
            stats.history.push(est);

            if wnorm <= 1e-14 * wnorm0.max(f64::MIN_POSITIVE) {
                happy = true;
                stats.breakdown = true;
                break;
            }
            if cfg.fixed_iters.is_none() && est <= target {
                break;
            }
            for (vi, wi) in v[k].iter_mut().zip(&w) {
                *vi = wi / wnorm;
            }
        }

        // back substitution on the k x k triangle
        let mut y = g[..k].to_vec();
        for i in (0..k).rev() {
            for j in i + 1..k {
                y[i] -= h[i][j] * y[j];
            }
            y[i] = if h[i][i] != 0.0 { y[i] / h[i][i] } else { 0.0 };
        }
        for (i, &yi) in y.iter().enumerate() {
            axpy(yi, &z[i], x);
        }

        true_residual(a, b, x, &mut r);
        beta = norm2(&r);
        stats.final_residual = beta;
        let done_iters = stats.iterations >= max_iters;
        if cfg.fixed_iters.is_none() && beta <= target {
            stats.converged = true;
            break;
        }
        if happy || done_iters {
            stats.converged = cfg.fixed_iters.is_some() || beta <= target;
            break;
        }
        stats.restarts += 1;
    }
    Ok(stats)
}

fn true_residual<A: LinearOperator + ?Sized>(a: &A, b: &[f64], x: &[f64], r: &mut [f64]) {
    a.apply(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
}

fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        (1.0, 0.0)
    } else if a == 0.0 {
        (0.0, 1.0)
    } else {
        let r = a.hypot(b);
        (a / r, b / r)
    }
}
