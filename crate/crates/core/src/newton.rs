//! Inexact Newton iteration on the optimality system.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kkt::{build_kkt, eval_residual, KktParams, KktSystem, LpsMode, Model, StateIterate};
use crate::krylov::{fgmres, KrylovConfig};
use crate::operators::{cavity_lid, lift_boundary, Discretization};
use crate::precond::{PrecondStack, StackConfig};

pub const DEFAULT_TOLERANCE: f64 = 1e-5;
pub const DEFAULT_MAX_ITERS: usize = 10;
pub const ABSOLUTE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LinearSolver {
    /// Flexible GMRES with the nested preconditioner.
    Krylov,
    /// Sparse LU on the pinned step system.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    /// Target for `||r_k|| / ||r_0||`.
    pub tolerance: f64,
    pub max_iters: usize,
    pub linear: KrylovConfig,
    pub stack: StackConfig,
    pub solver: LinearSolver,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            max_iters: DEFAULT_MAX_ITERS,
            linear: KrylovConfig::default(),
            stack: StackConfig::default(),
            solver: LinearSolver::Krylov,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::Config(format!(
                "nonlinear tolerance must lie in (0, 1), got {}",
                self.tolerance
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("at least one Newton iteration is required".into()));
        }
        self.linear.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NewtonTrace {
    /// Nonlinear residual norms, starting with the lifted initial state.
    pub residuals: Vec<f64>,
    /// Outer Krylov iterations per step (0 for direct solves).
    pub linear_iters: Vec<usize>,
    pub linear_converged: Vec<bool>,
    /// Relative true residual of each linear solve.
    pub linear_residuals: Vec<f64>,
    pub step_seconds: Vec<f64>,
    pub converged: bool,
}

impl NewtonTrace {
    pub fn iterations(&self) -> usize {
        self.linear_iters.len()
    }

    /// Mean of the per-step Krylov counts, rounded to the nearest integer.
    pub fn average_linear_iters(&self) -> usize {
        rounded_mean(&self.linear_iters)
    }

    pub fn relative_residuals(&self) -> Vec<f64> {
        let r0 = self.residuals.first().copied().unwrap_or(0.0);
        if r0 == 0.0 {
            return vec![0.0; self.residuals.len()];
        }
        self.residuals.iter().map(|r| r / r0).collect()
    }

    /// `||r_{k+1}|| / ||r_k||` for each step.
    pub fn reduction_factors(&self) -> Vec<f64> {
        self.residuals.windows(2).map(|w| w[1] / w[0]).collect()
    }

    pub fn total_seconds(&self) -> f64 {
        self.step_seconds.iter().sum()
    }
}

pub fn rounded_mean(counts: &[usize]) -> usize {
    if counts.is_empty() {
        return 0;
    }
    (counts.iter().sum::<usize>() as f64 / counts.len() as f64).round() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Converged,
    Continue,
    Exhausted,
}

pub fn convergence_check(trace: &NewtonTrace, cfg: &NewtonConfig) -> Decision {
    let (Some(&r0), Some(&rk)) = (trace.residuals.first(), trace.residuals.last()) else {
        return Decision::Continue;
    };
    if rk <= ABSOLUTE_FLOOR || rk <= cfg.tolerance * r0 {
        Decision::Converged
    } else if trace.iterations() >= cfg.max_iters {
        Decision::Exhausted
    } else {
        Decision::Continue
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearOutcome {
    pub iterations: usize,
    pub converged: bool,
    pub relative_residual: f64,
}

/// Solves one step system, returning the correction.
pub fn solve_step(sys: &KktSystem, cfg: &NewtonConfig) -> Result<(Vec<f64>, LinearOutcome)> {
    let bnorm = crate::sparse::norm2(&sys.rhs);
    let mut x = vec![0.0; sys.dim()];
    let (iterations, converged) = match cfg.solver {
        LinearSolver::Direct => {
            x = sys.solve_direct()?;
            (0, true)
        }
        LinearSolver::Krylov => {
            let mut stack = PrecondStack::new(sys, cfg.stack)?;
            let op = |v: &[f64], y: &mut [f64]| sys.apply(v, y);
            let st = fgmres(&op, &mut stack, &sys.rhs, &mut x, &cfg.linear)?;
            sys.remove_pressure_means(&mut x);
            log::debug!(
                "fgmres: {} iterations, {} inner, relative residual {:.3e}",
                st.iterations,
                stack.inner_iterations(),
                st.relative_residual()
            );
            (st.iterations, st.converged)
        }
    };
    let mut ax = vec![0.0; sys.dim()];
    sys.apply(&x, &mut ax);
    let res = ax.iter().zip(&sys.rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let relative_residual = if bnorm > 0.0 { res / bnorm } else { res };
    Ok((
        x,
        LinearOutcome {
            iterations,
            converged,
            relative_residual,
        },
    ))
}

/// The lifted cavity state with zero interior values.
pub fn initial_state(disc: &Discretization) -> StateIterate {
    StateIterate::from_lift(disc, lift_boundary(disc, cavity_lid))
}

/// One step on the Stokes control problem from `state`.
pub fn stokes_init(
    disc: &Discretization,
    state: &StateIterate,
    params: &KktParams,
    cfg: &NewtonConfig,
) -> Result<(StateIterate, LinearOutcome)> {
    let sys = build_kkt(disc, state, params, Model::Stokes)?;
    let (dx, out) = solve_step(&sys, cfg)?;
    let mut next = state.clone();
    next.update(disc, &dx);
    Ok((next, out))
}

/// Runs the iteration from `state`. The first step solves the Stokes
/// control problem; later steps linearize the full model.
pub fn newton_solve_from(
    disc: &Discretization,
    state: StateIterate,
    params: &KktParams,
    cfg: &NewtonConfig,
) -> Result<(StateIterate, NewtonTrace)> {
    newton_solve_observed(disc, state, params, cfg, &mut |_, _| Ok(()))
}

/// As [`newton_solve_from`], handing every assembled step system and its
/// 1-based step index to `observe` before it is solved.
pub fn newton_solve_observed(
    disc: &Discretization,
    mut state: StateIterate,
    params: &KktParams,
    cfg: &NewtonConfig,
    observe: &mut dyn FnMut(usize, &KktSystem) -> Result<()>,
) -> Result<(StateIterate, NewtonTrace)> {
    cfg.validate()?;
    params.validate()?;
    let mut trace = NewtonTrace::default();
    let r0 = eval_residual(disc, &state, params, Model::NavierStokes)?.norm();
    trace.residuals.push(r0);
    log::info!("newton: initial residual {r0:.6e}");

    loop {
        match convergence_check(&trace, cfg) {
            Decision::Converged => {
                trace.converged = true;
                break;
            }
            Decision::Exhausted => break,
            Decision::Continue => {}
        }
        let t0 = Instant::now();
        let first = trace.iterations() == 0;
        let model = if first { Model::Stokes } else { Model::NavierStokes };
        let sys = build_kkt(disc, &state, params, model)?;
        observe(trace.iterations() + 1, &sys)?;
        let (dx, out) = solve_step(&sys, cfg)?;
        state.update(disc, &dx);
        if first && params.lps == LpsMode::Lagged && state.lps_wind.is_none() {
            state.lps_wind = Some(state.v.clone());
        }
        let r = eval_residual(disc, &state, params, Model::NavierStokes)?.norm();
        if !r.is_finite() {
            return Err(Error::Assembly(format!(
                "nonlinear residual became non-finite at step {}",
                trace.iterations() + 1
            )));
        }
        trace.residuals.push(r);
        trace.linear_iters.push(out.iterations);
        trace.linear_converged.push(out.converged);
        trace.linear_residuals.push(out.relative_residual);
        trace.step_seconds.push(t0.elapsed().as_secs_f64());
        if !out.converged {
            log::warn!(
                "step {}: linear solve stopped at relative residual {:.3e}",
                trace.iterations(),
                out.relative_residual
            );
        }
        log::info!(
            "newton {}: residual {:.6e} (relative {:.3e}), {} linear iterations",
            trace.iterations(),
            r,
            if r0 > 0.0 { r / r0 } else { 0.0 },
            out.iterations
        );
    }
    Ok((state, trace))
}

/// Runs the iteration for the lid-driven cavity.
pub fn newton_solve(
    disc: &Discretization,
    params: &KktParams,
    cfg: &NewtonConfig,
) -> Result<(StateIterate, NewtonTrace)> {
    newton_solve_from(disc, initial_state(disc), params, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kkt::Approach;
    use crate::precond::OuterKind;

    fn trace_with(residuals: &[f64]) -> NewtonTrace {
        NewtonTrace {
            residuals: residuals.to_vec(),
            linear_iters: vec![1; residuals.len().saturating_sub(1)],
            ..Default::default()
        }
    }

    #[test]
    fn convergence_decisions() {
        let cfg = NewtonConfig::default();
        assert_eq!(convergence_check(&trace_with(&[1.0, 1e-6]), &cfg), Decision::Converged);
        assert_eq!(convergence_check(&trace_with(&[1.0, 1e-4]), &cfg), Decision::Continue);
        assert_eq!(convergence_check(&trace_with(&[0.0]), &cfg), Decision::Converged);
        let long = trace_with(&[1.0; 11]);
        assert_eq!(convergence_check(&long, &cfg), Decision::Exhausted);
    }

    #[test]
    fn rounded_average() {
        assert_eq!(rounded_mean(&[30, 31]), 31);
        assert_eq!(rounded_mean(&[3, 3, 4]), 3);
        assert_eq!(rounded_mean(&[]), 0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = NewtonConfig::default();
        cfg.tolerance = 1.5;
        assert!(cfg.validate().is_err());
        cfg.tolerance = 1e-5;
        cfg.max_iters = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_data_converges_immediately() {
        let disc = Discretization::new(2).unwrap();
        let s = StateIterate::from_lift(&disc, vec![0.0; disc.dofmap.n_v_full]);
        let (out, trace) =
            newton_solve_from(&disc, s.clone(), &KktParams::new(0.01, 1e-2), &NewtonConfig::default())
                .unwrap();
        assert!(trace.converged);
        assert_eq!(trace.iterations(), 0);
        assert_eq!(out, s);
    }

    #[test]
    fn stokes_step_keeps_boundary_values() {
        let disc = Discretization::new(2).unwrap();
        let s0 = initial_state(&disc);
        let cfg = NewtonConfig {
            solver: LinearSolver::Direct,
            ..NewtonConfig::default()
        };
        let (s1, _) = stokes_init(&disc, &s0, &KktParams::new(0.01, 1e-2), &cfg).unwrap();
        for &i in &disc.dofmap.boundary {
            assert_eq!(s1.v[i], s0.v[i]);
            assert_eq!(s1.zeta[i], 0.0);
        }
    }

    #[test]
    fn direct_newton_converges_on_a_coarse_cavity() {
        let disc = Discretization::new(3).unwrap();
        let cfg = NewtonConfig {
            solver: LinearSolver::Direct,
            ..NewtonConfig::default()
        };
        let (_, trace) = newton_solve(&disc, &KktParams::new(0.01, 1e-2), &cfg).unwrap();
        assert!(trace.converged, "{:?}", trace.residuals);
        assert!(trace.iterations() <= 6);
    }

    #[test]
    fn krylov_newton_matches_direct_counts() {
        let disc = Discretization::new(3).unwrap();
        let params = KktParams::new(0.01, 1e-3);
        let direct = NewtonConfig {
            solver: LinearSolver::Direct,
            ..NewtonConfig::default()
        };
        let krylov = NewtonConfig {
            stack: StackConfig::new(OuterKind::Al),
            ..NewtonConfig::default()
        };
        let (_, a) = newton_solve(&disc, &params, &direct).unwrap();
        let (_, b) = newton_solve(&disc, &params, &krylov).unwrap();
        assert!(a.converged && b.converged);
        assert!(a.iterations().abs_diff(b.iterations()) <= 1);
        assert!(b.linear_iters.iter().all(|&k| k > 0 && k <= 12));
        assert_eq!(b.average_linear_iters(), rounded_mean(&b.linear_iters));
    }

    #[test]
    fn full_newton_is_not_slower() {
        let disc = Discretization::new(3).unwrap();
        let mut params = KktParams::new(0.01, 1e-2);
        params.approach = Approach::Dto;
        let cfg = NewtonConfig {
            solver: LinearSolver::Direct,
            ..NewtonConfig::default()
        };
        let (_, inexact) = newton_solve(&disc, &params, &cfg).unwrap();
        params.full_newton = true;
        let (_, full) = newton_solve(&disc, &params, &cfg).unwrap();
        assert!(full.converged);
        assert!(full.iterations() <= inexact.iterations() + 1);
    }
}
