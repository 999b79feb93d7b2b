//! Fixtures shared by the benchmarks.

use nsctl_core::kkt::{build_kkt, KktParams, KktSystem, Model, StateIterate};
use nsctl_core::newton::{initial_state, stokes_init, LinearSolver, NewtonConfig};
use nsctl_core::{Discretization, OuterKind, Result};

/// Cavity parameters used by every benchmark.
pub fn params(precond: OuterKind, beta: f64) -> KktParams {
    let mut p = KktParams::new(1.0 / 100.0, beta);
    p.augment = precond == OuterKind::Al;
    p
}

/// The state after the Stokes step, solved directly.
pub fn stokes_state(disc: &Discretization, params: &KktParams) -> Result<StateIterate> {
    let cfg = NewtonConfig {
        solver: LinearSolver::Direct,
        ..NewtonConfig::default()
    };
    let (mut state, _) = stokes_init(disc, &initial_state(disc), params, &cfg)?;
    state.lps_wind = Some(state.v.clone());
    Ok(state)
}

/// The first Navier-Stokes step system of the cavity at `level`.
pub fn cavity_step(level: u32, precond: OuterKind, beta: f64) -> Result<(Discretization, KktSystem)> {
    let disc = Discretization::new(level)?;
    let p = params(precond, beta);
    let state = stokes_state(&disc, &p)?;
    let sys = build_kkt(&disc, &state, &p, Model::NavierStokes)?;
    Ok((disc, sys))
}

/// A deterministic right-hand side of length `n`.
pub fn test_vector(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i as f64) * 0.618_034).sin()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_builds() {
        let (disc, sys) = cavity_step(2, OuterKind::Al, 1e-2).unwrap();
        assert_eq!(sys.dim(), disc.dofmap.coupled_dim());
        assert!(sys.augmented);
        assert!(sys.residual.norm() > 0.0);
    }
}
