//! Lid-driven cavity control benchmark: case specification, execution and
//! sweeps.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::coupled_dof_count;
use crate::kkt::{default_gamma, Approach, KktParams, KktSystem, LpsMode};
use crate::krylov::KrylovConfig;
use crate::newton::{initial_state, newton_solve_observed, LinearSolver, NewtonConfig, NewtonTrace, DEFAULT_MAX_ITERS};
use crate::operators::Discretization;
use crate::precond::{OuterKind, StackConfig, DEFAULT_INNER_ITERS};

/// The benchmark problems that can be run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    Cavity,
}

impl std::str::FromStr for Problem {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cavity" => Ok(Problem::Cavity),
            _ => Err(Error::Config(format!("unknown problem '{s}' (expected cavity)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub problem: Problem,
    pub level: u32,
    pub nu: f64,
    pub beta: f64,
    pub gamma: f64,
    pub precond: OuterKind,
    pub approach: Approach,
    pub full_newton: bool,
    pub lps: LpsMode,
    pub tol_linear: f64,
    pub tol_newton: f64,
    pub max_newton: usize,
    pub max_linear: usize,
    /// Direct mass solves inside the preconditioner.
    pub exact_blocks: bool,
    pub inner_iters: usize,
    pub cheb_steps: usize,
    pub forcing: [f64; 2],
    pub desired: [f64; 2],
    pub seed: u64,
}

impl CaseSpec {
    pub fn new(level: u32, nu: f64, beta: f64, precond: OuterKind) -> Self {
        Self {
            problem: Problem::Cavity,
            level,
            nu,
            beta,
            gamma: default_gamma(beta),
            precond,
            approach: Approach::Otd,
            full_newton: false,
            lps: LpsMode::Lagged,
            tol_linear: 1e-6,
            tol_newton: 1e-5,
            max_newton: DEFAULT_MAX_ITERS,
            max_linear: 200,
            exact_blocks: false,
            inner_iters: DEFAULT_INNER_ITERS,
            cheb_steps: crate::chebyshev::DEFAULT_STEPS,
            forcing: [0.0; 2],
            desired: [0.0; 2],
            seed: 0,
        }
    }

    pub fn dof(&self) -> usize {
        coupled_dof_count(self.level)
    }

    pub fn validate(&self) -> Result<()> {
        if self.level < 1 || self.level > 12 {
            return Err(Error::InvalidLevel(self.level));
        }
        self.params().validate()?;
        if self.precond == OuterKind::Al && !(self.gamma > 0.0) {
            return Err(Error::Parameter(format!(
                "augmented Lagrangian needs gamma > 0, got {}",
                self.gamma
            )));
        }
        self.newton_config().validate()
    }

    pub fn params(&self) -> KktParams {
        let mut p = KktParams::new(self.nu, self.beta);
        p.gamma = self.gamma;
        p.approach = self.approach;
        p.augment = self.precond == OuterKind::Al;
        p.lps = self.lps;
        p.full_newton = self.full_newton;
        p.forcing = self.forcing;
        p.desired = self.desired;
        p
    }

    pub fn newton_config(&self) -> NewtonConfig {
        NewtonConfig {
            tolerance: self.tol_newton,
            max_iters: self.max_newton,
            linear: KrylovConfig {
                rtol: self.tol_linear,
                max_iters: self.max_linear,
                ..KrylovConfig::default()
            },
            stack: StackConfig {
                outer: self.precond,
                inner_iters: self.inner_iters,
                cheb_steps: self.cheb_steps,
                exact_blocks: self.exact_blocks,
            },
            solver: LinearSolver::Krylov,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub spec: CaseSpec,
    pub dof: usize,
    pub newton_iters: usize,
    /// Rounded mean of `fgmres_iters`.
    pub avg_fgmres: usize,
    pub fgmres_iters: Vec<usize>,
    pub residuals: Vec<f64>,
    pub linear_converged: Vec<bool>,
    pub step_seconds: Vec<f64>,
    pub runtime_s: f64,
    pub converged: bool,
    pub error: Option<String>,
}

impl CaseResult {
    fn from_trace(spec: CaseSpec, trace: NewtonTrace, runtime_s: f64) -> Self {
        Self {
            dof: spec.dof(),
            newton_iters: trace.iterations(),
            avg_fgmres: trace.average_linear_iters(),
            fgmres_iters: trace.linear_iters,
            residuals: trace.residuals,
            linear_converged: trace.linear_converged,
            step_seconds: trace.step_seconds,
            runtime_s,
            converged: trace.converged,
            error: None,
            spec,
        }
    }

    fn failed(spec: CaseSpec, err: &Error, runtime_s: f64) -> Self {
        Self {
            dof: spec.dof(),
            newton_iters: 0,
            avg_fgmres: 0,
            fgmres_iters: Vec::new(),
            residuals: Vec::new(),
            linear_converged: Vec::new(),
            step_seconds: Vec::new(),
            runtime_s,
            converged: false,
            error: Some(err.to_string()),
            spec,
        }
    }
}

/// Writes the blocks of a step system as `{block}_{level}_{step}.mtx`.
pub fn export_blocks(sys: &KktSystem, level: u32, step: usize, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let blocks = [
        ("M", &sys.m),
        ("Phi11", &sys.phi11),
        ("Phi12", &sys.phi12),
        ("Phi21", &sys.phi21),
        ("B", &sys.b),
    ];
    for (name, mat) in blocks {
        let path = dir.join(format!("{name}_{level}_{step}.mtx"));
        mat.write_matrix_market(BufWriter::new(File::create(path)?))?;
    }
    let path = dir.join(format!("KKT_{level}_{step}.mtx"));
    sys.to_sparse().write_matrix_market(BufWriter::new(File::create(path)?))
}

/// Runs one case. Failures are recorded in the result rather than returned.
pub fn run_case(spec: &CaseSpec) -> CaseResult {
    run_case_exporting(spec, None)
}

/// As [`run_case`], also writing every step system to `export` if given.
pub fn run_case_exporting(spec: &CaseSpec, export: Option<&Path>) -> CaseResult {
    let t0 = Instant::now();
    let outcome = spec.validate().and_then(|_| {
        let disc = Discretization::new(spec.level)?;
        let mut observe = |k: usize, sys: &KktSystem| match export {
            Some(dir) => export_blocks(sys, spec.level, k, dir),
            None => Ok(()),
        };
        newton_solve_observed(&disc, initial_state(&disc), &spec.params(), &spec.newton_config(), &mut observe)
    });
    let runtime = t0.elapsed().as_secs_f64();
    match outcome {
        Ok((_, trace)) => {
            log::info!(
                "l={} nu={} beta={:e} {}: {} Newton, avg {} FGMRES{}",
                spec.level,
                spec.nu,
                spec.beta,
                spec.precond,
                trace.iterations(),
                trace.average_linear_iters(),
                if trace.converged { "" } else { " (not converged)" }
            );
            CaseResult::from_trace(spec.clone(), trace, runtime)
        }
        Err(e) => {
            log::error!("l={} nu={} beta={:e}: {e}", spec.level, spec.nu, spec.beta);
            CaseResult::failed(spec.clone(), &e, runtime)
        }
    }
}

/// Runs every case, in parallel when `jobs > 1`. Results keep the input order.
pub fn run_sweep(specs: &[CaseSpec], jobs: usize) -> Result<Vec<CaseResult>> {
    if specs.is_empty() {
        return Err(Error::Config("empty sweep".into()));
    }
    if jobs <= 1 {
        return Ok(specs.iter().map(run_case).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| specs.par_iter().map(run_case).collect()))
}

/// Cross product of the listed values, ordered by level, then viscosity,
/// then beta.
pub fn expand_sweep(base: &CaseSpec, levels: &[u32], nus: &[f64], betas: &[f64], gamma: Option<f64>) -> Vec<CaseSpec> {
    let mut out = Vec::with_capacity(levels.len() * nus.len() * betas.len());
    for &level in levels {
        for &nu in nus {
            for &beta in betas {
                let mut s = base.clone();
                s.level = level;
                s.nu = nu;
                s.beta = beta;
                s.gamma = gamma.unwrap_or_else(|| default_gamma(beta));
                out.push(s);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_gamma_follows_beta() {
        let s = CaseSpec::new(3, 0.01, 1e-3, OuterKind::Al);
        assert!((s.gamma - 316.227_766_016_837_9).abs() < 1e-9);
        assert_eq!(s.dof(), 1062);
    }

    #[test]
    fn sweep_order_is_level_nu_beta() {
        let base = CaseSpec::new(3, 0.01, 0.1, OuterKind::Al);
        let specs = expand_sweep(&base, &[3, 4], &[0.01, 0.002], &[1e-1, 1e-2], None);
        assert_eq!(specs.len(), 8);
        let keys: Vec<(u32, f64, f64)> = specs.iter().map(|s| (s.level, s.nu, s.beta)).collect();
        assert_eq!(keys[0], (3, 0.01, 1e-1));
        assert_eq!(keys[1], (3, 0.01, 1e-2));
        assert_eq!(keys[2], (3, 0.002, 1e-1));
        assert_eq!(keys[4], (4, 0.01, 1e-1));
        assert_eq!(specs[1].gamma, 100.0);
    }

    #[test]
    fn empty_sweep_is_an_error() {
        assert!(matches!(run_sweep(&[], 1), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_case_is_recorded_not_raised() {
        let mut s = CaseSpec::new(2, -1.0, 0.1, OuterKind::Al);
        s.nu = -1.0;
        let r = run_case(&s);
        assert!(!r.converged);
        assert!(r.error.is_some());
    }

    #[test]
    fn bpcd_runs_unaugmented() {
        let s = CaseSpec::new(2, 0.01, 0.1, OuterKind::Bpcd);
        assert!(!s.params().augment);
        assert!(CaseSpec::new(2, 0.01, 0.1, OuterKind::Al).params().augment);
    }

    #[test]
    fn small_case_end_to_end() {
        let s = CaseSpec::new(2, 0.01, 1e-2, OuterKind::Al);
        let r = run_case(&s);
        assert!(r.converged, "{r:?}");
        assert_eq!(r.newton_iters, r.fgmres_iters.len());
        assert_eq!(r.avg_fgmres, crate::newton::rounded_mean(&r.fgmres_iters));
        assert_eq!(r.dof, coupled_dof_count(2));
    }

    #[test]
    fn export_writes_named_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let s = CaseSpec::new(1, 0.01, 1e-1, OuterKind::Al);
        let r = run_case_exporting(&s, Some(dir.path()));
        assert!(r.converged, "{r:?}");
        for k in 1..=r.newton_iters {
            for name in ["M", "Phi11", "Phi12", "Phi21", "B", "KKT"] {
                assert!(dir.path().join(format!("{name}_1_{k}.mtx")).exists(), "{name} {k}");
            }
        }
        let f = std::fs::File::open(dir.path().join("B_1_1.mtx")).unwrap();
        let b = crate::SparseMatrix::read_matrix_market(std::io::BufReader::new(f)).unwrap();
        assert_eq!(b.nrows(), crate::grid::build_mesh(1).map(|m| m.num_q1_nodes()).unwrap());
    }
}
