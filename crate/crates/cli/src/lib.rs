//! Argument parsing and case execution for the `nsctl` binary.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;

use clap::Parser;
use nsctl_core::cavity::{expand_sweep, run_case_exporting, run_sweep};
use nsctl_core::report::write_report;
use nsctl_core::{Approach, CaseResult, CaseSpec, Error, Format, LpsMode, OuterKind, Problem, Result};

/// Parses a real number, also accepting a reciprocal such as `1/250`.
pub fn parse_real(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    let value = match s.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse().map_err(|_| format!("malformed number '{s}'"))?;
            let den: f64 = den.trim().parse().map_err(|_| format!("malformed number '{s}'"))?;
            num / den
        }
        None => s.parse().map_err(|_| format!("malformed number '{s}'"))?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(format!("'{s}' is not a finite number"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "nsctl", version, allow_negative_numbers = true, about = "Distributed control of the lid-driven cavity: Newton sweeps and iteration tables")]
pub struct Cli {
    /// Refinement levels, comma separated.
    #[arg(long, value_delimiter = ',', required_unless_present = "config")]
    pub level: Vec<u32>,

    /// Viscosities; `1/250` style reciprocals are accepted.
    #[arg(long, value_delimiter = ',', value_parser = parse_real, default_value = "1/100")]
    pub nu: Vec<f64>,

    /// Control regularization parameters.
    #[arg(long, value_delimiter = ',', value_parser = parse_real, default_value = "1e-1")]
    pub beta: Vec<f64>,

    /// Augmentation weight. Defaults to 10/sqrt(beta) per case.
    #[arg(long, value_parser = parse_real)]
    pub gamma: Option<f64>,

    #[arg(long, default_value = "al")]
    pub precond: OuterKind,

    #[arg(long, default_value = "otd")]
    pub approach: Approach,

    /// Local projection stabilization: off, current or lagged.
    #[arg(long, default_value = "lagged")]
    pub lps: LpsMode,

    /// Include the second-order convection terms in the state block.
    #[arg(long)]
    pub full_newton: bool,

    #[arg(long, value_parser = parse_real, default_value = "1e-6")]
    pub tol_linear: f64,

    #[arg(long, value_parser = parse_real, default_value = "1e-5")]
    pub tol_newton: f64,

    #[arg(long, default_value_t = 10)]
    pub max_newton: usize,

    #[arg(long, default_value_t = 200)]
    pub max_linear: usize,

    /// Solve mass matrices directly instead of by Chebyshev iteration.
    #[arg(long)]
    pub exact_blocks: bool,

    #[arg(long, default_value_t = 5)]
    pub inner_iters: usize,

    #[arg(long, default_value_t = 20)]
    pub cheb_steps: usize,

    /// Constant body force `fx,fy`.
    #[arg(long, value_delimiter = ',', value_parser = parse_real, num_args = 2)]
    pub forcing: Option<Vec<f64>>,

    /// Constant desired state `vx,vy`.
    #[arg(long, value_delimiter = ',', value_parser = parse_real, num_args = 2)]
    pub desired: Option<Vec<f64>>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value = "cavity")]
    pub problem: Problem,

    /// JSON file holding an array of case specifications; replaces the
    /// sweep flags.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long, default_value = "md")]
    pub format: Format,

    /// Directory for Matrix Market dumps of every step system.
    #[arg(long)]
    pub export_matrices: Option<PathBuf>,

    /// Number of cases run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

fn pair(v: &Option<Vec<f64>>) -> [f64; 2] {
    match v.as_deref() {
        Some([a, b]) => [*a, *b],
        _ => [0.0; 2],
    }
}

impl Cli {
    /// The cases described by the arguments, ordered by level, viscosity
    /// and beta.
    pub fn specs(&self) -> Result<Vec<CaseSpec>> {
        if let Some(path) = &self.config {
            let specs: Vec<CaseSpec> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
            for s in &specs {
                s.validate()?;
            }
            return Ok(specs);
        }
        let mut base = CaseSpec::new(1, 0.01, 0.1, self.precond);
        base.problem = self.problem;
        base.approach = self.approach;
        base.lps = self.lps;
        base.full_newton = self.full_newton;
        base.tol_linear = self.tol_linear;
        base.tol_newton = self.tol_newton;
        base.max_newton = self.max_newton;
        base.max_linear = self.max_linear;
        base.exact_blocks = self.exact_blocks;
        base.inner_iters = self.inner_iters;
        base.cheb_steps = self.cheb_steps;
        base.forcing = pair(&self.forcing);
        base.desired = pair(&self.desired);
        base.seed = self.seed;
        let specs = expand_sweep(&base, &self.level, &self.nu, &self.beta, self.gamma);
        if specs.is_empty() {
            return Err(Error::Config("empty sweep".into()));
        }
        for s in &specs {
            s.validate()?;
        }
        Ok(specs)
    }

    pub fn execute(&self, specs: &[CaseSpec]) -> Result<Vec<CaseResult>> {
        match &self.export_matrices {
            Some(dir) => {
                if specs.is_empty() {
                    return Err(Error::Config("empty sweep".into()));
                }
                Ok(specs.iter().map(|s| run_case_exporting(s, Some(dir))).collect())
            }
            None => run_sweep(specs, self.jobs),
        }
    }

    pub fn emit(&self, results: &[CaseResult]) -> Result<()> {
        match &self.out {
            Some(path) => {
                let mut w = BufWriter::new(File::create(path)?);
                write_report(results, self.format, &mut w)?;
                w.flush()?;
            }
            None => {
                let stdout = io::stdout();
                let mut w = stdout.lock();
                write_report(results, self.format, &mut w)?;
                w.flush()?;
            }
        }
        Ok(())
    }
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("NSCTL_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}
