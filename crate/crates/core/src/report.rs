//! Serialization of sweep results: CSV rows, versioned JSON and Markdown
//! pivot tables.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::cavity::CaseResult;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Marker appended to cells whose case did not converge.
pub const NOT_CONVERGED: &str = "\u{2020}";

pub const CSV_HEADER: [&str; 11] = [
    "level",
    "dof",
    "nu",
    "beta",
    "gamma",
    "precond",
    "approach",
    "newton_iters",
    "avg_fgmres",
    "converged",
    "runtime_s",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Md,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "md" | "markdown" => Ok(Format::Md),
            _ => Err(Error::Config(format!("unknown format '{s}' (expected csv, json or md)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub results: Vec<CaseResult>,
}

impl Report {
    pub fn new(results: Vec<CaseResult>) -> Self {
        Self { schema_version: SCHEMA_VERSION, results }
    }
}

pub fn write_csv<W: Write>(results: &[CaseResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in results {
        let s = &r.spec;
        w.write_record([
            s.level.to_string(),
            r.dof.to_string(),
            s.nu.to_string(),
            format!("{:e}", s.beta),
            s.gamma.to_string(),
            s.precond.to_string(),
            s.approach.to_string(),
            r.newton_iters.to_string(),
            r.avg_fgmres.to_string(),
            r.converged.to_string(),
            format!("{:.6}", r.runtime_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(results: &[CaseResult], out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, &Report::new(results.to_vec()))?;
    Ok(())
}

pub fn read_json<R: Read>(input: R) -> Result<Report> {
    let report: Report = serde_json::from_reader(input)?;
    if report.schema_version != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "unsupported schema version {} (expected {SCHEMA_VERSION})",
            report.schema_version
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    NewtonIters,
    AvgFgmres,
}

impl Metric {
    fn title(self) -> &'static str {
        match self {
            Metric::NewtonIters => "Newton iterations",
            Metric::AvgFgmres => "average FGMRES iterations",
        }
    }
}

/// One table per viscosity: rows are levels, columns are beta values.
#[derive(Debug, Clone, PartialEq)]
pub struct PivotTable {
    pub nu: f64,
    pub levels: Vec<u32>,
    pub betas: Vec<f64>,
    pub cells: Vec<Vec<Option<String>>>,
}

fn push_unique<T: PartialEq + Copy>(v: &mut Vec<T>, x: T) {
    if !v.contains(&x) {
        v.push(x);
    }
}

pub fn pivot(results: &[CaseResult], metric: Metric) -> Vec<PivotTable> {
    let mut nus = Vec::new();
    for r in results {
        push_unique(&mut nus, r.spec.nu);
    }
    nus.into_iter()
        .map(|nu| {
            let rows: Vec<&CaseResult> = results.iter().filter(|r| r.spec.nu == nu).collect();
            let mut levels = Vec::new();
            let mut betas = Vec::new();
            for r in &rows {
                push_unique(&mut levels, r.spec.level);
                push_unique(&mut betas, r.spec.beta);
            }
            levels.sort_unstable();
            betas.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
            let mut cells = vec![vec![None; betas.len()]; levels.len()];
            for r in rows {
                let i = levels.iter().position(|&l| l == r.spec.level).unwrap();
                let j = betas.iter().position(|&b| b == r.spec.beta).unwrap();
                let value = match metric {
                    Metric::NewtonIters => r.newton_iters,
                    Metric::AvgFgmres => r.avg_fgmres,
                };
                let mark = if r.converged { "" } else { NOT_CONVERGED };
                cells[i][j] = Some(format!("{value}{mark}"));
            }
            PivotTable { nu, levels, betas, cells }
        })
        .collect()
}

fn format_nu(nu: f64) -> String {
    let inv = 1.0 / nu;
    if (inv - inv.round()).abs() < 1e-9 * inv {
        format!("1/{}", inv.round() as i64)
    } else {
        nu.to_string()
    }
}

pub fn pivot_markdown(tables: &[PivotTable], metric: Metric) -> String {
    let mut s = String::new();
    for t in tables {
        let _ = writeln!(s, "### {}, nu = {}\n", metric.title(), format_nu(t.nu));
        s.push_str("| level |");
        for b in &t.betas {
            let _ = write!(s, " {b:e} |");
        }
        s.push_str("\n|---|");
        for _ in &t.betas {
            s.push_str("---|");
        }
        s.push('\n');
        for (level, row) in t.levels.iter().zip(&t.cells) {
            let _ = write!(s, "| {level} |");
            for c in row {
                let _ = write!(s, " {} |", c.as_deref().unwrap_or("-"));
            }
            s.push('\n');
        }
        s.push('\n');
    }
    s
}

pub fn write_markdown<W: Write>(results: &[CaseResult], mut out: W) -> Result<()> {
    let mut s = pivot_markdown(&pivot(results, Metric::NewtonIters), Metric::NewtonIters);
    s.push_str(&pivot_markdown(&pivot(results, Metric::AvgFgmres), Metric::AvgFgmres));
    if results.iter().any(|r| !r.converged) {
        let _ = writeln!(s, "{NOT_CONVERGED} not converged\n");
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

pub fn write_report<W: Write>(results: &[CaseResult], format: Format, out: W) -> Result<()> {
    match format {
        Format::Csv => write_csv(results, out),
        Format::Json => write_json(results, out),
        Format::Md => write_markdown(results, out),
    }
}
