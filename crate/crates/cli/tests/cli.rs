use std::process::Command;

use clap::error::ErrorKind;
use clap::Parser;
use nsctl_cli::{parse_real, Cli};
use nsctl_core::{Approach, OuterKind};

fn parse(args: &[&str]) -> Result<Cli, clap::Error> {
    Cli::try_parse_from(std::iter::once("nsctl").chain(args.iter().copied()))
}

fn nsctl(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nsctl"))
        .args(args)
        .env("NSCTL_LOG", "off")
        .output()
        .expect("binary runs")
}

#[test]
fn single_case_gets_default_gamma() {
    let cli = parse(&["--level", "3", "--nu", "0.01", "--beta", "1e-3", "--precond", "al"]).unwrap();
    let specs = cli.specs().unwrap();
    assert_eq!(specs.len(), 1);
    assert!((specs[0].gamma - 316.227_766).abs() < 1e-5);
    assert_eq!(specs[0].precond, OuterKind::Al);
    assert_eq!(specs[0].dof(), 1062);
}

#[test]
fn comma_lists_form_a_cross_product() {
    let cli = parse(&["--level", "2,3", "--nu", "1/100,1/500", "--beta", "1e-1,1e-2", "--approach", "dto"]).unwrap();
    let specs = cli.specs().unwrap();
    assert_eq!(specs.len(), 8);
    assert_eq!((specs[0].level, specs[0].nu, specs[0].beta), (2, 0.01, 1e-1));
    assert_eq!((specs[3].level, specs[3].nu, specs[3].beta), (2, 0.002, 1e-2));
    assert_eq!(specs[7].level, 3);
    assert!(specs.iter().all(|s| s.approach == Approach::Dto));

    let two = parse(&["--level", "3", "--beta", "1e-1,1e-2"]).unwrap();
    assert_eq!(two.specs().unwrap().len(), 2);
}

#[test]
fn explicit_gamma_overrides_the_default() {
    let cli = parse(&["--level", "2", "--beta", "1e-2,1e-4", "--gamma", "7.5"]).unwrap();
    assert!(cli.specs().unwrap().iter().all(|s| s.gamma == 7.5));
}

#[test]
fn usage_errors() {
    assert_eq!(parse(&["--nu", "0.01"]).unwrap_err().kind(), ErrorKind::MissingRequiredArgument);
    assert_eq!(parse(&["--level", "3", "--bogus"]).unwrap_err().kind(), ErrorKind::UnknownArgument);
    assert_eq!(parse(&["--level", "3", "--beta", "1e-x"]).unwrap_err().kind(), ErrorKind::ValueValidation);
    assert_eq!(parse(&["--level", "3", "--precond", "amg"]).unwrap_err().kind(), ErrorKind::ValueValidation);
    assert_eq!(parse(&["--level", "3", "--format", "xml"]).unwrap_err().kind(), ErrorKind::ValueValidation);
    assert!(parse(&["--level", "3", "--nu", "-1"]).unwrap().specs().is_err());
}

#[test]
fn reciprocal_numbers() {
    assert_eq!(parse_real("1/250").unwrap(), 1.0 / 250.0);
    assert_eq!(parse_real(" 2e-3 ").unwrap(), 2e-3);
    assert!(parse_real("1/0").is_err());
    assert!(parse_real("abc").is_err());
}

#[test]
fn binary_reports_usage_errors_with_status_two() {
    let out = nsctl(&["--nu", "0.01"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--level"));
}

#[test]
fn binary_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    let out = nsctl(&["--level", "2", "--beta", "1e-2", "--format", "csv", "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "level,dof,nu,beta,gamma,precond,approach,newton_iters,avg_fgmres,converged,runtime_s");
    assert!(lines[1].starts_with("2,246,0.01,1e-2,100,al,otd,"), "{}", lines[1]);
    assert!(lines[1].contains(",true,"));
}

#[test]
fn repeated_runs_agree_apart_from_timing() {
    let strip = |o: std::process::Output| -> Vec<String> {
        String::from_utf8(o.stdout)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap_or_default())
            .collect()
    };
    let args = ["--level", "2", "--beta", "1e-1,1e-3", "--format", "csv"];
    let a = strip(nsctl(&args));
    let b = strip(nsctl(&args));
    assert_eq!(a.len(), 3);
    assert_eq!(a, b);
}

#[test]
fn parallel_sweep_keeps_order() {
    let args = ["--level", "1,2", "--beta", "1e-1,1e-2", "--format", "csv"];
    let serial = String::from_utf8(nsctl(&args).stdout).unwrap();
    let mut par_args = args.to_vec();
    par_args.extend(["--jobs", "2"]);
    let parallel = String::from_utf8(nsctl(&par_args).stdout).unwrap();
    let keys = |s: &str| -> Vec<String> { s.lines().map(|l| l.split(',').take(10).collect::<Vec<_>>().join(",")).collect() };
    assert_eq!(keys(&serial), keys(&parallel));
}

#[test]
fn markdown_pivot_shape() {
    let out = nsctl(&["--level", "1,2", "--beta", "1e-1,1e-2,1e-3", "--format", "md"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("Newton iterations, nu = 1/100"));
    let rows: Vec<&str> = text.lines().filter(|l| l.starts_with("| 1 |") || l.starts_with("| 2 |")).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.matches('|').count() == 5));
}

#[test]
fn json_output_parses_back() {
    let out = nsctl(&["--level", "2", "--nu", "1/250", "--precond", "bpcd", "--format", "json"]);
    assert!(out.status.success());
    let report = nsctl_core::report::read_json(out.stdout.as_slice()).unwrap();
    assert_eq!(report.results.len(), 1);
    let r = &report.results[0];
    assert_eq!(r.spec.precond, OuterKind::Bpcd);
    assert_eq!(r.avg_fgmres, nsctl_core::newton::rounded_mean(&r.fgmres_iters));
}

#[test]
fn config_file_replaces_flags() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = nsctl_core::CaseSpec::new(2, 0.01, 1e-2, OuterKind::Al);
    spec.exact_blocks = true;
    let path = dir.path().join("cases.json");
    std::fs::write(&path, serde_json::to_string(&vec![spec.clone()]).unwrap()).unwrap();
    let cli = parse(&["--config", path.to_str().unwrap()]).unwrap();
    assert_eq!(cli.specs().unwrap(), vec![spec]);
}

#[test]
fn matrices_are_exported_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = nsctl(&["--level", "1", "--export-matrices", dir.path().to_str().unwrap(), "--format", "csv"]);
    assert!(out.status.success());
    for name in ["M_1_1.mtx", "Phi12_1_1.mtx", "B_1_1.mtx", "KKT_1_2.mtx"] {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real general\n"), "{name}");
    }
}
