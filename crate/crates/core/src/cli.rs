//! The `dphase` command line.
//!
//! Exit codes: 0 success, 1 numerical failure (artifacts are still written),
//! 2 invalid input.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{RunConfig, Setup};
use crate::energy::EnergyBreakdown;
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::hardy::{adversarial_family, calibrate, Calibration, HardyChecker, HardyReport, PASS_TOL};
use crate::sampling::Sampler;
use crate::solver::{
    certify_with_constants, embedding_constants, ps_monitor, solve_with_geometry, sweep_lambda,
    EmbeddingConstants, Positivity, PsReport, SweepRow, TraceEntry,
};
use crate::suites;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dphase", version, about = "Double-phase problems with a singular Hardy term")]
pub struct Cli {
    /// Run configuration (TOML). The built-in default fixture is used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Overrides `output_dir` from the config.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Worker threads. Every computation currently runs on one thread, and
    /// results never depend on this value.
    #[arg(long, global = true, env = "DPHASE_THREADS", default_value = "1", hide_env_values = true)]
    pub threads: NonZeroUsize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Modular/norm and energy property suites on seeded random functions.
    Verify(SampleArgs),
    /// Hardy upper and lower bounds on random (and adversarial) functions.
    Hardy(HardyArgs),
    /// Mountain-pass solve; writes solution.csv, trace.csv and summary.json.
    Solve,
    /// One solve per lambda; writes sweep.csv and sweep.json.
    Sweep(SweepArgs),
    /// Recomputes the Hardy embedding factor; writes hardy_calibration.toml.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct HardyArgs {
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    /// Adds concentration functions at the node nearest the origin.
    #[arg(long)]
    pub adversarial: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated lambda values; a trailing `x` means a multiple of lambda_hat
    /// (`0.25x,0.5x,10x`).
    #[arg(long, value_name = "LIST")]
    pub lambdas: String,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Overrides `hardy.calibration_samples`.
    #[arg(long)]
    pub samples: Option<usize>,
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Bracketing(_)
        | Error::Geometry { .. }
        | Error::Endpoint(_)
        | Error::ClampRejected(_)
        | Error::Io(_) => EXIT_NUMERICAL,
        _ => EXIT_INVALID,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default_config(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<i32> {
    let mut cfg = load_config(cli)?;
    if let Command::Calibrate(a) = &cli.command {
        if let Some(n) = a.samples {
            cfg.hardy.calibration_samples = n;
        }
    }
    let setup = cfg.build()?;
    match &cli.command {
        Command::Verify(a) => cmd_verify(&setup, a.samples),
        Command::Hardy(a) => cmd_hardy(&setup, a.samples, a.adversarial),
        Command::Solve => cmd_solve(&setup),
        Command::Sweep(a) => cmd_sweep(&setup, &a.lambdas),
        Command::Calibrate(_) => cmd_calibrate(&setup),
    }
}

fn out_dir(setup: &Setup) -> Result<&Path> {
    let dir = setup.config.output_dir.as_path();
    fs::create_dir_all(dir)?;
    Ok(dir)
}

fn constants(setup: &Setup) -> Result<EmbeddingConstants> {
    embedding_constants(
        &setup.grid,
        &setup.exponents,
        &setup.params,
        &setup.config.solver,
        setup.config.seed,
    )
}

fn cmd_verify(setup: &Setup, samples: usize) -> Result<i32> {
    if samples == 0 {
        println!("no samples: nothing to verify");
        return Ok(EXIT_OK);
    }
    let lambda = setup.lambda(&constants(setup)?);
    let prm = setup.params_for(lambda);
    let rows = suites::run_all(&setup.grid, &setup.exponents, &prm, samples, setup.config.seed)?;
    println!("{:<28} {:<6} {:>12} {:>8}", "property", "status", "slack", "checks");
    for r in &rows {
        let status = if r.passed { "PASS" } else { "FAIL" };
        println!("{:<28} {:<6} {:>12.3e} {:>8}", r.name, status, r.slack, r.checks);
    }
    match rows.iter().find(|r| !r.passed) {
        Some(r) => {
            eprintln!("first failing property: {}", r.name);
            Ok(EXIT_NUMERICAL)
        }
        None => Ok(EXIT_OK),
    }
}

/// Calibration for `setup`: the configured file, the shipped default when its key
/// matches, or a fresh sweep otherwise.
pub fn resolve_calibration(setup: &Setup) -> Result<(Calibration, &'static str)> {
    let key = setup.config.hardy_key();
    if let Some(path) = &setup.config.hardy.calibration {
        let c = Calibration::load(path)?;
        if c.key != key {
            return Err(Error::Config {
                path: "hardy.calibration".into(),
                message: format!(
                    "{} was computed for a different grid/exponent/alpha setting; rerun `dphase calibrate`",
                    path.display()
                ),
            });
        }
        return Ok((c, "file"));
    }
    let shipped = Calibration::shipped_default();
    if shipped.key == key {
        return Ok((shipped, "shipped"));
    }
    let h = &setup.config.hardy;
    let c = calibrate(
        &setup.grid,
        &setup.exponents,
        setup.params.alpha,
        setup.params.sing_floor,
        h.calibration_samples,
        h.calibration_seed,
        &key,
    )?;
    Ok((c, "computed"))
}

#[derive(Debug, Serialize)]
pub struct HardySummary {
    pub samples: usize,
    pub adversarial: usize,
    pub c_hat: f64,
    pub calibration: &'static str,
    pub constant: f64,
    pub tau: f64,
    pub radius_max: f64,
    pub upper_violations: usize,
    pub lower_violations: usize,
    pub split_violations: usize,
    pub min_upper_slack: f64,
    pub min_lower_slack: f64,
    pub max_split_defect: f64,
    pub worst: Option<HardyReport>,
    pub seed: u64,
    pub config_hash: String,
}

impl HardySummary {
    pub fn passed(&self) -> bool {
        self.upper_violations == 0 && self.lower_violations == 0 && self.split_violations == 0
    }
}

/// Runs the Hardy checks and returns the summary with the function of smallest
/// upper slack.
pub fn hardy_sweep(
    setup: &Setup,
    calibration: &Calibration,
    source: &'static str,
    samples: usize,
    adversarial: bool,
) -> Result<(HardySummary, Option<GridFunction>)> {
    let grid = &setup.grid;
    let e = &setup.exponents;
    let checker = HardyChecker::new(grid, e, setup.params.alpha, setup.params.sing_floor, calibration.c_hat)?;
    let mut sampler = Sampler::new(grid, setup.config.seed);
    let mut funcs: Vec<GridFunction> = (0..samples).map(|_| sampler.next_function()).collect();
    let extra = if adversarial { adversarial_family(grid, e)? } else { Vec::new() };
    let n_extra = extra.len();
    funcs.extend(extra);

    let mut s = HardySummary {
        samples,
        adversarial: n_extra,
        c_hat: calibration.c_hat,
        calibration: source,
        constant: checker.constant(),
        tau: checker.tau(),
        radius_max: checker.radius_max(),
        upper_violations: 0,
        lower_violations: 0,
        split_violations: 0,
        min_upper_slack: f64::INFINITY,
        min_lower_slack: f64::INFINITY,
        max_split_defect: 0.0,
        worst: None,
        seed: setup.config.seed,
        config_hash: setup.config.hash(),
    };
    let mut worst_fn = None;
    for u in funcs {
        if u.is_zero() {
            continue;
        }
        let r = checker.report(&u)?;
        s.upper_violations += usize::from(!r.upper_passed);
        s.lower_violations += usize::from(!r.lower_passed);
        let defect = r.split_defect();
        s.split_violations += usize::from(defect > PASS_TOL);
        s.max_split_defect = s.max_split_defect.max(defect);
        s.min_lower_slack = s.min_lower_slack.min(r.lower_slack());
        if r.upper_slack() < s.min_upper_slack {
            s.min_upper_slack = r.upper_slack();
            s.worst = Some(r);
            worst_fn = Some(u);
        }
    }
    Ok((s, worst_fn))
}

fn cmd_hardy(setup: &Setup, samples: usize, adversarial: bool) -> Result<i32> {
    if samples == 0 && !adversarial {
        println!("no samples: nothing to check");
        return Ok(EXIT_OK);
    }
    // the excluded exponent cases are input errors, so check them before calibrating
    HardyChecker::new(&setup.grid, &setup.exponents, setup.params.alpha, setup.params.sing_floor, 1.0)?;
    let (cal, source) = resolve_calibration(setup)?;
    if source == "computed" {
        println!(
            "calibration: computed from {} samples (no stored calibration for this setting)",
            cal.samples
        );
    }
    let (s, worst) = hardy_sweep(setup, &cal, source, samples, adversarial)?;
    let dir = out_dir(setup)?;
    if let Some(u) = &worst {
        u.write_csv(BufWriter::new(File::create(dir.join("hardy_worst.csv"))?))?;
    }
    write_json(&dir.join("hardy_summary.json"), &s)?;
    println!("functions        {} random + {} adversarial", s.samples, s.adversarial);
    println!("c_hat            {:.6e} ({})", s.c_hat, s.calibration);
    println!("constant         {:.6e}", s.constant);
    println!("upper violations {}  min slack {:.3e}", s.upper_violations, s.min_upper_slack);
    println!("lower violations {}  min slack {:.3e}", s.lower_violations, s.min_lower_slack);
    println!("split defect     {:.3e}", s.max_split_defect);
    Ok(if s.passed() { EXIT_OK } else { EXIT_NUMERICAL })
}

#[derive(Debug, Serialize)]
pub struct SolveSummary {
    pub converged: bool,
    pub lambda: f64,
    pub lambda_hat: f64,
    pub energy: Option<EnergyBreakdown>,
    pub residual: Option<f64>,
    pub positivity: Option<Positivity>,
    pub u_minus_test: Option<f64>,
    pub c_mp_estimate: Option<f64>,
    pub eta: Option<f64>,
    pub gamma: Option<f64>,
    pub endpoint_scale: Option<f64>,
    pub iterations: Option<usize>,
    pub confirm_iterations: Option<usize>,
    pub constants: EmbeddingConstants,
    pub ps_monitor: Option<PsReport>,
    pub error: Option<String>,
    pub seed: u64,
    pub config_hash: String,
}

/// Runs the solver pipeline and writes the artifacts into the output directory.
pub fn run_solve(setup: &Setup) -> Result<SolveSummary> {
    let cfg = &setup.config;
    let k = constants(setup)?;
    let lambda = setup.lambda(&k);
    let prm = setup.params_for(lambda);
    let dir = out_dir(setup)?;
    let mut s = SolveSummary {
        converged: false,
        lambda,
        lambda_hat: k.lambda_hat,
        energy: None,
        residual: None,
        positivity: None,
        u_minus_test: None,
        c_mp_estimate: None,
        eta: None,
        gamma: None,
        endpoint_scale: None,
        iterations: None,
        confirm_iterations: None,
        constants: k,
        ps_monitor: None,
        error: None,
        seed: cfg.seed,
        config_hash: cfg.hash(),
    };
    let run = certify_with_constants(&setup.grid, &setup.exponents, &prm, &cfg.solver, cfg.seed, k)
        .and_then(|g| solve_with_geometry(&setup.grid, &setup.exponents, &prm, &cfg.solver, g));
    match run {
        Ok((g, r)) => {
            let b = setup.exponents.bounds();
            s.converged = r.converged;
            s.energy = Some(r.energy);
            s.residual = Some(r.residual_norm);
            s.positivity = Some(r.positivity);
            s.u_minus_test = Some(r.u_minus_test);
            s.c_mp_estimate = Some(r.mp_level_estimate);
            s.eta = Some(g.eta);
            s.gamma = Some(g.gamma);
            s.endpoint_scale = Some(r.endpoint_scale);
            s.iterations = Some(r.iterations);
            s.confirm_iterations = Some(r.confirm_iterations);
            s.ps_monitor = Some(ps_monitor(&r.trace, b.p_minus, b.q_plus, prm.theta));
            r.solution
                .write_csv(BufWriter::new(File::create(dir.join("solution.csv"))?))?;
            write_trace(&dir.join("trace.csv"), &r.trace)?;
        }
        Err(e) if exit_code(&e) == EXIT_NUMERICAL => {
            if let Error::Geometry { eta, gamma, .. } = &e {
                s.eta = Some(*eta);
                s.gamma = Some(*gamma);
            }
            s.error = Some(e.to_string());
        }
        Err(e) => return Err(e),
    }
    write_json(&dir.join("summary.json"), &s)?;
    Ok(s)
}

fn cmd_solve(setup: &Setup) -> Result<i32> {
    let s = run_solve(setup)?;
    println!("lambda     {:.6e} (lambda_hat {:.6e})", s.lambda, s.lambda_hat);
    if let Some(err) = &s.error {
        println!("failed: {err}");
        if err.contains("geometry") {
            println!("note: lambda is too large for the certified mountain-pass geometry");
        }
        return Ok(EXIT_NUMERICAL);
    }
    let energy = s.energy.map_or(f64::NAN, |e| e.total);
    println!("converged  {}", s.converged);
    println!("energy     {energy:.9e} (eta {:.3e})", s.eta.unwrap_or(f64::NAN));
    println!("residual   {:.3e}", s.residual.unwrap_or(f64::NAN));
    if let Some(p) = s.positivity {
        println!("min value  {:.3e}", p.min_node_value);
    }
    println!("output     {}", setup.config.output_dir.display());
    Ok(if s.converged { EXIT_OK } else { EXIT_NUMERICAL })
}

/// Parses `0.5,1e-2,10x`; entries ending in `x` are multiples of `lambda_hat`.
pub fn parse_lambdas(list: &str, lambda_hat: f64) -> Result<Vec<f64>> {
    let bad = |m: String| Error::Config {
        path: "--lambdas".into(),
        message: m,
    };
    let mut out = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (num, scale) = match item.strip_suffix('x') {
            Some(n) => (n, lambda_hat),
            None => (item, 1.0),
        };
        let v: f64 = num.parse().map_err(|_| bad(format!("`{item}` is not a number")))?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(bad(format!("`{item}` must be finite and nonnegative")));
        }
        out.push(v * scale);
    }
    if out.is_empty() {
        return Err(bad("empty list".into()));
    }
    Ok(out)
}

fn cmd_sweep(setup: &Setup, list: &str) -> Result<i32> {
    // reject a malformed list before the expensive constants
    parse_lambdas(list, 1.0)?;
    let k = constants(setup)?;
    let lambdas = parse_lambdas(list, k.lambda_hat)?;
    let cfg = &setup.config;
    let rows = sweep_lambda(&setup.grid, &setup.exponents, &setup.params, &cfg.solver, &lambdas, cfg.seed)?;
    let dir = out_dir(setup)?;
    write_sweep_csv(&dir.join("sweep.csv"), &rows)?;
    write_json(&dir.join("sweep.json"), &rows)?;
    println!("{:>14} {:>9} {:>14} {:>10}", "lambda", "converged", "energy", "residual");
    for r in &rows {
        println!(
            "{:>14.6e} {:>9} {:>14.6e} {:>10.3e}{}",
            r.lambda,
            r.converged,
            r.energy.unwrap_or(f64::NAN),
            r.residual.unwrap_or(f64::NAN),
            r.error.as_deref().map(|e| format!("  {e}")).unwrap_or_default()
        );
    }
    Ok(if rows.iter().all(|r| r.converged) { EXIT_OK } else { EXIT_NUMERICAL })
}

fn cmd_calibrate(setup: &Setup) -> Result<i32> {
    let h = &setup.config.hardy;
    let c = calibrate(
        &setup.grid,
        &setup.exponents,
        setup.params.alpha,
        setup.params.sing_floor,
        h.calibration_samples,
        h.calibration_seed,
        &setup.config.hardy_key(),
    )?;
    let path = out_dir(setup)?.join("hardy_calibration.toml");
    c.save(&path)?;
    println!("max ratio {:.6e}, c_hat {:.6e} -> {}", c.max_ratio, c.c_hat, path.display());
    Ok(EXIT_OK)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("summary serializes");
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn write_trace(path: &Path, trace: &[TraceEntry]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "iteration,confirm,energy,residual,norm,l2_norm,path_end_energy,max_index,step")?;
    for t in trace {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            t.iteration, t.confirm, t.energy, t.residual, t.norm, t.l2_norm, t.path_end_energy, t.max_index, t.step
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "lambda,converged,energy,norm,residual,eta,error")?;
    for r in rows {
        let err = r.error.as_deref().unwrap_or("").replace('"', "'");
        writeln!(
            w,
            "{},{},{},{},{},{},\"{}\"",
            r.lambda,
            r.converged,
            opt(r.energy),
            opt(r.norm),
            opt(r.residual),
            opt(r.eta),
            err
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_lists() {
        assert_eq!(parse_lambdas("1, 0.5x,2x", 10.0).unwrap(), vec![1.0, 5.0, 20.0]);
        assert!(parse_lambdas("1,a", 1.0).is_err());
        assert!(parse_lambdas("", 1.0).is_err());
        assert!(parse_lambdas("-1", 1.0).is_err());
    }

    #[test]
    fn argument_errors_exit_two() {
        assert_eq!(run(["dphase", "solve", "--bogus"]), EXIT_INVALID);
        assert_eq!(run(["dphase", "--config", "/nonexistent/x.toml", "solve"]), EXIT_INVALID);
    }
}
