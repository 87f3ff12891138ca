//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::sync::Arc;
use std::time::{Duration, Instant};

use dphase::cli::{hardy_sweep, resolve_calibration, run_solve};
use dphase::config::{RunConfig, Setup};
use dphase::energy::{EnergyModel, Nonlinearity, ProblemParams};
use dphase::exponents::ExponentData;
use dphase::grid::Grid;
use dphase::hardy::PASS_TOL;
use dphase::modular::{check_modular_norm_relations, luxemburg_norm, modular_h, Modular, RELATION_TOL};
use dphase::sampling::{sine_bump, Sampler};
use dphase::solver::{certify_with_constants, embedding_constants, find_endpoint};
use dphase::suites::{directional_derivative_pairs, relative_error, FD_PAIRS, FD_TOL, ORACLE_TOL};
use dphase::Result;

const SEED: u64 = 2024;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn default_setup() -> Setup {
    RunConfig::default_config().build().expect("default config builds")
}

fn modular_suite(s: &Setup) -> Result<Outcome> {
    let start = Instant::now();
    let mut sampler = Sampler::new(&s.grid, SEED);
    let mut worst = f64::INFINITY;
    let mut failures = 0;
    for _ in 0..1000 {
        let u = sampler.next_function();
        let rep = check_modular_norm_relations(&u, &s.exponents)?;
        worst = worst.min(rep.min_slack());
        failures += usize::from(!rep.all_passed(RELATION_TOL));
    }
    let elapsed = start.elapsed();
    Ok(outcome(
        failures == 0 && elapsed <= Duration::from_secs(120),
        format!("1000 functions, {failures} failures, min slack {worst:.2e}, {:.1}s", elapsed.as_secs_f64()),
    ))
}

fn constant_oracle(s: &Setup) -> Result<Outcome> {
    let mut sampler = Sampler::new(&s.grid, SEED + 1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let u = sampler.next_function();
        for h in [2.0, 3.0] {
            let hv = vec![h; s.grid.len()];
            let norm = luxemburg_norm(&u, Modular::Plain(&hv))?;
            worst = worst.max(relative_error(norm, modular_h(&u, &hv).powf(1.0 / h)));
        }
    }
    Ok(outcome(worst <= ORACLE_TOL, format!("200 functions, max relative error {worst:.2e}")))
}

fn gradient_check(s: &Setup) -> Result<Outcome> {
    let g: &Arc<Grid> = &s.grid;
    let n = g.len();
    let configs: Vec<(&str, ExponentData, Nonlinearity)> = vec![
        ("mu=0", ExponentData::constant(g, 1.5, 1.8, 2.2, 0.0)?, Nonlinearity::PurePower),
        ("mu=1", ExponentData::constant(g, 1.5, 1.8, 2.2, 1.0)?, Nonlinearity::PurePower),
        (
            "variable p",
            ExponentData::new(g, g.sample(|x| 1.4 + 0.2 * x[0].sin()), vec![1.9; n], vec![2.3; n], vec![1.0; n])?,
            Nonlinearity::PurePower,
        ),
        (
            "variable p, q, mu",
            ExponentData::new(
                g,
                g.sample(|x| 1.5 + 0.1 * x[1]),
                g.sample(|x| 1.8 + 0.1 * x[0] * x[2]),
                g.sample(|x| 2.2 + 0.1 * x[2].abs()),
                g.sample(|x| 1.0 + 0.5 * x[0]),
            )?,
            Nonlinearity::PurePower,
        ),
        ("perturbed power", ExponentData::constant(g, 1.5, 1.8, 2.2, 1.0)?, Nonlinearity::PerturbedPower),
    ];
    let mut worst = 0.0f64;
    let mut checks = 0;
    for (i, (_, e, nl)) in configs.iter().enumerate() {
        let prm = ProblemParams::new(g, e, 3.0, 0.3, *nl);
        let model = EnergyModel::new(g, e, &prm);
        for truncated in [false, true] {
            for (fd, an) in directional_derivative_pairs(&model, FD_PAIRS, SEED + 10 + i as u64, truncated) {
                worst = worst.max(relative_error(fd, an));
                checks += 1;
            }
        }
    }
    let names: Vec<&str> = configs.iter().map(|c| c.0).collect();
    Ok(outcome(
        worst <= FD_TOL,
        format!("{checks} pairs over [{}], max relative error {worst:.2e}", names.join(", ")),
    ))
}

fn hardy_certification(s: &Setup) -> Result<Outcome> {
    let (cal, source) = resolve_calibration(s)?;
    let (sum, _) = hardy_sweep(s, &cal, source, 500, true)?;
    Ok(outcome(
        sum.passed() && sum.max_split_defect <= PASS_TOL,
        format!(
            "{} + {} adversarial, c_hat {:.4} ({}), upper/lower violations {}/{}, split defect {:.1e}",
            sum.samples,
            sum.adversarial,
            sum.c_hat,
            sum.calibration,
            sum.upper_violations,
            sum.lower_violations,
            sum.max_split_defect
        ),
    ))
}

fn geometry(s: &Setup) -> Result<Outcome> {
    let opts = &s.config.solver;
    let k = embedding_constants(&s.grid, &s.exponents, &s.params, opts, s.config.seed)?;
    let prm = s.params_for(0.5 * k.lambda_hat);
    let g = certify_with_constants(&s.grid, &s.exponents, &prm, opts, s.config.seed, k)?;
    let model = EnergyModel::new(&s.grid, &s.exponents, &prm);
    let ep = find_endpoint(&model, &sine_bump(&s.grid), g.gamma)?;
    let end = model.total(ep.u_hat.values(), false);
    Ok(outcome(
        g.eta > 0.0 && g.samples == 200 && g.min_sphere_energy >= g.eta && end < 0.0,
        format!(
            "gamma {:.4}, eta {:.3e}, min sphere energy {:.3e} over {} samples, I(u_hat) {:.3e}",
            g.gamma, g.eta, g.min_sphere_energy, g.samples, end
        ),
    ))
}

fn main() {
    let setup = default_setup();
    let mut results: Vec<(u32, &str, Result<Outcome>)> = vec![
        (1, "modular-norm relations", modular_suite(&setup)),
        (2, "constant-exponent oracle", constant_oracle(&setup)),
        (3, "gradient vs finite differences", gradient_check(&setup)),
        (4, "Hardy upper and lower bounds", hardy_certification(&setup)),
        (5, "mountain-pass geometry", geometry(&setup)),
    ];

    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let run = |i: usize| {
        let mut cfg = setup.config.clone();
        cfg.output_dir = dirs[i].path().to_path_buf();
        let s = cfg.build()?;
        let start = Instant::now();
        let summary = run_solve(&s)?;
        Ok::<_, dphase::Error>((summary, start.elapsed()))
    };
    let first = run(0);
    let (fixture, ps) = match &first {
        Ok((sum, t)) => {
            let pos = sum.positivity;
            let residual = sum.residual.unwrap_or(f64::INFINITY);
            let energy = sum.energy.map_or(f64::NAN, |e| e.total);
            let eta = sum.eta.unwrap_or(f64::NAN);
            let min = pos.map_or(f64::NAN, |p| p.min_node_value);
            let um = sum.u_minus_test.unwrap_or(f64::INFINITY);
            let fixture = outcome(
                sum.converged
                    && residual <= 1e-6
                    && energy >= eta
                    && eta > 0.0
                    && min >= -1e-10
                    && um <= 1e-6
                    && *t <= Duration::from_secs(600),
                format!(
                    "residual {residual:.2e}, energy {energy:.5} >= eta {eta:.2e}, min value {min:.2e}, u- test {um:.1e}, {:.1}s",
                    t.as_secs_f64()
                ),
            );
            let ps = match &sum.ps_monitor {
                Some(p) => outcome(
                    p.holds && p.max_norm.is_finite(),
                    format!("{} violations, max norm {:.4}, min slack {:.3e}", p.violations.len(), p.max_norm, p.min_slack),
                ),
                None => outcome(false, "no trace".into()),
            };
            (Ok(fixture), Ok(ps))
        }
        Err(e) => (Err(dphase::Error::InvalidArgument(e.to_string())), Err(dphase::Error::InvalidArgument(e.to_string()))),
    };
    results.push((6, "existence fixture", fixture));
    results.push((7, "Palais-Smale monitor", ps));

    let determinism = run(1).and_then(|_| {
        let read = |i: usize| std::fs::read(dirs[i].path().join("summary.json"));
        let (a, b) = (read(0)?, read(1)?);
        Ok(outcome(a == b && !a.is_empty(), format!("summary.json {} bytes, identical: {}", a.len(), a == b)))
    });
    results.push((8, "determinism", determinism));

    let mut all = true;
    for (n, name, r) in &results {
        let (ok, detail) = match r {
            Ok(o) => (o.passed, o.detail.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        all &= ok;
        println!("criterion {n} [{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    if !all {
        std::process::exit(1);
    }
}
