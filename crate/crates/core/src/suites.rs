//! Seeded property suites behind `dphase verify`.
//!
//! Each suite reports the smallest slack seen over its samples. A suite passes
//! when that slack is at least `-tol`.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::energy::{chipot_constant, young_split_constant, EnergyModel, ProblemParams};
use crate::error::Result;
use crate::exponents::ExponentData;
use crate::grid::{Grid, GridFunction};
use crate::modular::{
    check_modular_norm_relations, holder_pairing, luxemburg_norm, modular_h, Modular, RELATION_NAMES,
    RELATION_TOL,
};
use crate::sampling::Sampler;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteRow {
    pub name: String,
    pub passed: bool,
    /// Smallest slack over all applicable samples; `inf` when nothing applied.
    pub slack: f64,
    pub tol: f64,
    pub checks: usize,
}

struct Tally {
    rows: BTreeMap<&'static str, (f64, f64, usize)>,
    order: Vec<&'static str>,
}

impl Tally {
    fn new() -> Self {
        Tally {
            rows: BTreeMap::new(),
            order: Vec::new(),
        }
    }

    fn record(&mut self, name: &'static str, tol: f64, slack: f64) {
        let row = self.rows.entry(name).or_insert_with(|| {
            self.order.push(name);
            (f64::INFINITY, tol, 0)
        });
        // NaN slack counts as a failure
        row.0 = if slack.is_nan() { f64::NEG_INFINITY } else { row.0.min(slack) };
        row.2 += 1;
    }

    fn finish(self) -> Vec<SuiteRow> {
        self.order
            .iter()
            .map(|name| {
                let (slack, tol, checks) = self.rows[name];
                SuiteRow {
                    name: name.to_string(),
                    passed: slack >= -tol,
                    slack,
                    tol,
                    checks,
                }
            })
            .collect()
    }
}

/// Seed offsets of the suites, so adding a suite leaves the others unchanged.
const MODULAR_STREAM: u64 = 0x11;
const ORACLE_STREAM: u64 = 0x12;
const ENERGY_STREAM: u64 = 0x13;
const SCALAR_STREAM: u64 = 0x14;

pub const ORACLE_TOL: f64 = 1e-8;
pub const FD_TOL: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;
pub const CONVEXITY_TOL: f64 = 1e-10;
/// Difference-quotient pairs per energy variant.
pub const FD_PAIRS: usize = 20;

fn peak(u: &GridFunction) -> f64 {
    u.values().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn rel(lhs: f64, rhs: f64) -> f64 {
    (rhs - lhs) / rhs.abs().max(lhs.abs()).max(1e-300)
}

/// Relative mismatch `|a - b| / max(|a|, |b|)`, 0 when both vanish.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// Modular/norm relations plus the constant-exponent oracle and Hölder pairing.
pub fn modular_suites(grid: &Arc<Grid>, e: &ExponentData, samples: usize, seed: u64) -> Result<Vec<SuiteRow>> {
    let mut t = Tally::new();
    let mut sampler = Sampler::new(grid, seed ^ MODULAR_STREAM);
    for name in RELATION_NAMES {
        t.rows.insert(name, (f64::INFINITY, RELATION_TOL, 0));
        t.order.push(name);
    }
    for _ in 0..samples {
        let u = sampler.next_function();
        for r in check_modular_norm_relations(&u, e)?.relations {
            if r.applicable {
                t.record(r.name, RELATION_TOL, r.slack);
            }
        }
    }
    let mut sampler = Sampler::new(grid, seed ^ ORACLE_STREAM);
    for _ in 0..samples {
        let u = sampler.next_function();
        let v = sampler.next_function();
        for (name, h) in [("oracle.constant_h2", 2.0), ("oracle.constant_h3", 3.0)] {
            let hv = vec![h; grid.len()];
            let norm = luxemburg_norm(&u, Modular::Plain(&hv))?;
            let direct = modular_h(&u, &hv).powf(1.0 / h);
            t.record(name, ORACLE_TOL, -relative_error(norm, direct));
        }
        let (lhs, rhs) = holder_pairing(&u, &v, e.p())?;
        t.record("holder.pairing", RELATION_TOL, rel(lhs, rhs));
    }
    Ok(t.finish())
}

/// Difference-quotient, convexity, monotonicity and nonlinearity checks.
pub fn energy_suites(
    grid: &Arc<Grid>,
    e: &ExponentData,
    prm: &ProblemParams,
    samples: usize,
    seed: u64,
) -> Result<Vec<SuiteRow>> {
    let mut t = Tally::new();
    let model = EnergyModel::new(grid, e, prm);
    let mut sampler = Sampler::new(grid, seed ^ ENERGY_STREAM);
    for truncated in [false, true] {
        let name = if truncated { "energy.fd_truncated" } else { "energy.fd" };
        for _ in 0..samples.min(FD_PAIRS) {
            let (fd, an) = fd_pair(&model, &mut sampler, truncated);
            t.record(name, FD_TOL, -relative_error(fd, an));
        }
    }
    let convex = |v: &[f64]| model.gradient_part(v) + model.singular_part(v);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SCALAR_STREAM);
    for _ in 0..samples {
        let u = sampler.next_function();
        let v = sampler.next_function();
        let s: f64 = rng.random_range(0.0..1.0);
        let mix = u.scaled(s).axpy(1.0 - s, &v);
        let lhs = convex(mix.values());
        let rhs = s * convex(u.values()) + (1.0 - s) * convex(v.values());
        t.record("energy.convexity", CONVEXITY_TOL, (rhs - lhs) / rhs.max(1.0));

        // <A(u) - A(v), u - v> with A the derivative of the convex part
        let mut zero = prm.clone();
        zero.lambda = 0.0;
        let a = EnergyModel::new(grid, e, &zero);
        let du = a.derivative(u.values(), false);
        let dv = a.derivative(v.values(), false);
        let pair: f64 = du
            .iter()
            .zip(&dv)
            .zip(u.values().iter().zip(v.values()))
            .map(|((x, y), (p, q))| (x - y) * (p - q))
            .sum();
        let scale = du.iter().zip(&dv).map(|(x, y)| x.abs() + y.abs()).sum::<f64>()
            * peak(&u).max(peak(&v));
        t.record("energy.monotone", CONVEXITY_TOL, pair / scale.max(1e-300));
    }
    scalar_suites(&mut t, &mut rng, e, prm, samples);
    Ok(t.finish())
}

fn fd_pair(model: &EnergyModel, sampler: &mut Sampler, truncated: bool) -> (f64, f64) {
    let u = sampler.next_smooth();
    let phi = sampler.next_smooth();
    let phi = phi.scaled(peak(&u) / peak(&phi));
    let an = model.riesz_gradient(u.values(), truncated).dot(&phi);
    let plus = model.total(u.axpy(FD_STEP, &phi).values(), truncated);
    let minus = model.total(u.axpy(-FD_STEP, &phi).values(), truncated);
    ((plus - minus) / (2.0 * FD_STEP), an)
}

/// `(finite difference, analytic)` directional derivatives for `pairs` seeded pairs.
pub fn directional_derivative_pairs(
    model: &EnergyModel,
    pairs: usize,
    seed: u64,
    truncated: bool,
) -> Vec<(f64, f64)> {
    let mut sampler = Sampler::new(model.grid(), seed);
    (0..pairs).map(|_| fd_pair(model, &mut sampler, truncated)).collect()
}

/// Pointwise checks at random `(x, t)`: AR, the epsilon-split bound, Chipot.
fn scalar_suites(t: &mut Tally, rng: &mut ChaCha8Rng, e: &ExponentData, prm: &ProblemParams, samples: usize) {
    let eps = 0.1;
    let c_eps = young_split_constant(e, prm, eps);
    let b = e.bounds();
    let chipot: Vec<(f64, f64)> = [b.p_minus, b.q_plus]
        .into_iter()
        .map(|s| (s, chipot_constant(s)))
        .collect();
    let n = e.len();
    for _ in 0..samples.max(1) * 4 {
        let k = rng.random_range(0..n);
        let beta = e.beta()[k];
        let mag = rng.random_range(-6.0f64..6.0).exp2();
        let tv = if rng.random_bool(0.5) { mag } else { -mag };
        if tv.abs() >= prm.k_ar {
            let lhs = prm.theta * prm.big_f(e, beta, tv);
            let rhs = prm.f(e, beta, tv) * tv;
            t.record("nonlinearity.ar", RELATION_TOL, rel(lhs, rhs));
        }
        let lhs = prm.big_f(e, beta, tv);
        let rhs = eps * tv.abs().powf(b.q_plus) + c_eps * tv.abs().powf(beta);
        t.record("nonlinearity.epsilon_split", RELATION_TOL, rel(lhs, rhs));

        let xi = rng.random_range(-4.0..4.0);
        let psi = rng.random_range(-4.0..4.0);
        for &(s, c) in &chipot {
            let phi = |v: f64| if v == 0.0 { 0.0 } else { v.signum() * v.abs().powf(s - 1.0) };
            let lhs = (phi(xi) - phi(psi)).abs();
            let rhs = c * (xi - psi).abs() * (xi.abs() + psi.abs()).powf(s - 2.0);
            if rhs > 0.0 {
                t.record("scalar.chipot", RELATION_TOL, rel(lhs, rhs));
            }
        }
    }
}

/// Every suite at once, in a fixed order.
pub fn run_all(grid: &Arc<Grid>, e: &ExponentData, prm: &ProblemParams, samples: usize, seed: u64) -> Result<Vec<SuiteRow>> {
    let mut rows = modular_suites(grid, e, samples, seed)?;
    rows.extend(energy_suites(grid, e, prm, samples, seed)?);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::Nonlinearity;

    #[test]
    fn suites_pass_on_small_grid() {
        let g = Arc::new(Grid::new(3, &[(-1.0, 1.0); 3], 7).unwrap());
        let e = ExponentData::constant(&g, 1.5, 1.8, 2.2, 1.0).unwrap();
        let prm = ProblemParams::new(&g, &e, 1.0, 0.3, Nonlinearity::PurePower);
        let rows = run_all(&g, &e, &prm, 12, 5).unwrap();
        for r in &rows {
            assert!(r.passed, "{r:?}");
        }
        assert!(rows.iter().any(|r| r.name == "scalar.chipot" && r.checks > 0));
    }
}
