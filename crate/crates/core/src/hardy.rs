//! Fractional-Hardy inequalities for the singular modular.
//!
//! Upper bound:
//!
//! ```text
//! int (|u|^p / (p |x|^{alpha p}) + mu |u|^q / (q |x|^{alpha q})) <= C_N ||u||_{1,H,0}^kappa
//! C_N = (1 + ||mu||_inf) / p- * max{ c (q+ / (N - alpha q+))^{q+}, c (p- / (N - alpha p-))^{p-} }
//! ```
//!
//! with `kappa = p-` if `||u||_{1,H,0} < 1` and `q+` otherwise. The embedding factor
//! `c` has no closed form; it is calibrated once per configuration (see
//! [`Calibration`]).
//!
//! Lower bound, with `M = max |x|` over the nodes and `tau = p-` if `M < 1`, else `q+`:
//!
//! ```text
//! int (|u|^p / |x|^{alpha p} + mu |u|^q / |x|^{alpha q}) > M^{-alpha tau} ||u||_H^kappa
//! ```
//!
//! with `kappa = q+` if `||u||_H < 1` and `p-` otherwise.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::energy::{EnergyModel, Nonlinearity, ProblemParams};
use crate::error::{Error, Result};
use crate::exponents::ExponentData;
use crate::grid::{Grid, GridFunction};
use crate::modular::{kahan_sum, luxemburg_norm, Modular};
use crate::sampling::{concentration, Sampler};

/// `|alpha s - 1| <= EXCLUSION_TOL` is treated as the excluded case `alpha s = 1`.
pub const EXCLUSION_TOL: f64 = 1e-9;
/// Relative tolerance of the pass tests.
pub const PASS_TOL: f64 = 1e-12;
/// Safety factor applied to the largest ratio seen during calibration.
pub const CALIBRATION_MARGIN: f64 = 1.1;
pub const CALIBRATION_VERSION: u32 = 1;

/// Calibration shipped for the default configuration.
pub const DEFAULT_CALIBRATION: &str = include_str!("../calibration/hardy_default.toml");

/// `(1 + ||mu||_inf) / p- * max{(q+/(N - alpha q+))^{q+}, (p-/(N - alpha p-))^{p-}}`,
/// the Hardy constant with unit embedding factor.
pub fn hardy_base_constant(e: &ExponentData, alpha: f64, dim: usize) -> Result<f64> {
    let b = e.bounds();
    let n = dim as f64;
    for (name, s) in [("p-", b.p_minus), ("q+", b.q_plus)] {
        if (alpha * s - 1.0).abs() <= EXCLUSION_TOL {
            return Err(Error::ExcludedCase(format!("alpha {name} = 1 (alpha = {alpha}, {name} = {s})")));
        }
    }
    if n <= alpha * b.q_plus {
        return Err(Error::ExcludedCase(format!(
            "need alpha q+ < N; alpha q+ = {}, N = {dim}",
            alpha * b.q_plus
        )));
    }
    let factor = |s| embedding_factor(s, alpha, dim);
    Ok((1.0 + b.mu_inf_norm) / b.p_minus * factor(b.q_plus).max(factor(b.p_minus)))
}

/// `(s / (N - alpha s))^s`, without the exclusion checks.
pub fn embedding_factor(s: f64, alpha: f64, dim: usize) -> f64 {
    (s / (dim as f64 - alpha * s)).powf(s)
}

/// Hardy constant `C_N(p-, q+, alpha)` with embedding factor `c_hat`.
pub fn hardy_constant(e: &ExponentData, alpha: f64, dim: usize, c_hat: f64) -> Result<f64> {
    Ok(c_hat * hardy_base_constant(e, alpha, dim)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HardyReport {
    pub lhs: f64,
    pub rhs: f64,
    pub constant: f64,
    pub kappa: f64,
    /// `||u||_{1,H,0}`.
    pub norm: f64,
    pub upper_passed: bool,
    pub lower_lhs: f64,
    pub lower_rhs: f64,
    /// `kappa` of the lower bound.
    pub lower_kappa: f64,
    pub lower_passed: bool,
    /// Contributions to `lhs` from `|x| < 1` and `|x| >= 1`.
    pub lhs_inner: f64,
    pub lhs_outer: f64,
    /// Quadrature measures of `|x| < 1` and `|x| >= 1`.
    pub measure_inner: f64,
    pub measure_outer: f64,
}

impl HardyReport {
    pub fn passed(&self) -> bool {
        self.upper_passed && self.lower_passed
    }

    /// `rhs / lhs - 1` for the upper bound, `+inf` when `lhs = 0`.
    pub fn upper_slack(&self) -> f64 {
        if self.lhs == 0.0 {
            f64::INFINITY
        } else {
            self.rhs / self.lhs - 1.0
        }
    }

    /// `lower_lhs / lower_rhs - 1`, `+inf` when `lower_rhs = 0`.
    pub fn lower_slack(&self) -> f64 {
        if self.lower_rhs == 0.0 {
            f64::INFINITY
        } else {
            self.lower_lhs / self.lower_rhs - 1.0
        }
    }

    /// Split-consistency defect `|lhs_inner + lhs_outer - lhs| / max(1, lhs)`.
    pub fn split_defect(&self) -> f64 {
        (self.lhs_inner + self.lhs_outer - self.lhs).abs() / self.lhs.max(1.0)
    }
}

/// Hardy checks for one grid, exponent set and `alpha`.
pub struct HardyChecker {
    model: EnergyModel,
    base: f64,
    c_hat: f64,
    /// `M` and `tau`.
    radius_max: f64,
    tau: f64,
    inner: Vec<bool>,
}

impl HardyChecker {
    pub fn new(grid: &Arc<Grid>, e: &ExponentData, alpha: f64, sing_floor: f64, c_hat: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let base = hardy_base_constant(e, alpha, grid.dim())?;
        let mut prm = ProblemParams::new(grid, e, 0.0, alpha, Nonlinearity::PurePower);
        prm.sing_floor = sing_floor;
        let radius_max = (0..grid.len())
            .filter(|&k| grid.weights()[k] > 0.0)
            .map(|k| grid.radius(k))
            .fold(0.0, f64::max);
        let b = e.bounds();
        let tau = if radius_max < 1.0 { b.p_minus } else { b.q_plus };
        let inner = (0..grid.len()).map(|k| grid.radius(k) < 1.0).collect();
        Ok(HardyChecker {
            model: EnergyModel::new(grid, e, &prm),
            base,
            c_hat,
            radius_max,
            tau,
            inner,
        })
    }

    pub fn constant(&self) -> f64 {
        self.c_hat * self.base
    }

    pub fn base_constant(&self) -> f64 {
        self.base
    }

    pub fn radius_max(&self) -> f64 {
        self.radius_max
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    fn norm_and_kappa(&self, u: &GridFunction) -> Result<(f64, f64)> {
        let b = self.model.exponents().bounds();
        let norm = luxemburg_norm(u, Modular::Gradient(self.model.exponents()))?;
        Ok((norm, if norm < 1.0 { b.p_minus } else { b.q_plus }))
    }

    /// `lhs / (base * ||u||^kappa)`, the quantity the embedding factor must dominate.
    pub fn ratio(&self, u: &GridFunction) -> Result<Option<f64>> {
        let (norm, kappa) = self.norm_and_kappa(u)?;
        if norm == 0.0 {
            return Ok(None);
        }
        let lhs = self.model.singular_part(u.values());
        Ok(Some(lhs / (self.base * norm.powf(kappa))))
    }

    pub fn report(&self, u: &GridFunction) -> Result<HardyReport> {
        let e = self.model.exponents();
        let b = e.bounds();
        let v = u.values();
        let (norm, kappa) = self.norm_and_kappa(u)?;
        let lhs = self.model.singular_part(v);
        let constant = self.constant();
        let rhs = constant * norm.powf(kappa);
        let lhs_inner = self.model.singular_sum(v, |k| self.inner[k]);
        let lhs_outer = self.model.singular_sum(v, |k| !self.inner[k]);
        let w = u.grid().weights();
        let measure_inner = kahan_sum((0..v.len()).filter(|&k| self.inner[k]).map(|k| w[k]));
        let measure_outer = kahan_sum((0..v.len()).filter(|&k| !self.inner[k]).map(|k| w[k]));

        let lower_lhs = self.model.singular_modular(v);
        let h_norm = luxemburg_norm(u, Modular::Musielak(e))?;
        let lower_kappa = if h_norm < 1.0 { b.q_plus } else { b.p_minus };
        let lower_rhs = if h_norm == 0.0 {
            0.0
        } else {
            self.radius_max.powf(-self.model.params().alpha * self.tau) * h_norm.powf(lower_kappa)
        };
        let lower_passed = u.is_zero() || lower_lhs > lower_rhs - PASS_TOL * lower_rhs.max(1.0);
        Ok(HardyReport {
            lhs,
            rhs,
            constant,
            kappa,
            norm,
            upper_passed: lhs <= rhs * (1.0 + PASS_TOL),
            lower_lhs,
            lower_rhs,
            lower_kappa,
            lower_passed,
            lhs_inner,
            lhs_outer,
            measure_inner,
            measure_outer,
        })
    }
}

/// Upper-bound report with the default singularity floor `h_min / 2`.
pub fn check_hardy_upper(u: &GridFunction, e: &ExponentData, alpha: f64, c_hat: f64) -> Result<HardyReport> {
    let grid = u.grid();
    HardyChecker::new(grid, e, alpha, 0.5 * grid.min_spacing(), c_hat)?.report(u)
}

/// `(lower_lhs, lower_rhs, passed)` with the default singularity floor.
pub fn check_hardy_lower(u: &GridFunction, e: &ExponentData, alpha: f64) -> Result<(f64, f64, bool)> {
    let r = check_hardy_upper(u, e, alpha, 1.0)?;
    Ok((r.lower_lhs, r.lower_rhs, r.lower_passed))
}

/// Adversarial concentration functions: bumps of width `L 2^{-k}` at the node
/// nearest the origin, `k = 1..=8`, at several amplitudes and rescaled to unit norm.
pub fn adversarial_family(grid: &Arc<Grid>, e: &ExponentData) -> Result<Vec<GridFunction>> {
    let mut out = Vec::new();
    for k in 1..=8 {
        let u = concentration(grid, k);
        for amp in [1e-2, 1e-1, 1.0, 1e1, 1e2] {
            out.push(u.scaled(amp));
        }
        let n = luxemburg_norm(&u, Modular::Gradient(e))?;
        if n > 0.0 {
            out.push(u.scaled(1.0 / n));
        }
    }
    Ok(out)
}

/// Persisted embedding factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub version: u32,
    /// Hash of the configuration fields the ratio depends on.
    pub key: String,
    pub seed: u64,
    pub samples: usize,
    pub max_ratio: f64,
    pub c_hat: f64,
}

impl Calibration {
    pub fn from_toml_str(s: &str, origin: &str) -> Result<Self> {
        let c: Calibration = toml::from_str(s).map_err(|e| Error::config(origin, e.to_string()))?;
        if c.version != CALIBRATION_VERSION {
            return Err(Error::config(
                origin,
                format!("calibration version {} (expected {CALIBRATION_VERSION})", c.version),
            ));
        }
        if !(c.c_hat > 0.0 && c.c_hat.is_finite()) {
            return Err(Error::config(origin, "c_hat must be positive"));
        }
        Ok(c)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("calibration serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_toml_str(&s, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    pub fn shipped_default() -> Self {
        Self::from_toml_str(DEFAULT_CALIBRATION, "hardy_default.toml").expect("shipped calibration parses")
    }
}

/// Sweeps `samples` seeded functions, each at its drawn amplitude and rescaled to
/// unit norm, and sets `c_hat = CALIBRATION_MARGIN * max ratio`.
pub fn calibrate(
    grid: &Arc<Grid>,
    e: &ExponentData,
    alpha: f64,
    sing_floor: f64,
    samples: usize,
    seed: u64,
    key: &str,
) -> Result<Calibration> {
    let checker = HardyChecker::new(grid, e, alpha, sing_floor, 1.0)?;
    let mut sampler = Sampler::new(grid, seed);
    let mut max_ratio = 0.0f64;
    for _ in 0..samples {
        let u = sampler.next_function();
        let norm = luxemburg_norm(&u, Modular::Gradient(e))?;
        if norm == 0.0 {
            continue;
        }
        for v in [u.clone(), u.scaled(1.0 / norm)] {
            if let Some(r) = checker.ratio(&v)? {
                max_ratio = max_ratio.max(r);
            }
        }
    }
    Ok(Calibration {
        version: CALIBRATION_VERSION,
        key: key.to_string(),
        seed,
        samples,
        max_ratio,
        c_hat: CALIBRATION_MARGIN * max_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(n: usize) -> Arc<Grid> {
        Arc::new(Grid::new(3, &[(-1.0, 1.0); 3], n).unwrap())
    }

    #[test]
    fn constant_formula_examples() {
        let g = cube(5);
        let s = 1.7;
        let e = ExponentData::constant(&g, s, s, 2.5, 0.0).unwrap();
        let c = hardy_constant(&e, 0.4, 3, 1.0).unwrap();
        let expected = (1.0 / s) * (s / (3.0 - 0.4 * s)).powf(s);
        assert!((c - expected).abs() < 1e-14);

        // q+ = 2, alpha = 0.5, N = 3 gives (2 / 2)^2 = 1, although alpha q+ = 1 is
        // itself excluded from the constant
        assert_eq!(embedding_factor(2.0, 0.5, 3), 1.0);
        let e = ExponentData::constant(&g, 1.9, 2.0, 2.5, 0.0).unwrap();
        assert!(hardy_constant(&e, 0.5, 3, 1.0).is_err());
        let c = hardy_constant(&e, 0.45, 3, 1.0).unwrap();
        let expected = embedding_factor(2.0, 0.45, 3).max(embedding_factor(1.9, 0.45, 3)) / 1.9;
        assert!((c - expected).abs() < 1e-14);
    }

    #[test]
    fn excluded_alphas() {
        let g = cube(5);
        let e = ExponentData::constant(&g, 1.5, 2.0, 2.5, 1.0).unwrap();
        assert!(matches!(hardy_constant(&e, 0.5, 3, 1.0), Err(Error::ExcludedCase(_))));
        assert!(matches!(hardy_constant(&e, 1.0 / 1.5, 3, 1.0), Err(Error::ExcludedCase(_))));
        assert!(hardy_constant(&e, 0.5 + 1e-6, 3, 1.0).is_ok());
        let e2 = ExponentData::constant(&g, 1.5, 1.9, 2.5, 1.0).unwrap();
        assert!(matches!(hardy_constant(&e2, 0.99, 1, 1.0), Err(Error::ExcludedCase(_))));
    }

    #[test]
    fn zero_function_passes_vacuously() {
        let g = cube(7);
        let e = ExponentData::constant(&g, 1.5, 1.8, 2.2, 1.0).unwrap();
        let r = check_hardy_upper(&GridFunction::zeros(&g), &e, 0.3, 1.0).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        assert!(r.passed());
        let (l, rr, ok) = check_hardy_lower(&GridFunction::zeros(&g), &e, 0.3).unwrap();
        assert_eq!((l, rr), (0.0, 0.0));
        assert!(ok);
    }

    #[test]
    fn split_and_branch_selection() {
        let g = cube(9);
        let e = ExponentData::constant(&g, 1.5, 1.8, 2.2, 1.0).unwrap();
        let checker = HardyChecker::new(&g, &e, 0.3, 0.5 * g.min_spacing(), 1.0).unwrap();
        assert!(checker.radius_max() > 1.0);
        assert_eq!(checker.tau(), 1.8);
        let u = crate::sampling::sine_bump(&g).scaled(3.0);
        let r = checker.report(&u).unwrap();
        assert!(r.split_defect() <= 1e-12);
        assert!((r.measure_inner + r.measure_outer - 8.0).abs() < 1e-12);
        assert!(r.lower_passed);

        let small = Arc::new(Grid::new(3, &[(-0.5, 0.5); 3], 9).unwrap());
        let e = ExponentData::constant(&small, 1.5, 1.8, 2.2, 1.0).unwrap();
        let checker = HardyChecker::new(&small, &e, 0.3, 0.5 * small.min_spacing(), 1.0).unwrap();
        assert!(checker.radius_max() < 1.0);
        assert_eq!(checker.tau(), 1.5);
        assert_eq!(checker.report(&GridFunction::zeros(&small)).unwrap().measure_outer, 0.0);
    }

    #[test]
    fn calibration_round_trip_and_coverage() {
        let g = cube(7);
        let e = ExponentData::constant(&g, 1.5, 1.8, 2.2, 1.0).unwrap();
        let cal = calibrate(&g, &e, 0.3, 0.5 * g.min_spacing(), 200, 11, "test").unwrap();
        assert!((cal.c_hat - 1.1 * cal.max_ratio).abs() < 1e-15);
        let back = Calibration::from_toml_str(&cal.to_toml_string(), "mem").unwrap();
        assert_eq!(back, cal);
        let checker = HardyChecker::new(&g, &e, 0.3, 0.5 * g.min_spacing(), cal.c_hat).unwrap();
        let mut s = Sampler::new(&g, 11);
        for _ in 0..200 {
            assert!(checker.report(&s.next_function()).unwrap().upper_passed);
        }
        assert!(Calibration::from_toml_str("version = 2", "mem").is_err());
    }
}
