//! Run configuration in TOML.
//!
//! ```toml
//! seed = 42
//! output_dir = "out"
//!
//! [grid]
//! dim = 3
//! extents = [[-1.0, 1.0], [-1.0, 1.0], [-1.0, 1.0]]
//! nodes = 17
//!
//! [exponents]          # expressions in x1..xN, r = |x|
//! p = "1.5"
//! q = "1.8"
//! beta = "2.2"
//! mu = "1"
//!
//! [problem]
//! lambda_fraction = 0.5   # lambda = fraction * lambda_hat; or give `lambda` directly
//! alpha = 0.3
//! nonlinearity = "pure_power"   # or "perturbed_power"
//! # theta, c1, c2, k_ar, sing_floor are optional
//!
//! [solver]             # every key optional
//! tol_residual = 1e-6
//!
//! [hardy]              # every key optional
//! calibration_samples = 10000
//! calibration_seed = 20240607
//! # calibration = "path/to/calibration.toml"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::energy::{Nonlinearity, ProblemParams};
use crate::error::{Error, Result};
use crate::exponents::{validate_hypotheses, ExponentData};
use crate::expr::Expr;
use crate::grid::Grid;
use crate::solver::{EmbeddingConstants, SolverOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub extents: Vec<[f64; 2]>,
    pub nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentSpec {
    pub p: String,
    pub q: String,
    pub beta: String,
    pub mu: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_fraction: Option<f64>,
    pub alpha: f64,
    #[serde(default = "default_nonlinearity")]
    pub nonlinearity: Nonlinearity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_ar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sing_floor: Option<f64>,
}

fn default_nonlinearity() -> Nonlinearity {
    Nonlinearity::PurePower
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HardySpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<PathBuf>,
    pub calibration_samples: usize,
    pub calibration_seed: u64,
}

impl Default for HardySpec {
    fn default() -> Self {
        HardySpec {
            calibration: None,
            calibration_samples: 10_000,
            calibration_seed: 20_240_607,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub grid: GridSpec,
    pub exponents: ExponentSpec,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub hardy: HardySpec,
}

fn default_seed() -> u64 {
    42
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// The pinned default configuration.
pub const DEFAULT_CONFIG: &str = r#"seed = 42
output_dir = "out"

[grid]
dim = 3
extents = [[-1.0, 1.0], [-1.0, 1.0], [-1.0, 1.0]]
nodes = 17

[exponents]
p = "1.5"
q = "1.8"
beta = "2.2"
mu = "1"

[problem]
lambda_fraction = 0.5
alpha = 0.3
nonlinearity = "pure_power"
"#;

/// A validated configuration with its grid and sampled exponents.
#[derive(Clone, Debug)]
pub struct Setup {
    pub config: RunConfig,
    pub grid: Arc<Grid>,
    pub exponents: ExponentData,
    /// Problem parameters; `lambda` is 0 until resolved by [`Setup::params_for`].
    pub params: ProblemParams,
}

impl RunConfig {
    pub fn default_config() -> Self {
        Self::parse(DEFAULT_CONFIG, "<default>").expect("default config parses")
    }

    pub fn parse(src: &str, origin: &str) -> Result<Self> {
        toml::from_str(src).map_err(|e| Error::config(origin, e.to_string().trim_end()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::parse(&src, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form, hex encoded. `output_dir` is left out:
    /// where artifacts go does not change what they contain.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        hex_digest(c.to_toml().as_bytes())
    }

    /// Hash of the fields the Hardy ratio and its calibration sweep depend on.
    pub fn hardy_key(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            grid: &'a GridSpec,
            exponents: &'a ExponentSpec,
            alpha: f64,
            sing_floor: Option<f64>,
            samples: usize,
            seed: u64,
        }
        let key = Key {
            grid: &self.grid,
            exponents: &self.exponents,
            alpha: self.problem.alpha,
            sing_floor: self.problem.sing_floor,
            samples: self.hardy.calibration_samples,
            seed: self.hardy.calibration_seed,
        };
        hex_digest(toml::to_string(&key).expect("key serializes").as_bytes())
    }

    /// Builds the grid and exponent fields, then checks the structural hypotheses.
    pub fn build(&self) -> Result<Setup> {
        let g = &self.grid;
        if g.extents.len() != g.dim {
            return Err(Error::config(
                "grid.extents",
                format!("expected {} intervals, got {}", g.dim, g.extents.len()),
            ));
        }
        let extents: Vec<(f64, f64)> = g.extents.iter().map(|e| (e[0], e[1])).collect();
        let grid = Arc::new(
            Grid::new(g.dim, &extents, g.nodes).map_err(|e| Error::config("grid", e.to_string()))?,
        );
        let x = &self.exponents;
        let parse = |name: &str, src: &str| {
            Expr::parse(src, g.dim).map_err(|e| Error::config(format!("exponents.{name}"), e.to_string()))
        };
        let (p, q, beta, mu) = (parse("p", &x.p)?, parse("q", &x.q)?, parse("beta", &x.beta)?, parse("mu", &x.mu)?);
        let exponents = ExponentData::from_exprs(&grid, &p, &q, &beta, &mu)
            .map_err(|e| Error::config("exponents", e.to_string()))?;
        validate_hypotheses(&exponents, &grid).into_result()?;

        let pr = &self.problem;
        match (pr.lambda, pr.lambda_fraction) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::config(
                    "problem",
                    "set exactly one of `lambda` and `lambda_fraction`",
                ))
            }
            (Some(l), None) if !(l >= 0.0 && l.is_finite()) => {
                return Err(Error::config("problem.lambda", "must be finite and nonnegative"))
            }
            (None, Some(f)) if !(f >= 0.0 && f.is_finite()) => {
                return Err(Error::config("problem.lambda_fraction", "must be finite and nonnegative"))
            }
            _ => {}
        }
        let mut params = ProblemParams::new(&grid, &exponents, 0.0, pr.alpha, pr.nonlinearity);
        if let Some(v) = pr.c1 {
            params.c1 = v;
        }
        if let Some(v) = pr.c2 {
            params.c2 = v;
        }
        if let Some(v) = pr.k_ar {
            params.k_ar = v;
        }
        if let Some(v) = pr.sing_floor {
            params.sing_floor = v;
        }
        params.theta = pr.theta.unwrap_or_else(|| params.ar_exponent(&exponents));
        params
            .validate(&exponents)
            .map_err(|e| Error::config("problem", e.to_string()))?;
        self.solver
            .validate()
            .map_err(|e| Error::config("solver", e.to_string()))?;
        if self.hardy.calibration_samples == 0 {
            return Err(Error::config("hardy.calibration_samples", "must be positive"));
        }
        Ok(Setup {
            config: self.clone(),
            grid,
            exponents,
            params,
        })
    }
}

impl Setup {
    /// `lambda` from the config, resolving `lambda_fraction` against `lambda_hat`.
    pub fn lambda(&self, constants: &EmbeddingConstants) -> f64 {
        match (self.config.problem.lambda, self.config.problem.lambda_fraction) {
            (Some(l), _) => l,
            (None, Some(f)) => f * constants.lambda_hat,
            (None, None) => unreachable!("validated in build"),
        }
    }

    pub fn params_for(&self, lambda: f64) -> ProblemParams {
        let mut p = self.params.clone();
        p.lambda = lambda;
        p
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
