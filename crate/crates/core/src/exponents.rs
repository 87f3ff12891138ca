//! Variable exponents `p, q, beta`, the weight `mu`, and the structural hypotheses
//! they must satisfy before any energy is assembled.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::Grid;

/// Strict inequalities `a < b` are checked as `a < b - STRICT_MARGIN`.
pub const STRICT_MARGIN: f64 = 1e-9;

/// Sobolev critical exponent `N s / (N - s)`, or `+inf` when `s >= N`.
pub fn critical_exponent(s: f64, dim: usize) -> Result<f64> {
    if !(s > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "critical exponent needs s > 1, got {s}"
        )));
    }
    let n = dim as f64;
    Ok(if s < n { n * s / (n - s) } else { f64::INFINITY })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Bounds {
    pub p_minus: f64,
    pub p_plus: f64,
    pub q_minus: f64,
    pub q_plus: f64,
    pub beta_minus: f64,
    pub beta_plus: f64,
    pub mu_inf_norm: f64,
    /// `min_x p*(x)`.
    pub critical_min: f64,
}

/// Exponent and weight fields sampled at the nodes of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ExponentData {
    dim: usize,
    p: Vec<f64>,
    q: Vec<f64>,
    beta: Vec<f64>,
    mu: Vec<f64>,
    bounds: Bounds,
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    })
}

impl ExponentData {
    pub fn new(grid: &Grid, p: Vec<f64>, q: Vec<f64>, beta: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        for (name, field) in [("p", &p), ("q", &q), ("beta", &beta), ("mu", &mu)] {
            if field.len() != grid.len() {
                return Err(Error::Length {
                    expected: grid.len(),
                    got: field.len(),
                });
            }
            if let Some(node) = field.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} is not finite at node {node}"
                )));
            }
        }
        let dim = grid.dim();
        let (p_minus, p_plus) = min_max(&p);
        let (q_minus, q_plus) = min_max(&q);
        let (beta_minus, beta_plus) = min_max(&beta);
        let (_, mu_inf_norm) = min_max(&mu);
        let critical_min = p
            .iter()
            .map(|&s| if s > 1.0 { critical_exponent(s, dim).unwrap() } else { s })
            .fold(f64::INFINITY, f64::min);
        Ok(ExponentData {
            dim,
            p,
            q,
            beta,
            mu,
            bounds: Bounds {
                p_minus,
                p_plus,
                q_minus,
                q_plus,
                beta_minus,
                beta_plus,
                mu_inf_norm,
                critical_min,
            },
        })
    }

    pub fn constant(grid: &Grid, p: f64, q: f64, beta: f64, mu: f64) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![p; n], vec![q; n], vec![beta; n], vec![mu; n])
    }

    /// Samples the four expressions at the grid nodes.
    pub fn from_exprs(grid: &Grid, p: &Expr, q: &Expr, beta: &Expr, mu: &Expr) -> Result<Self> {
        Self::new(
            grid,
            grid.sample(|x| p.eval(x)),
            grid.sample(|x| q.eval(x)),
            grid.sample(|x| beta.eval(x)),
            grid.sample(|x| mu.eval(x)),
        )
    }

    /// Same data with `mu` replaced.
    pub fn with_mu(&self, mu: Vec<f64>) -> Result<Self> {
        let mut out = self.clone();
        let (_, hi) = min_max(&mu);
        out.mu = mu;
        out.bounds.mu_inf_norm = hi;
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub node: usize,
    pub coords: Vec<f64>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub passed: bool,
    pub violation: Option<Violation>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<HypothesisCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn first_failure(&self) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| !c.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `Ok(())` if every hypothesis holds, otherwise the first failure as an error.
    pub fn into_result(self) -> Result<()> {
        match self.first_failure() {
            None => Ok(()),
            Some(c) => {
                let detail = c
                    .violation
                    .as_ref()
                    .map(|v| format!(" at node {} {:?}: {}", v.node, v.coords, v.detail))
                    .unwrap_or_default();
                Err(Error::Hypothesis(format!("{}{}", c.name, detail)))
            }
        }
    }
}

fn lt(a: f64, b: f64) -> bool {
    a < b - STRICT_MARGIN
}

fn scan<F: Fn(usize) -> Option<String>>(
    name: &'static str,
    grid: &Grid,
    n: usize,
    test: F,
) -> HypothesisCheck {
    let violation = (0..n).find_map(|node| {
        test(node).map(|detail| Violation {
            node,
            coords: grid.coords(node),
            detail,
        })
    });
    HypothesisCheck {
        name,
        passed: violation.is_none(),
        violation,
    }
}

/// Nodal scan of the growth hypotheses `H1`, `H2` and `beta0`.
pub fn validate_hypotheses(e: &ExponentData, grid: &Grid) -> ValidationReport {
    let dim = e.dim as f64;
    let n = e.len();
    let h1 = scan("H1", grid, n, |k| {
        let (p, q) = (e.p[k], e.q[k]);
        if !lt(1.0, p) || !lt(1.0, q) {
            return Some(format!("need 1 < p, q; p = {p}, q = {q}"));
        }
        if !lt(p, dim) || !lt(q, dim) {
            return Some(format!("need p, q < N = {dim}; p = {p}, q = {q}"));
        }
        if !lt(p, q) {
            return Some(format!("need p < q; p = {p}, q = {q}"));
        }
        let crit = critical_exponent(p, e.dim).unwrap();
        if !lt(q, crit) {
            return Some(format!("need q < p* = {crit}; q = {q}"));
        }
        None
    });
    let h2 = scan("H2", grid, n, |k| {
        (e.mu[k] < 0.0).then(|| format!("need mu >= 0; mu = {}", e.mu[k]))
    });
    let b = e.bounds;
    let beta0 = scan("beta0", grid, n, |k| {
        let beta = e.beta[k];
        if !lt(b.q_plus, beta) {
            return Some(format!("need beta > q+ = {}; beta = {beta}", b.q_plus));
        }
        if e.p[k] > 1.0 {
            let crit = critical_exponent(e.p[k], e.dim).unwrap();
            if !lt(b.beta_plus, crit) {
                return Some(format!("need beta+ = {} < p* = {crit}", b.beta_plus));
            }
        }
        None
    });
    ValidationReport {
        checks: vec![h1, h2, beta0],
    }
}
