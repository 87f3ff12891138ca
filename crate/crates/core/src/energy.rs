//! Energy functional `I(u) = rho_H(grad u) + G(u) - lambda int F(x, u)`, its
//! truncated variant `I_+`, and the discrete weak-form gradient.
//!
//! The gradient terms are assembled cellwise with the forward stencil: cell `k`
//! carries `cw_k (|D u_k|^{p_k} / p_k + mu_k |D u_k|^{q_k} / q_k)` where `D u_k` is
//! the forward difference at node `k` and `cw_k` the cell weight. The lower-order
//! terms use the nodal weights. The singular weights use `r = max(|x|, sing_floor)`.
//!
//! Derivatives are returned as Riesz vectors `g` with `sum_k w_k g_k phi_k =
//! <I'(u), phi>` for every `phi` vanishing on the boundary, and `g = 0` on boundary
//! nodes.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::ExponentData;
use crate::grid::{Grid, GridFunction, Stencil};
use crate::modular::{kahan_sum, luxemburg_norm, Modular};
use crate::sampling::Sampler;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    /// `f = c2 |t|^{beta - 2} t`.
    PurePower,
    /// `f = c2 |t|^{beta - 2} t + c1 |t|^{sigma - 2} t` with `sigma = (q+ + beta-) / 2`.
    PerturbedPower,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub lambda: f64,
    pub alpha: f64,
    /// Exponent of the Ambrosetti-Rabinowitz condition.
    pub theta: f64,
    pub nonlinearity: Nonlinearity,
    /// Coefficient of the lower-order power in `PerturbedPower`.
    pub c1: f64,
    /// Coefficient of the leading power.
    pub c2: f64,
    /// Threshold above which the AR inequality is required.
    pub k_ar: f64,
    pub sing_floor: f64,
}

impl ProblemParams {
    /// Parameters with `theta` set to the largest exponent for which AR holds,
    /// `c1 = 1`, `c2 = 1`, `k_ar = 1` and `sing_floor = h_min / 2`.
    pub fn new(grid: &Grid, e: &ExponentData, lambda: f64, alpha: f64, nonlinearity: Nonlinearity) -> Self {
        let mut prm = ProblemParams {
            lambda,
            alpha,
            theta: 0.0,
            nonlinearity,
            c1: 1.0,
            c2: 1.0,
            k_ar: 1.0,
            sing_floor: 0.5 * grid.min_spacing(),
        };
        prm.theta = prm.ar_exponent(e);
        prm
    }

    /// Exponent of the lower-order power of `PerturbedPower`.
    pub fn sigma(&self, e: &ExponentData) -> f64 {
        let b = e.bounds();
        0.5 * (b.q_plus + b.beta_minus)
    }

    /// Largest `theta` with `theta F(x, t) <= f(x, t) t` for all `t`.
    pub fn ar_exponent(&self, e: &ExponentData) -> f64 {
        match self.nonlinearity {
            Nonlinearity::PurePower => e.bounds().beta_minus,
            Nonlinearity::PerturbedPower if self.c1 > 0.0 => self.sigma(e),
            Nonlinearity::PerturbedPower => e.bounds().beta_minus,
        }
    }

    pub fn validate(&self, e: &ExponentData) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if !(self.sing_floor > 0.0) {
            return bad(format!("sing_floor must be positive, got {}", self.sing_floor));
        }
        if !(self.c1 >= 0.0 && self.c2 > 0.0 && self.k_ar > 0.0) {
            return bad("c1 >= 0, c2 > 0 and k_ar > 0 are required".into());
        }
        let q_plus = e.bounds().q_plus;
        if !(self.theta > q_plus) {
            return bad(format!("theta = {} must exceed q+ = {q_plus}", self.theta));
        }
        if self.theta > self.ar_exponent(e) + 1e-12 {
            return bad(format!(
                "theta = {} exceeds the AR exponent {} of the nonlinearity",
                self.theta,
                self.ar_exponent(e)
            ));
        }
        Ok(())
    }

    /// `f(x, t)` at a point with local exponent `beta`.
    pub fn f(&self, e: &ExponentData, beta: f64, t: f64) -> f64 {
        let mut v = self.c2 * signed_pow(t, beta - 1.0);
        if self.nonlinearity == Nonlinearity::PerturbedPower && self.c1 > 0.0 {
            v += self.c1 * signed_pow(t, self.sigma(e) - 1.0);
        }
        v
    }

    /// Primitive `F(x, t) = int_0^t f(x, s) ds`.
    pub fn big_f(&self, e: &ExponentData, beta: f64, t: f64) -> f64 {
        let a = t.abs();
        let mut v = self.c2 * a.powf(beta) / beta;
        if self.nonlinearity == Nonlinearity::PerturbedPower && self.c1 > 0.0 {
            let s = self.sigma(e);
            v += self.c1 * a.powf(s) / s;
        }
        v
    }
}

/// `|t|^a sign(t)`, zero at `t = 0`.
fn signed_pow(t: f64, a: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t.signum() * t.abs().powf(a)
    }
}

fn abs_pow(t: f64, a: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t.abs().powf(a)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub gradient_part: f64,
    pub singular_part: f64,
    pub nonlinear_part: f64,
    pub total: f64,
}

/// Precomputed per-node data for repeated energy evaluations on one problem.
pub struct EnergyModel {
    grid: Arc<Grid>,
    e: ExponentData,
    prm: ProblemParams,
    /// `w_k r_k^{-alpha p_k}` and `w_k mu_k r_k^{-alpha q_k}`.
    sing_p: Vec<f64>,
    sing_q: Vec<f64>,
    sigma: f64,
}

impl EnergyModel {
    pub fn new(grid: &Arc<Grid>, e: &ExponentData, prm: &ProblemParams) -> Self {
        let w = grid.weights();
        let mut sing_p = Vec::with_capacity(grid.len());
        let mut sing_q = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let r = grid.radius(k).max(prm.sing_floor);
            sing_p.push(w[k] * r.powf(-prm.alpha * e.p()[k]));
            sing_q.push(w[k] * e.mu()[k] * r.powf(-prm.alpha * e.q()[k]));
        }
        EnergyModel {
            grid: Arc::clone(grid),
            e: e.clone(),
            prm: prm.clone(),
            sing_p,
            sing_q,
            sigma: prm.sigma(e),
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn exponents(&self) -> &ExponentData {
        &self.e
    }

    pub fn params(&self) -> &ProblemParams {
        &self.prm
    }

    /// Nodal singular coefficients `w r^{-alpha p}` and `w mu r^{-alpha q}`.
    pub(crate) fn singular_coefficients(&self) -> (&[f64], &[f64]) {
        (&self.sing_p, &self.sing_q)
    }

    fn perturbed(&self) -> bool {
        self.prm.nonlinearity == Nonlinearity::PerturbedPower && self.prm.c1 > 0.0
    }

    fn big_f(&self, k: usize, t: f64) -> f64 {
        let a = t.abs();
        let beta = self.e.beta()[k];
        let mut v = self.prm.c2 * abs_pow(a, beta) / beta;
        if self.perturbed() {
            v += self.prm.c1 * abs_pow(a, self.sigma) / self.sigma;
        }
        v
    }

    fn f(&self, k: usize, t: f64) -> f64 {
        let mut v = self.prm.c2 * signed_pow(t, self.e.beta()[k] - 1.0);
        if self.perturbed() {
            v += self.prm.c1 * signed_pow(t, self.sigma - 1.0);
        }
        v
    }

    /// `rho_H(grad u)` with `1/p, 1/q` weights.
    pub fn gradient_part(&self, values: &[f64]) -> f64 {
        let (p, q, mu) = (self.e.p(), self.e.q(), self.e.mu());
        let cw = self.grid.cell_weights();
        let mag = self.grid.gradient_magnitude(values, Stencil::Forward);
        kahan_sum((0..values.len()).map(|k| {
            if cw[k] == 0.0 || mag[k] == 0.0 {
                return 0.0;
            }
            let m = mag[k];
            cw[k] * (m.powf(p[k]) / p[k] + mu[k] * m.powf(q[k]) / q[k])
        }))
    }

    /// `G(u)`.
    pub fn singular_part(&self, values: &[f64]) -> f64 {
        self.singular_sum(values, |_| true)
    }

    /// `G(u)` restricted to nodes where `keep(k)` holds.
    pub(crate) fn singular_sum(&self, values: &[f64], keep: impl Fn(usize) -> bool) -> f64 {
        let (p, q) = (self.e.p(), self.e.q());
        kahan_sum((0..values.len()).map(|k| {
            let a = values[k].abs();
            if a == 0.0 || !keep(k) {
                return 0.0;
            }
            self.sing_p[k] * a.powf(p[k]) / p[k] + self.sing_q[k] * a.powf(q[k]) / q[k]
        }))
    }

    /// `G` without the `1/p, 1/q` factors.
    pub(crate) fn singular_modular(&self, values: &[f64]) -> f64 {
        let (p, q) = (self.e.p(), self.e.q());
        kahan_sum((0..values.len()).map(|k| {
            let a = values[k].abs();
            if a == 0.0 {
                return 0.0;
            }
            self.sing_p[k] * a.powf(p[k]) + self.sing_q[k] * a.powf(q[k])
        }))
    }

    /// `int F(x, u)`, or `int F(x, u^+)` when `truncated`.
    pub fn nonlinear_part(&self, values: &[f64], truncated: bool) -> f64 {
        let w = self.grid.weights();
        kahan_sum((0..values.len()).map(|k| {
            let t = values[k];
            if t == 0.0 || (truncated && t < 0.0) {
                return 0.0;
            }
            w[k] * self.big_f(k, t)
        }))
    }

    pub fn energy(&self, values: &[f64], truncated: bool) -> EnergyBreakdown {
        let gradient_part = self.gradient_part(values);
        let singular_part = self.singular_part(values);
        let nonlinear_part = self.nonlinear_part(values, truncated);
        EnergyBreakdown {
            gradient_part,
            singular_part,
            nonlinear_part,
            total: gradient_part + singular_part - self.prm.lambda * nonlinear_part,
        }
    }

    pub fn total(&self, values: &[f64], truncated: bool) -> f64 {
        self.energy(values, truncated).total
    }

    /// Partial derivatives `dI/du_k`, zero on boundary nodes.
    pub fn derivative(&self, values: &[f64], truncated: bool) -> Vec<f64> {
        let dim = self.grid.dim();
        let (p, q, mu) = (self.e.p(), self.e.q(), self.e.mu());
        let cw = self.grid.cell_weights();
        let mut flux = self.grid.gradient(values, Stencil::Forward);
        for (k, xi) in flux.chunks_mut(dim).enumerate() {
            let m = xi.iter().map(|c| c * c).sum::<f64>().sqrt();
            let coef = if cw[k] == 0.0 || m == 0.0 {
                0.0
            } else {
                cw[k] * (m.powf(p[k] - 2.0) + mu[k] * m.powf(q[k] - 2.0))
            };
            for c in xi.iter_mut() {
                *c *= coef;
            }
        }
        let mut d = self.grid.forward_gradient_adjoint(&flux);
        let w = self.grid.weights();
        for k in 0..values.len() {
            let t = values[k];
            if t == 0.0 {
                continue;
            }
            d[k] += self.sing_p[k] * signed_pow(t, p[k] - 1.0) + self.sing_q[k] * signed_pow(t, q[k] - 1.0);
            if !(truncated && t < 0.0) {
                d[k] -= self.prm.lambda * w[k] * self.f(k, t);
            }
        }
        self.grid.apply_mask(&mut d);
        d
    }

    /// Riesz vector of `I'(u)` against the quadrature inner product.
    pub fn riesz_gradient(&self, values: &[f64], truncated: bool) -> GridFunction {
        let d = self.derivative(values, truncated);
        self.riesz_from_derivative(d)
    }

    pub(crate) fn riesz_from_derivative(&self, mut d: Vec<f64>) -> GridFunction {
        let w = self.grid.weights();
        for (k, v) in d.iter_mut().enumerate() {
            *v = if w[k] > 0.0 { *v / w[k] } else { 0.0 };
        }
        GridFunction::new(&self.grid, d).expect("length matches grid")
    }
}

pub fn energy(u: &GridFunction, e: &ExponentData, prm: &ProblemParams) -> EnergyBreakdown {
    EnergyModel::new(u.grid(), e, prm).energy(u.values(), false)
}

pub fn gradient(u: &GridFunction, e: &ExponentData, prm: &ProblemParams) -> GridFunction {
    EnergyModel::new(u.grid(), e, prm).riesz_gradient(u.values(), false)
}

/// Energy with `f` replaced by `f_+(x, t) = f(x, max(t, 0))`.
pub fn energy_truncated(u: &GridFunction, e: &ExponentData, prm: &ProblemParams) -> EnergyBreakdown {
    EnergyModel::new(u.grid(), e, prm).energy(u.values(), true)
}

pub fn gradient_truncated(u: &GridFunction, e: &ExponentData, prm: &ProblemParams) -> GridFunction {
    EnergyModel::new(u.grid(), e, prm).riesz_gradient(u.values(), true)
}

/// Residual norm: quadrature `L^2` norm of the Riesz gradient.
pub fn residual_norm(g: &GridFunction) -> f64 {
    g.l2_norm()
}

/// `max ||u||_h / ||grad u||_H` over `samples` seeded random functions, 0 for none.
pub fn empirical_embedding_constant(
    grid: &Arc<Grid>,
    e: &ExponentData,
    h_target: &[f64],
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut sampler = Sampler::new(grid, seed);
    let mut best = 0.0f64;
    for _ in 0..samples {
        let u = sampler.next_function();
        let den = luxemburg_norm(&u, Modular::Gradient(e))?;
        if den == 0.0 {
            continue;
        }
        let num = luxemburg_norm(&u, Modular::Plain(h_target))?;
        best = best.max(num / den);
    }
    Ok(best)
}

/// `C_eps = max_x C_eps(x)` with `F(x, t) <= eps |t|^{q+} + C_eps |t|^{beta(x)}` for all `t`.
///
/// The lower-order power of `PerturbedPower` is split by the weighted Young
/// inequality `a^{1-s} b^s <= (1-s) delta a + s delta^{-(1-s)/s} b`.
pub fn young_split_constant(e: &ExponentData, prm: &ProblemParams, eps: f64) -> f64 {
    let q_plus = e.bounds().q_plus;
    let sigma = prm.sigma(e);
    let perturbed = prm.nonlinearity == Nonlinearity::PerturbedPower && prm.c1 > 0.0;
    e.beta()
        .iter()
        .map(|&beta| {
            let mut c = prm.c2 / beta;
            if perturbed {
                let s = (sigma - q_plus) / (beta - q_plus);
                let delta = eps * sigma / (prm.c1 * (1.0 - s));
                c += prm.c1 / sigma * s * delta.powf(-(1.0 - s) / s);
            }
            c
        })
        .fold(0.0, f64::max)
}

/// Smallest `C` with `| |a|^{s-2} a - |b|^{s-2} b | <= C |a - b| (|a| + |b|)^{s-2}`
/// for all reals, from a sweep of the one-variable reduction `b = 1`, inflated by
/// 0.1%.
pub fn chipot_constant(s: f64) -> f64 {
    let ratio = |t: f64| {
        let num = (signed_pow(t, s - 1.0) - 1.0).abs();
        let den = (t - 1.0).abs() * (t.abs() + 1.0).powf(s - 2.0);
        num / den
    };
    let mut best = 1.0f64;
    let steps = 20_000;
    for i in 0..=steps {
        let mag = (-8.0 + 16.0 * i as f64 / steps as f64).exp2();
        for t in [mag, -mag] {
            if (t - 1.0).abs() > 1e-9 {
                best = best.max(ratio(t));
            }
        }
    }
    best * (1.0 + 1e-3)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(mu: f64, lambda: f64) -> (Arc<Grid>, ExponentData, ProblemParams) {
        let g = Arc::new(Grid::new(3, &[(-1.0, 1.0); 3], 7).unwrap());
        let e = ExponentData::constant(&g, 1.5, 1.8, 2.2, mu).unwrap();
        let prm = ProblemParams::new(&g, &e, lambda, 0.3, Nonlinearity::PurePower);
        (g, e, prm)
    }

    #[test]
    fn nonlinearity_examples() {
        let (g, e, prm) = setup(1.0, 1.0);
        assert_eq!(prm.f(&e, 2.5, 0.0), 0.0);
        assert!((prm.f(&e, 2.5, 4.0) - 8.0).abs() < 1e-12);
        assert!((prm.big_f(&e, 2.5, 4.0) - 32.0 / 2.5).abs() < 1e-12);
        assert_eq!(prm.theta, 2.2);
        prm.validate(&e).unwrap();
        let _ = g;
    }

    #[test]
    fn zero_function_has_zero_energy() {
        let (g, e, prm) = setup(1.0, 2.0);
        let z = GridFunction::zeros(&g);
        assert_eq!(energy(&z, &e, &prm), EnergyBreakdown::default());
        assert!(gradient(&z, &e, &prm).is_zero());
    }

    #[test]
    fn quadratic_gradient_part_matches_hand_quadrature() {
        let g = Arc::new(Grid::new(2, &[(0.0, 1.0); 2], 11).unwrap());
        let e = ExponentData::constant(&g, 2.0, 2.5, 3.0, 0.0).unwrap();
        let prm = ProblemParams::new(&g, &e, 0.0, 0.5, Nonlinearity::PurePower);
        // tent in x1, constant in x2 apart from the mask
        let u = GridFunction::from_fn(&g, |x| 1.0 - (2.0 * x[0] - 1.0).abs());
        let b = energy(&u, &e, &prm);
        let h = 0.1;
        let mut hand = 0.0;
        for i in 0..10 {
            for j in 0..10 {
                let at = |a: usize, b: usize| u.values()[a * 11 + b];
                let dx = (at(i + 1, j) - at(i, j)) / h;
                let dy = (at(i, j + 1) - at(i, j)) / h;
                hand += h * h * (dx * dx + dy * dy) / 2.0;
            }
        }
        assert!((b.gradient_part - hand).abs() < 1e-8, "{} {hand}", b.gradient_part);
        assert_eq!(b.total, b.gradient_part + b.singular_part);
    }

    #[test]
    fn truncation_only_drops_negative_values() {
        let (g, e, prm) = setup(1.0, 1.5);
        let pos = crate::sampling::sine_bump(&g);
        assert_eq!(energy(&pos, &e, &prm), energy_truncated(&pos, &e, &prm));
        assert_eq!(gradient(&pos, &e, &prm), gradient_truncated(&pos, &e, &prm));
        let neg = pos.scaled(-1.0);
        let t = energy_truncated(&neg, &e, &prm);
        assert_eq!(t.nonlinear_part, 0.0);
        assert!(t.total > 0.0);
    }

    fn peak(u: &GridFunction) -> f64 {
        u.values().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn directional_derivative_matches_difference_quotient() {
        let (g, e, prm) = setup(1.0, 0.7);
        let model = EnergyModel::new(&g, &e, &prm);
        let mut s = Sampler::new(&g, 3);
        for truncated in [false, true] {
            for _ in 0..5 {
                let u = s.next_smooth();
                let phi = s.next_smooth();
                let phi = phi.scaled(peak(&u) / peak(&phi));
                let an = model.riesz_gradient(u.values(), truncated).dot(&phi);
                let h = 1e-5;
                let plus = model.total(u.axpy(h, &phi).values(), truncated);
                let minus = model.total(u.axpy(-h, &phi).values(), truncated);
                let fd = (plus - minus) / (2.0 * h);
                assert!((fd - an).abs() <= 1e-4 * an.abs().max(fd.abs()), "{fd} {an}");
            }
        }
    }

    #[test]
    fn energy_decreases_along_rays() {
        let (g, e, prm) = setup(1.0, 1.0);
        let phi = crate::sampling::sine_bump(&g);
        let vals: Vec<f64> = (0..24)
            .map(|k| 2f64.powi(k))
            .map(|t| energy(&phi.scaled(t), &e, &prm).total)
            .collect();
        assert!(vals.last().unwrap() < &0.0);
        assert!(vals.windows(2).rev().take(3).all(|w| w[1] < w[0]), "{vals:?}");
    }

    #[test]
    fn embedding_constant_is_running_max() {
        let g = Arc::new(Grid::new(2, &[(0.0, 1.0); 2], 17).unwrap());
        let e = ExponentData::constant(&g, 2.0, 2.0 + 1e-6, 3.0, 0.0).unwrap();
        let h = vec![2.0; g.len()];
        assert_eq!(empirical_embedding_constant(&g, &e, &h, 0, 1).unwrap(), 0.0);
        let c10 = empirical_embedding_constant(&g, &e, &h, 10, 1).unwrap();
        let c40 = empirical_embedding_constant(&g, &e, &h, 40, 1).unwrap();
        assert!(c10 <= c40);
        // Poincare: ||u||_2 <= ||grad u||_2 / (pi sqrt 2) on the unit square
        assert!(c40 <= 1.0 / (PI_SQRT2) * 1.05, "{c40}");
    }

    const PI_SQRT2: f64 = std::f64::consts::PI * std::f64::consts::SQRT_2;

    #[test]
    fn chipot_constant_dominates_known_value() {
        // at b = -a the ratio equals 2^{2-s}
        for s in [1.5, 1.8, 2.0, 2.5] {
            let c = chipot_constant(s);
            assert!(c >= 2f64.powf(2.0 - s).max(1.0), "{s} {c}");
        }
        assert!((chipot_constant(2.0) - 1.001).abs() < 1e-9);
    }

    #[test]
    fn young_split_for_pure_power() {
        let (_, e, prm) = setup(1.0, 1.0);
        assert!((young_split_constant(&e, &prm, 0.1) - 1.0 / 2.2).abs() < 1e-15);
    }
}
