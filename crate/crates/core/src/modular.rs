//! Modulars, Luxemburg norms and the Hölder pairing on grid functions.
//!
//! Three modulars are provided:
//!
//! * `Plain(h)`: `rho(u) = sum_k w_k |u_k|^{h_k}`
//! * `Musielak(e)`: `rho_H(u) = sum_k w_k (|u_k|^{p_k} + mu_k |u_k|^{q_k})`
//! * `Gradient(e)`: `rho_H(|grad u|)` with the forward stencil and cell weights,
//!   so that its Luxemburg norm is the norm `||u||_{1,H,0}` used by the energy.
//!
//! The Luxemburg norm is the unique `s > 0` with `rho(u / s) = 1`, found by
//! bracketing from `s = 1` (doubling or halving) followed by 60 bisection steps.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exponents::ExponentData;
use crate::grid::{Grid, GridFunction, Stencil};

/// Neumaier-compensated sum in iteration order.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in iter {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    if sum.is_finite() {
        sum + comp
    } else {
        sum
    }
}

pub const MAX_BRACKET_STEPS: usize = 256;
pub const BISECTION_STEPS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModularKind {
    PlainH,
    MusielakH,
    GradientH,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ModularValue {
    pub value: f64,
    pub kind: ModularKind,
}

/// Which modular a norm or modular value is taken with.
#[derive(Clone, Copy, Debug)]
pub enum Modular<'a> {
    Plain(&'a [f64]),
    Musielak(&'a ExponentData),
    Gradient(&'a ExponentData),
}

impl Modular<'_> {
    pub fn kind(&self) -> ModularKind {
        match self {
            Modular::Plain(_) => ModularKind::PlainH,
            Modular::Musielak(_) => ModularKind::MusielakH,
            Modular::Gradient(_) => ModularKind::GradientH,
        }
    }
}

/// `sum_k w_k (a_k^{s_k} + c_k a_k^{t_k})` over nonnegative magnitudes `a_k`,
/// stored through `ln a_k` so that scaling by `1/lambda` is a shift.
pub(crate) struct Integrand<'a> {
    log_mag: Vec<f64>,
    weights: &'a [f64],
    first: &'a [f64],
    second: Option<(&'a [f64], &'a [f64])>,
}

impl<'a> Integrand<'a> {
    pub(crate) fn new(
        magnitudes: &[f64],
        weights: &'a [f64],
        first: &'a [f64],
        second: Option<(&'a [f64], &'a [f64])>,
    ) -> Self {
        let log_mag = magnitudes
            .iter()
            .zip(weights)
            .map(|(&a, &w)| if a > 0.0 && w > 0.0 { a.ln() } else { f64::NEG_INFINITY })
            .collect();
        Integrand {
            log_mag,
            weights,
            first,
            second,
        }
    }

    pub(crate) fn for_modular(
        grid: &'a Grid,
        values: &[f64],
        modular: Modular<'a>,
    ) -> Self {
        match modular {
            Modular::Plain(h) => {
                let mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
                Integrand::new(&mags, grid.weights(), h, None)
            }
            Modular::Musielak(e) => {
                let mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
                Integrand::new(&mags, grid.weights(), e.p(), Some((e.mu(), e.q())))
            }
            Modular::Gradient(e) => {
                let mags = grid.gradient_magnitude(values, Stencil::Forward);
                Integrand::new(&mags, grid.cell_weights(), e.p(), Some((e.mu(), e.q())))
            }
        }
    }

    pub(crate) fn is_zero(&self) -> bool {
        self.log_mag.iter().all(|&l| l == f64::NEG_INFINITY)
    }

    /// `rho(u / scale)`.
    pub(crate) fn eval(&self, scale: f64) -> f64 {
        let shift = scale.ln();
        let terms = self.log_mag.iter().enumerate().map(|(k, &l)| {
            if l == f64::NEG_INFINITY {
                return 0.0;
            }
            let d = l - shift;
            let mut t = (self.first[k] * d).exp();
            if let Some((coef, exps)) = self.second {
                if coef[k] != 0.0 {
                    t += coef[k] * (exps[k] * d).exp();
                }
            }
            self.weights[k] * t
        });
        kahan_sum(terms)
    }

    pub(crate) fn luxemburg(&self) -> Result<f64> {
        if self.is_zero() {
            return Ok(0.0);
        }
        let (mut lo, mut hi);
        if self.eval(1.0) > 1.0 {
            lo = 1.0;
            hi = 2.0;
            let mut steps = 0;
            while self.eval(hi) > 1.0 {
                steps += 1;
                if steps > MAX_BRACKET_STEPS {
                    return Err(Error::Bracketing(MAX_BRACKET_STEPS));
                }
                lo = hi;
                hi *= 2.0;
            }
        } else {
            hi = 1.0;
            lo = 0.5;
            let mut steps = 0;
            while self.eval(lo) <= 1.0 {
                steps += 1;
                if steps > MAX_BRACKET_STEPS {
                    return Err(Error::Bracketing(MAX_BRACKET_STEPS));
                }
                hi = lo;
                lo *= 0.5;
            }
        }
        // invariant: rho(u/lo) > 1 >= rho(u/hi)
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }
}

/// `sum_k w_k |u_k|^{h_k}`.
pub fn modular_h(u: &GridFunction, h: &[f64]) -> f64 {
    modular(u, Modular::Plain(h)).value
}

/// `sum_k w_k (|u_k|^{p_k} + mu_k |u_k|^{q_k})`.
pub fn modular_musielak(u: &GridFunction, e: &ExponentData) -> f64 {
    modular(u, Modular::Musielak(e)).value
}

/// Musielak modular of `|grad u|`.
pub fn modular_gradient(u: &GridFunction, e: &ExponentData) -> f64 {
    modular(u, Modular::Gradient(e)).value
}

pub fn modular(u: &GridFunction, which: Modular<'_>) -> ModularValue {
    let value = Integrand::for_modular(u.grid(), u.values(), which).eval(1.0);
    ModularValue {
        value,
        kind: which.kind(),
    }
}

/// Luxemburg norm `inf { s > 0 : rho(u / s) <= 1 }`; zero for `u == 0`.
pub fn luxemburg_norm(u: &GridFunction, which: Modular<'_>) -> Result<f64> {
    Integrand::for_modular(u.grid(), u.values(), which).luxemburg()
}

/// Norm `||u||_{1,H,0} = || |grad u| ||_H`.
pub fn sobolev_norm(u: &GridFunction, e: &ExponentData) -> Result<f64> {
    luxemburg_norm(u, Modular::Gradient(e))
}

/// Hölder pairing: `(sum w |u v|, 2 ||u||_h ||v||_{h'})` with `h' = h / (h - 1)`.
pub fn holder_pairing(u: &GridFunction, v: &GridFunction, h: &[f64]) -> Result<(f64, f64)> {
    let grid = u.grid();
    let lhs = kahan_sum(
        grid.weights()
            .iter()
            .zip(u.values().iter().zip(v.values()))
            .map(|(w, (a, b))| w * (a * b).abs()),
    );
    let conj: Vec<f64> = h.iter().map(|&s| s / (s - 1.0)).collect();
    let nu = luxemburg_norm(u, Modular::Plain(h))?;
    let nv = luxemburg_norm(v, Modular::Plain(&conj))?;
    Ok((lhs, HOLDER_CONSTANT * nu * nv))
}

/// Dominates `1/h^- + 1/(h^-)'` for every `h^- > 1`.
pub const HOLDER_CONSTANT: f64 = 2.0;

/// Outcome of one modular/norm relation for a single function.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Relation {
    pub name: &'static str,
    /// False when the hypothesis of an implication does not hold for this `u`.
    pub applicable: bool,
    /// Nonnegative when the relation holds; inequalities are measured relative to
    /// `max(1, |rhs|)`.
    pub slack: f64,
}

impl Relation {
    pub fn passed(&self, tol: f64) -> bool {
        !self.applicable || self.slack >= -tol
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyReport {
    pub relations: Vec<Relation>,
}

impl PropertyReport {
    pub fn all_passed(&self, tol: f64) -> bool {
        self.relations.iter().all(|r| r.passed(tol))
    }

    pub fn min_slack(&self) -> f64 {
        self.relations
            .iter()
            .filter(|r| r.applicable)
            .map(|r| r.slack)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Default tolerance for [`PropertyReport::all_passed`].
pub const RELATION_TOL: f64 = 1e-8;

fn rel_slack(lhs: f64, rhs: f64) -> f64 {
    (rhs - lhs) / rhs.abs().max(1.0)
}

/// Signed agreement of `a` and `b` relative to zero: `sign(ab) * min(|a|, |b|)`.
fn sign_agreement(a: f64, b: f64) -> f64 {
    let m = a.abs().min(b.abs());
    if a * b >= 0.0 {
        m
    } else {
        -m
    }
}

fn power_bounds(norm: f64, rho: f64, lo_exp: f64, hi_exp: f64) -> f64 {
    if norm > 1.0 {
        rel_slack(norm.powf(lo_exp), rho).min(rel_slack(rho, norm.powf(hi_exp)))
    } else {
        rel_slack(norm.powf(hi_exp), rho).min(rel_slack(rho, norm.powf(lo_exp)))
    }
}

/// Monotone decay along `u / 2^k` and growth along `2^k u`, `k = 0..6`.
fn limit_slack(integrand_at: impl Fn(f64) -> (f64, f64)) -> f64 {
    let mut slack = f64::INFINITY;
    for dir in [0.5, 2.0] {
        let mut prev = integrand_at(1.0);
        let mut scale = 1.0;
        for _ in 0..6 {
            scale *= dir;
            let next = integrand_at(scale);
            let (dn, dr) = if dir < 1.0 {
                (prev.0 - next.0, prev.1 - next.1)
            } else {
                (next.0 - prev.0, next.1 - prev.1)
            };
            slack = slack.min(dn / prev.0.max(next.0)).min(dr / prev.1.max(next.1));
            prev = next;
        }
    }
    slack
}

/// Evaluates the modular/norm relations for one function.
///
/// The plain-exponent relations use `h = p`. The unit-level equivalence for the
/// Musielak modular is checked in its standard form, comparing `||u||_H` with
/// `rho_H(u)`.
pub fn check_modular_norm_relations(u: &GridFunction, e: &ExponentData) -> Result<PropertyReport> {
    let grid = u.grid();
    let b = e.bounds();
    let mut relations = Vec::new();
    if u.is_zero() {
        for name in RELATION_NAMES {
            relations.push(Relation {
                name,
                applicable: false,
                slack: 0.0,
            });
        }
        return Ok(PropertyReport { relations });
    }

    let plain = Integrand::for_modular(grid, u.values(), Modular::Plain(e.p()));
    let pn = plain.luxemburg()?;
    let pr = plain.eval(1.0);
    relations.push(Relation {
        name: "plain.unit_equivalence",
        applicable: true,
        slack: sign_agreement(pn - 1.0, pr - 1.0),
    });
    relations.push(Relation {
        name: "plain.power_bounds",
        applicable: true,
        slack: power_bounds(pn, pr, b.p_minus, b.p_plus),
    });
    relations.push(Relation {
        name: "plain.limits",
        applicable: true,
        slack: limit_slack(|s| (pn * s, plain.eval(1.0 / s))),
    });
    relations.push(Relation {
        name: "plain.unit_level",
        applicable: true,
        slack: -(plain.eval(pn) - 1.0).abs(),
    });

    let mus = Integrand::for_modular(grid, u.values(), Modular::Musielak(e));
    let mn = mus.luxemburg()?;
    let mr = mus.eval(1.0);
    relations.push(Relation {
        name: "musielak.unit_level",
        applicable: true,
        slack: -(mus.eval(mn) - 1.0).abs(),
    });
    relations.push(Relation {
        name: "musielak.unit_equivalence",
        applicable: true,
        slack: sign_agreement(mn - 1.0, mr - 1.0),
    });
    relations.push(Relation {
        name: "musielak.below_one",
        applicable: mn < 1.0,
        slack: rel_slack(mn.powf(b.q_plus), mr).min(rel_slack(mr, mn.powf(b.p_minus))),
    });
    relations.push(Relation {
        name: "musielak.above_one",
        applicable: mn > 1.0,
        slack: rel_slack(mn.powf(b.p_minus), mr).min(rel_slack(mr, mn.powf(b.q_plus))),
    });
    relations.push(Relation {
        name: "musielak.limits",
        applicable: true,
        slack: limit_slack(|s| (mn * s, mus.eval(1.0 / s))),
    });

    let grad = Integrand::for_modular(grid, u.values(), Modular::Gradient(e));
    let gn = grad.luxemburg()?;
    relations.push(Relation {
        name: "gradient.unit_level",
        applicable: gn > 0.0,
        slack: -(grad.eval(gn) - 1.0).abs(),
    });
    Ok(PropertyReport { relations })
}

pub const RELATION_NAMES: [&str; 10] = [
    "plain.unit_equivalence",
    "plain.power_bounds",
    "plain.limits",
    "plain.unit_level",
    "musielak.unit_level",
    "musielak.unit_equivalence",
    "musielak.below_one",
    "musielak.above_one",
    "musielak.limits",
    "gradient.unit_level",
];

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn unit_square(n: usize) -> Arc<Grid> {
        Arc::new(Grid::new(2, &[(0.0, 1.0), (0.0, 1.0)], n).unwrap())
    }

    fn raw(grid: &Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        grid.sample(f)
    }

    #[test]
    fn kahan_recovers_small_terms() {
        let mut v = vec![1.0];
        v.extend(std::iter::repeat_n(1e-16, 10_000));
        assert!((kahan_sum(v) - (1.0 + 1e-12)).abs() < 1e-15);
    }

    #[test]
    fn plain_modular_examples() {
        let g = unit_square(9);
        let n = g.len();
        // evaluated without the boundary mask, as a plain quadrature check
        let (one, e17) = (vec![1.0; n], vec![1.7; n]);
        let ones = Integrand::new(&one, g.weights(), &e17, None);
        assert!((ones.eval(1.0) - 1.0).abs() < 1e-14);
        let two = vec![2.0; n];
        let twos = Integrand::new(&two, g.weights(), &two, None);
        assert!((twos.eval(1.0) - 4.0).abs() < 1e-13);
    }

    #[test]
    fn cubic_modular_matches_trapezoid_sum() {
        // int_0^1 x^3 = 1/4; the trapezoid rule with spacing h overshoots by h^2/4
        let g = unit_square(33);
        let h = 1.0 / 32.0;
        let x1 = raw(&g, |x| x[0]);
        let three = vec![3.0; g.len()];
        let it = Integrand::new(&x1, g.weights(), &three, None);
        let exact_trapezoid = 0.25 + h * h / 4.0;
        assert!((it.eval(1.0) - exact_trapezoid).abs() < 1e-13);
        assert!((it.eval(1.0) - 0.25).abs() <= h * h / 4.0 + 1e-13);
    }

    #[test]
    fn musielak_degenerates_to_plain() {
        let g = unit_square(9);
        let e = ExponentData::constant(&g, 1.5, 1.8, 2.5, 0.0).unwrap();
        let u = GridFunction::from_fn(&g, |x| (3.0 * x[0]).sin() * x[1]);
        assert_eq!(modular_musielak(&u, &e), modular_h(&u, e.p()));
        assert_eq!(modular_musielak(&GridFunction::zeros(&g), &e), 0.0);
    }

    #[test]
    fn two_phase_unit_function() {
        let g = unit_square(9);
        let e = ExponentData::constant(&g, 1.5, 1.8, 2.5, 1.0).unwrap();
        let ones = vec![1.0; g.len()];
        let it = Integrand::new(&ones, g.weights(), e.p(), Some((e.mu(), e.q())));
        assert!((it.eval(1.0) - 2.0).abs() < 1e-10);
    }

    #[test]
    fn constant_exponent_norm_is_lp_norm() {
        let g = unit_square(17);
        let u = GridFunction::from_fn(&g, |x| (x[0] - 0.3) * (x[1] + 0.2));
        for s in [2.0, 3.0] {
            let h = vec![s; g.len()];
            let norm = luxemburg_norm(&u, Modular::Plain(&h)).unwrap();
            let closed = modular_h(&u, &h).powf(1.0 / s);
            assert!((norm - closed).abs() <= 1e-8 * closed, "{norm} {closed}");
        }
    }

    #[test]
    fn norm_is_homogeneous() {
        let g = unit_square(17);
        let e = ExponentData::new(
            &g,
            g.sample(|x| 1.4 + 0.2 * x[0]),
            g.sample(|x| 1.9 + 0.1 * x[1]),
            vec![2.5; g.len()],
            g.sample(|x| x[0] * x[1]),
        )
        .unwrap();
        let u = GridFunction::from_fn(&g, |x| (5.0 * x[0]).cos() + x[1]);
        for which in [Modular::Plain(e.p()), Modular::Musielak(&e), Modular::Gradient(&e)] {
            let n1 = luxemburg_norm(&u, which).unwrap();
            for c in [0.5, 3.0, -2.0] {
                let nc = luxemburg_norm(&u.scaled(c), which).unwrap();
                assert!((nc - c.abs() * n1).abs() <= 1e-8 * nc, "{:?}", which.kind());
            }
            let unit = Integrand::for_modular(&g, u.values(), which);
            assert!((unit.eval(n1) - 1.0).abs() <= 1e-10);
        }
        assert_eq!(luxemburg_norm(&GridFunction::zeros(&g), Modular::Musielak(&e)).unwrap(), 0.0);
    }

    #[test]
    fn bracketing_failure_is_reported() {
        let g = unit_square(5);
        let mut vals = vec![0.0; g.len()];
        vals[12] = f64::MAX;
        let huge = vec![1e6; g.len()];
        let it = Integrand::new(&vals, g.weights(), &huge, None);
        assert!(matches!(it.luxemburg(), Err(Error::Bracketing(_))));
    }

    #[test]
    fn relations_hold_at_unit_and_scaled_norms() {
        let g = unit_square(17);
        let e = ExponentData::constant(&g, 1.5, 1.8, 2.5, 1.0).unwrap();
        let u = GridFunction::from_fn(&g, |x| (x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])).sqrt());
        let n = luxemburg_norm(&u, Modular::Musielak(&e)).unwrap();
        let unit = u.scaled(1.0 / n);
        let rho = modular_musielak(&unit, &e);
        assert!((rho - 1.0).abs() <= 1e-8);
        let two = u.scaled(2.0 / n);
        let rho2 = modular_musielak(&two, &e);
        assert!(rho2 >= 2f64.powf(1.5) && rho2 <= 2f64.powf(1.8), "{rho2}");
        for v in [&u, &unit, &two, &u.scaled(0.01 / n)] {
            let report = check_modular_norm_relations(v, &e).unwrap();
            assert!(report.all_passed(RELATION_TOL), "{report:?}");
        }
        let zero = check_modular_norm_relations(&GridFunction::zeros(&g), &e).unwrap();
        assert!(zero.all_passed(RELATION_TOL));
        assert_eq!(zero.relations.len(), RELATION_NAMES.len());
    }

    #[test]
    fn holder_pairing_examples() {
        let g = unit_square(17);
        let h = vec![2.0; g.len()];
        let u = GridFunction::from_fn(&g, |x| x[0] - x[1] * x[1]);
        let (lhs, rhs) = holder_pairing(&u, &GridFunction::zeros(&g), &h).unwrap();
        assert_eq!((lhs, rhs), (0.0, 0.0));
        // h = 2: lhs is ||u||^2, the Cauchy-Schwarz bound is attained, rhs is twice that
        let (lhs, rhs) = holder_pairing(&u, &u, &h).unwrap();
        assert!((rhs / lhs - 2.0).abs() < 1e-8);
    }
}
