//! Seeded random test functions on a grid.
//!
//! Every family vanishes on the boundary nodes. Amplitudes are log-uniform in
//! `[AMPLITUDE_MIN, AMPLITUDE_MAX]` so that sampled functions land on both sides
//! of the unit sphere of every norm in use.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{Grid, GridFunction};

pub const AMPLITUDE_MIN: f64 = 1e-2;
pub const AMPLITUDE_MAX: f64 = 1e2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    /// Random low-mode sine series, mixed sign.
    SineSeries,
    /// Gaussian bump at a random center, cut off at the boundary.
    GaussianBump,
    /// Product of boundary factors times a random quadratic.
    BoundaryPolynomial,
    /// Narrow bump at the node closest to the origin.
    Concentration,
}

pub const FAMILIES: [Family; 4] = [
    Family::SineSeries,
    Family::GaussianBump,
    Family::BoundaryPolynomial,
    Family::Concentration,
];

/// `prod_i 4 (x_i - a_i)(b_i - x_i) / (b_i - a_i)^2`, equal to 1 at the box center.
fn cutoff(grid: &Grid, x: &[f64]) -> f64 {
    grid.extents()
        .iter()
        .zip(x)
        .map(|(&(a, b), &xi)| (4.0 * (xi - a) * (b - xi) / ((b - a) * (b - a))).max(0.0))
        .product()
}

/// Smooth positive bump `prod_i sin(pi (x_i - a_i) / (b_i - a_i))`.
pub fn sine_bump(grid: &Arc<Grid>) -> GridFunction {
    let ext = grid.extents().to_vec();
    GridFunction::from_fn(grid, |x| {
        ext.iter()
            .zip(x)
            .map(|(&(a, b), &xi)| (PI * (xi - a) / (b - a)).sin().max(0.0))
            .product()
    })
}

/// Bump of width `L 2^{-k}` centered at the node nearest the origin, unit peak.
pub fn concentration(grid: &Arc<Grid>, k: u32) -> GridFunction {
    let center = grid.coords(grid.node_nearest_origin());
    let span = grid
        .extents()
        .iter()
        .map(|(a, b)| b - a)
        .fold(f64::INFINITY, f64::min);
    let width = span * 0.5f64.powi(k as i32);
    let g = Arc::clone(grid);
    GridFunction::from_fn(grid, |x| {
        let d2: f64 = x.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum();
        (-d2 / (2.0 * width * width)).exp() * cutoff(&g, x).sqrt()
    })
}

pub struct Sampler {
    grid: Arc<Grid>,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(grid: &Arc<Grid>, seed: u64) -> Self {
        Sampler {
            grid: Arc::clone(grid),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn amplitude(&mut self) -> f64 {
        let (lo, hi) = (AMPLITUDE_MIN.ln(), AMPLITUDE_MAX.ln());
        self.rng.random_range(lo..hi).exp()
    }

    /// A function from a uniformly chosen family.
    pub fn next_function(&mut self) -> GridFunction {
        let family = FAMILIES[self.rng.random_range(0..FAMILIES.len())];
        self.draw(family)
    }

    /// A function from the families without near-zero plateaus (sine series and
    /// boundary polynomials), for difference-quotient checks of terms like
    /// `|t|^{p}` with `p < 2` that are not twice differentiable at 0.
    pub fn next_smooth(&mut self) -> GridFunction {
        let family = if self.rng.random_bool(0.5) {
            Family::SineSeries
        } else {
            Family::BoundaryPolynomial
        };
        self.draw(family)
    }

    pub fn draw(&mut self, family: Family) -> GridFunction {
        let amp = self.amplitude();
        let u = self.shape(family);
        let peak = u.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak == 0.0 {
            return u;
        }
        u.scaled(amp / peak)
    }

    fn shape(&mut self, family: Family) -> GridFunction {
        let grid = Arc::clone(&self.grid);
        let dim = grid.dim();
        let ext = grid.extents().to_vec();
        match family {
            Family::SineSeries => {
                let modes = self.rng.random_range(1..=4);
                let terms: Vec<(Vec<f64>, f64)> = (0..modes)
                    .map(|_| {
                        let k: Vec<f64> =
                            (0..dim).map(|_| self.rng.random_range(1..=4) as f64).collect();
                        let k2: f64 = k.iter().map(|v| v * v).sum();
                        let c = self.rng.random_range(-1.0..1.0) / k2;
                        (k, c)
                    })
                    .collect();
                GridFunction::from_fn(&grid, |x| {
                    terms
                        .iter()
                        .map(|(k, c)| {
                            c * ext
                                .iter()
                                .zip(x)
                                .zip(k)
                                .map(|((&(a, b), &xi), &ki)| (ki * PI * (xi - a) / (b - a)).sin())
                                .product::<f64>()
                        })
                        .sum()
                })
            }
            Family::GaussianBump => {
                let center: Vec<f64> = ext
                    .iter()
                    .map(|&(a, b)| {
                        let m = 0.1 * (b - a);
                        self.rng.random_range(a + m..b - m)
                    })
                    .collect();
                let span = ext.iter().map(|(a, b)| b - a).fold(f64::INFINITY, f64::min);
                let width = span * self.rng.random_range(0.05f64.ln()..0.5f64.ln()).exp();
                GridFunction::from_fn(&grid, |x| {
                    let d2: f64 = x.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum();
                    (-d2 / (2.0 * width * width)).exp() * cutoff(&grid, x)
                })
            }
            Family::BoundaryPolynomial => {
                let lin: Vec<f64> = (0..dim).map(|_| self.rng.random_range(-1.0..1.0)).collect();
                let quad: Vec<f64> = (0..dim).map(|_| self.rng.random_range(-1.0..1.0)).collect();
                let c0 = self.rng.random_range(-1.0..1.0);
                GridFunction::from_fn(&grid, |x| {
                    let poly: f64 = c0
                        + x.iter()
                            .zip(lin.iter().zip(&quad))
                            .map(|(xi, (l, q))| l * xi + q * xi * xi)
                            .sum::<f64>();
                    poly * cutoff(&grid, x)
                })
            }
            Family::Concentration => {
                let k = self.rng.random_range(1..=6);
                concentration(&grid, k)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Arc<Grid> {
        Arc::new(Grid::new(3, &[(-1.0, 1.0); 3], 9).unwrap())
    }

    #[test]
    fn samples_are_reproducible_and_masked() {
        let g = grid();
        let mut a = Sampler::new(&g, 7);
        let mut b = Sampler::new(&g, 7);
        for _ in 0..20 {
            let (u, v) = (a.next_function(), b.next_function());
            assert_eq!(u, v);
            for (k, &val) in u.values().iter().enumerate() {
                if g.is_boundary(k) {
                    assert_eq!(val, 0.0);
                }
            }
        }
        assert_ne!(Sampler::new(&g, 8).next_function(), Sampler::new(&g, 7).next_function());
    }

    #[test]
    fn amplitudes_in_range() {
        let g = grid();
        let mut s = Sampler::new(&g, 1);
        for f in FAMILIES {
            for _ in 0..10 {
                let u = s.draw(f);
                let peak = u.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!((AMPLITUDE_MIN * 0.999..=AMPLITUDE_MAX * 1.001).contains(&peak));
            }
        }
    }

    #[test]
    fn concentration_peaks_near_origin() {
        let g = grid();
        let u = concentration(&g, 5);
        let argmax = (0..g.len())
            .max_by(|&i, &j| u.values()[i].total_cmp(&u.values()[j]))
            .unwrap();
        assert_eq!(argmax, g.node_nearest_origin());
        assert!(sine_bump(&g).interior_min() > 0.0);
    }
}
