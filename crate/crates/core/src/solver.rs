//! Mountain-pass solver for `I'(u) = 0` with `u >= 0`.
//!
//! The geometry is certified first: with empirical embedding constants `C_{q+}`
//! and `C_beta`, the minorant
//!
//! ```text
//! m(gamma) = (1/q+ - lambda eps c3) gamma^{q+} - lambda C_eps c4 gamma^{beta-}
//! c3 = C_{q+}^{q+},  c4 = C_beta^{beta-}
//! ```
//!
//! gives `eta = m(gamma) > 0` for `lambda < lambda_hat = 1 / (q+ eps c3)`, and
//! `I(u) >= eta` is then checked on random `u` with `||u||_{1,H,0} = gamma`.
//!
//! The critical point is found on a single path, the ray `t -> t v` through the
//! current iterate. The path is sampled at `path_points` points, the sample maximum
//! is located (lowest index on ties) and refined to the exact ray maximizer by a
//! root search for `d/dt I_+(t v) = 0` between its neighbors. The maximizer `u`
//! then takes an Armijo step along `d = -P^{-1} I_+'(u)`, where `P` is the
//! frozen-coefficient operator `D^T C(u) D + S(u)` of the convex part, and the
//! decrease is measured on `J(v) = max_t I_+(t v)`. Accepted values of `J` are
//! therefore non-increasing.

use std::sync::Arc;

use serde::Serialize;

use crate::energy::{
    empirical_embedding_constant, young_split_constant, EnergyBreakdown, EnergyModel, ProblemParams,
};
use crate::error::{Error, Result};
use crate::exponents::ExponentData;
use crate::grid::{Grid, GridFunction, Stencil};
use crate::modular::{kahan_sum, luxemburg_norm, Modular};
use crate::sampling::{sine_bump, Sampler};

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub tol_residual: f64,
    pub tol_sign: f64,
    pub tol_energy: f64,
    pub max_iters: usize,
    pub path_points: usize,
    pub armijo_factor: f64,
    pub sufficient_decrease: f64,
    /// Descent steps on the untruncated energy after clamping.
    pub confirm_steps: usize,
    /// Random functions used for each embedding constant.
    pub embedding_samples: usize,
    /// Random functions on the sphere `||u|| = gamma`.
    pub geometry_samples: usize,
    /// `eps` of the Young split `F <= eps |t|^{q+} + C_eps |t|^beta`.
    pub epsilon: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol_residual: 1e-6,
            tol_sign: 1e-8,
            tol_energy: 1e-12,
            max_iters: 20_000,
            path_points: 21,
            armijo_factor: 0.5,
            sufficient_decrease: 1e-4,
            confirm_steps: 50,
            embedding_samples: 200,
            geometry_samples: 200,
            epsilon: 0.1,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.tol_residual > 0.0 && self.tol_sign >= 0.0 && self.tol_energy >= 0.0) {
            return bad("tolerances must be nonnegative and tol_residual positive");
        }
        if self.path_points < 3 {
            return bad("path_points must be at least 3");
        }
        if !(self.armijo_factor > 0.0 && self.armijo_factor < 1.0) {
            return bad("armijo_factor must lie in (0, 1)");
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return bad("sufficient_decrease must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        Ok(())
    }
}

/// Seeds of the independent random streams derived from one run seed.
fn stream_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EmbeddingConstants {
    /// `max ||u||_{q+} / ||u||_{1,H,0}`.
    pub c_qplus: f64,
    /// `max ||u||_beta / ||u||_{1,H,0}`.
    pub c_beta: f64,
    pub c3: f64,
    pub c4: f64,
    pub c_eps: f64,
    pub lambda_hat: f64,
}

/// Empirical embedding constants and the threshold `lambda_hat`; independent of `lambda`.
pub fn embedding_constants(
    grid: &Arc<Grid>,
    e: &ExponentData,
    prm: &ProblemParams,
    opts: &SolverOptions,
    seed: u64,
) -> Result<EmbeddingConstants> {
    let b = e.bounds();
    let qp = vec![b.q_plus; grid.len()];
    let samples = opts.embedding_samples.max(1);
    let c_qplus = empirical_embedding_constant(grid, e, &qp, samples, stream_seed(seed, 1))?;
    let c_beta = empirical_embedding_constant(grid, e, e.beta(), samples, stream_seed(seed, 2))?;
    let c3 = c_qplus.powf(b.q_plus);
    let c4 = c_beta.powf(b.beta_minus);
    Ok(EmbeddingConstants {
        c_qplus,
        c_beta,
        c3,
        c4,
        c_eps: young_split_constant(e, prm, opts.epsilon),
        lambda_hat: 1.0 / (b.q_plus * opts.epsilon * c3),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Geometry {
    pub gamma: f64,
    pub eta: f64,
    pub lambda_hat: f64,
    pub constants: EmbeddingConstants,
    /// Smallest energy seen on the sphere `||u|| = gamma`.
    pub min_sphere_energy: f64,
    pub samples: usize,
}

/// `(1/q+ - lambda eps c3) gamma^{q+} - lambda C_eps c4 gamma^{beta-}`.
pub fn minorant(e: &ExponentData, lambda: f64, eps: f64, k: &EmbeddingConstants, gamma: f64) -> f64 {
    let b = e.bounds();
    (1.0 / b.q_plus - lambda * eps * k.c3) * gamma.powf(b.q_plus)
        - lambda * k.c_eps * k.c4 * gamma.powf(b.beta_minus)
}

/// Certifies `I >= eta > 0` on the sphere `||u||_{1,H,0} = gamma`.
pub fn certify_geometry(
    grid: &Arc<Grid>,
    e: &ExponentData,
    prm: &ProblemParams,
    opts: &SolverOptions,
    seed: u64,
) -> Result<Geometry> {
    let k = embedding_constants(grid, e, prm, opts, seed)?;
    certify_with_constants(grid, e, prm, opts, seed, k)
}

pub fn certify_with_constants(
    grid: &Arc<Grid>,
    e: &ExponentData,
    prm: &ProblemParams,
    opts: &SolverOptions,
    seed: u64,
    k: EmbeddingConstants,
) -> Result<Geometry> {
    let b = e.bounds();
    let a = 1.0 / b.q_plus - prm.lambda * opts.epsilon * k.c3;
    let bb = prm.lambda * k.c_eps * k.c4;
    let cap = 0.99 * if k.c_beta > 1.0 { 1.0 / k.c_beta } else { 1.0 };
    let gamma = if a > 0.0 && bb > 0.0 {
        let star = (b.q_plus * a / (b.beta_minus * bb)).powf(1.0 / (b.beta_minus - b.q_plus));
        star.min(cap)
    } else {
        cap
    };
    let eta = minorant(e, prm.lambda, opts.epsilon, &k, gamma);

    let model = EnergyModel::new(grid, e, prm);
    let mut sampler = Sampler::new(grid, stream_seed(seed, 3));
    let mut worst: Option<(f64, GridFunction)> = None;
    for _ in 0..opts.geometry_samples {
        let u = sampler.next_function();
        let n = luxemburg_norm(&u, Modular::Gradient(e))?;
        if n == 0.0 {
            continue;
        }
        let u = u.scaled(gamma / n);
        let en = model.total(u.values(), false);
        if worst.as_ref().is_none_or(|(w, _)| en < *w) {
            worst = Some((en, u));
        }
    }
    let min_sphere_energy = worst.as_ref().map_or(f64::INFINITY, |w| w.0);
    if !(eta > 0.0) || min_sphere_energy < eta {
        let (energy, u) = worst.unwrap_or((f64::NAN, GridFunction::zeros(grid)));
        return Err(Error::Geometry {
            energy,
            eta,
            gamma,
            counterexample: u.into_values(),
        });
    }
    Ok(Geometry {
        gamma,
        eta,
        lambda_hat: k.lambda_hat,
        constants: k,
        min_sphere_energy,
        samples: opts.geometry_samples,
    })
}

pub const MAX_DOUBLINGS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct Endpoint {
    pub t_star: f64,
    pub u_hat: GridFunction,
    /// `(t, I(t phi))` for every scale tried.
    pub trace: Vec<(f64, f64)>,
}

/// Doubles `t` from 1 until `I(t phi) < 0` and `||t phi|| > max(1, gamma)`.
pub fn find_endpoint(model: &EnergyModel, phi: &GridFunction, gamma: f64) -> Result<Endpoint> {
    if phi.is_zero() {
        return Err(Error::InvalidArgument("endpoint search needs phi != 0".into()));
    }
    if phi.interior_min() < 0.0 {
        return Err(Error::InvalidArgument("endpoint search needs phi >= 0".into()));
    }
    let n1 = luxemburg_norm(phi, Modular::Gradient(model.exponents()))?;
    let mut trace = Vec::new();
    let mut t = 1.0f64;
    for step in 0..=MAX_DOUBLINGS {
        if step > 0 {
            t *= 2.0;
        }
        let u = phi.scaled(t);
        let en = model.total(u.values(), false);
        trace.push((t, en));
        if en < 0.0 && t * n1 > gamma.max(1.0) {
            return Ok(Endpoint {
                t_star: t,
                u_hat: u,
                trace,
            });
        }
    }
    Err(Error::Endpoint(MAX_DOUBLINGS))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// `true` during the confirmation steps on the untruncated energy.
    pub confirm: bool,
    /// Path maximum, i.e. the energy of the iterate.
    pub energy: f64,
    pub residual: f64,
    /// `||u||_{1,H,0}`.
    pub norm: f64,
    pub l2_norm: f64,
    /// Energy at the far end of the sampled path.
    pub path_end_energy: f64,
    /// Index of the largest path sample.
    pub max_index: usize,
    /// Accepted Armijo step, 0 for the initial point.
    pub step: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Positivity {
    pub min_node_value: f64,
    /// Quadrature `L^2` norm of `u^-` before clamping.
    pub u_minus_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MountainPassResult {
    #[serde(skip)]
    pub solution: GridFunction,
    pub energy: EnergyBreakdown,
    pub residual_norm: f64,
    pub mp_level_estimate: f64,
    pub eta: f64,
    pub gamma: f64,
    pub endpoint_scale: f64,
    pub iterations: usize,
    pub confirm_iterations: usize,
    #[serde(skip)]
    pub trace: Vec<TraceEntry>,
    pub positivity: Positivity,
    /// `|<I'(u), u^->|` before clamping.
    pub u_minus_test: f64,
    /// Interior nodes with `u <= tol_sign` after clamping.
    pub zero_nodes: usize,
    pub converged: bool,
}

/// Frozen-coefficient operator `x -> D^T (C D x) + S x` on interior nodes.
struct Preconditioner<'a> {
    grid: &'a Grid,
    cell: Vec<f64>,
    diag_s: Vec<f64>,
    jacobi: Vec<f64>,
}

/// Relative floors on `|D u|` and `|u|` in the frozen coefficients.
const COEFFICIENT_FLOOR: f64 = 1e-3;

impl<'a> Preconditioner<'a> {
    fn new(model: &'a EnergyModel, u: &[f64]) -> Self {
        let grid: &Grid = model.grid();
        let e = model.exponents();
        let (p, q, mu) = (e.p(), e.q(), e.mu());
        let cw = grid.cell_weights();
        let mag = grid.gradient_magnitude(u, Stencil::Forward);
        let mfloor = COEFFICIENT_FLOOR * mag.iter().fold(0.0f64, |a, &b| a.max(b));
        let cell: Vec<f64> = (0..u.len())
            .map(|k| {
                if cw[k] == 0.0 {
                    return 0.0;
                }
                let m = mag[k].max(mfloor).max(f64::MIN_POSITIVE);
                cw[k] * (m.powf(p[k] - 2.0) + mu[k] * m.powf(q[k] - 2.0))
            })
            .collect();
        let (sp, sq) = model.singular_coefficients();
        let ufloor = COEFFICIENT_FLOOR * u.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let diag_s: Vec<f64> = (0..u.len())
            .map(|k| {
                let a = u[k].abs().max(ufloor).max(f64::MIN_POSITIVE);
                sp[k] * a.powf(p[k] - 2.0) + sq[k] * a.powf(q[k] - 2.0)
            })
            .collect();
        let n = grid.nodes_per_axis();
        let dim = grid.dim();
        let mut jacobi = diag_s.clone();
        let mut stride = 1;
        let mut strides = vec![0; dim];
        for a in (0..dim).rev() {
            strides[a] = stride;
            stride *= n;
        }
        for k in 0..u.len() {
            if cell[k] == 0.0 {
                continue;
            }
            for a in 0..dim {
                let s = strides[a];
                if (k / s) % n < n - 1 {
                    let c = cell[k] / (grid.spacing()[a] * grid.spacing()[a]);
                    jacobi[k] += c;
                    jacobi[k + s] += c;
                }
            }
        }
        for (k, j) in jacobi.iter_mut().enumerate() {
            if grid.is_boundary(k) || *j <= 0.0 {
                *j = 1.0;
            }
        }
        Preconditioner {
            grid,
            cell,
            diag_s,
            jacobi,
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let dim = self.grid.dim();
        let mut flux = self.grid.gradient(x, Stencil::Forward);
        for (k, xi) in flux.chunks_mut(dim).enumerate() {
            for c in xi.iter_mut() {
                *c *= self.cell[k];
            }
        }
        let mut y = self.grid.forward_gradient_adjoint(&flux);
        for k in 0..y.len() {
            y[k] += self.diag_s[k] * x[k];
        }
        self.grid.apply_mask(&mut y);
        y
    }

    /// Jacobi-preconditioned conjugate gradients from zero.
    fn solve(&self, b: &[f64], rel_tol: f64, max_iter: usize) -> Vec<f64> {
        let dot = |a: &[f64], b: &[f64]| kahan_sum(a.iter().zip(b).map(|(x, y)| x * y));
        let n = b.len();
        let mut x = vec![0.0; n];
        let mut r = b.to_vec();
        self.grid.apply_mask(&mut r);
        let mut z: Vec<f64> = r.iter().zip(&self.jacobi).map(|(a, d)| a / d).collect();
        let mut pdir = z.clone();
        let mut rz = dot(&r, &z);
        let r0 = dot(&r, &r).sqrt();
        if r0 == 0.0 {
            return x;
        }
        for _ in 0..max_iter {
            let ap = self.apply(&pdir);
            let pap = dot(&pdir, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for k in 0..n {
                x[k] += alpha * pdir[k];
                r[k] -= alpha * ap[k];
            }
            if dot(&r, &r).sqrt() <= rel_tol * r0 {
                break;
            }
            for k in 0..n {
                z[k] = r[k] / self.jacobi[k];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..n {
                pdir[k] = z[k] + beta * pdir[k];
            }
        }
        x
    }
}

const CG_TOL: f64 = 1e-6;
const CG_MAX_ITER: usize = 2000;
const MIN_STEP: f64 = 1e-14;

/// Maximizer of `t -> I(t v)` on one path.
struct RayMax {
    u: Vec<f64>,
    energy: f64,
    path_end_energy: f64,
    max_index: usize,
}

struct Driver<'a> {
    model: &'a EnergyModel,
    opts: &'a SolverOptions,
    truncated: bool,
}

impl Driver<'_> {
    fn energy(&self, v: &[f64]) -> f64 {
        self.model.total(v, self.truncated)
    }

    fn slope(&self, v: &[f64], s: f64) -> f64 {
        let sv: Vec<f64> = v.iter().map(|x| s * x).collect();
        let d = self.model.derivative(&sv, self.truncated);
        kahan_sum(d.iter().zip(v).map(|(a, b)| a * b))
    }

    /// Samples the path `t v`, `t in [0, T]`, with `T` doubled from `t_end` until
    /// the far end has negative energy, then refines the maximizer.
    fn ray_max(&self, v: &[f64], t_end: f64) -> Result<RayMax> {
        let mut t_end = t_end;
        let mut end_energy = self.energy(&scale(v, t_end));
        let mut doublings = 0;
        while !(end_energy < 0.0) {
            doublings += 1;
            if doublings > MAX_DOUBLINGS {
                return Err(Error::Endpoint(MAX_DOUBLINGS));
            }
            t_end *= 2.0;
            end_energy = self.energy(&scale(v, t_end));
        }
        let m = self.opts.path_points;
        let ts: Vec<f64> = (0..m).map(|i| t_end * i as f64 / (m - 1) as f64).collect();
        let mut best = (0usize, 0.0f64);
        for (i, &t) in ts.iter().enumerate().skip(1).take(m - 2) {
            let en = self.energy(&scale(v, t));
            if en > best.1 {
                best = (i, en);
            }
        }
        let i = best.0;
        let (lo, hi) = if i == 0 { (0.0, ts[1]) } else { (ts[i - 1], ts[i + 1]) };
        let s = self.refine(v, lo, hi);
        let u = scale(v, s);
        let mut energy = self.energy(&u);
        let mut u = u;
        if energy < best.1 {
            u = scale(v, ts[i]);
            energy = best.1;
        }
        Ok(RayMax {
            u,
            energy,
            path_end_energy: end_energy,
            max_index: i,
        })
    }

    /// Root of the path slope in `[lo, hi]` by the Illinois variant of regula falsi.
    fn refine(&self, v: &[f64], lo: f64, hi: f64) -> f64 {
        let (mut a, mut b) = (lo, hi);
        let mut fa = if a == 0.0 { f64::INFINITY } else { self.slope(v, a) };
        let mut fb = self.slope(v, b);
        if fa <= 0.0 {
            return a;
        }
        if fb >= 0.0 {
            return b;
        }
        let mut side = 0i8;
        for _ in 0..200 {
            let c = if fa.is_finite() {
                (a * fb - b * fa) / (fb - fa)
            } else {
                0.5 * (a + b)
            };
            let c = if c > a && c < b { c } else { 0.5 * (a + b) };
            let fc = self.slope(v, c);
            if fc == 0.0 {
                return c;
            }
            if fc > 0.0 {
                a = c;
                fa = fc;
                if side == 1 {
                    fb *= 0.5;
                }
                side = 1;
            } else {
                b = c;
                fb = fc;
                if side == -1 && fa.is_finite() {
                    fa *= 0.5;
                }
                side = -1;
            }
            if b - a <= 4.0 * f64::EPSILON * b {
                break;
            }
        }
        if fa.is_finite() && fa.abs() < fb.abs() {
            a
        } else {
            b
        }
    }

    fn entry(&self, iteration: usize, r: &RayMax, step: f64) -> Result<(TraceEntry, Vec<f64>)> {
        let d = self.model.derivative(&r.u, self.truncated);
        let g = self.model.riesz_from_derivative(d.clone());
        let u = GridFunction::new(self.model.grid(), r.u.clone())?;
        Ok((
            TraceEntry {
                iteration,
                confirm: !self.truncated,
                energy: r.energy,
                residual: g.l2_norm(),
                norm: luxemburg_norm(&u, Modular::Gradient(self.model.exponents()))?,
                l2_norm: u.l2_norm(),
                path_end_energy: r.path_end_energy,
                max_index: r.max_index,
                step,
            },
            d,
        ))
    }

    /// Runs descent steps until the residual drops to `tol_residual`, `limit`
    /// steps are taken or no step is accepted.
    fn descend(
        &self,
        start: RayMax,
        first_iteration: usize,
        limit: usize,
        trace: &mut Vec<TraceEntry>,
    ) -> Result<(RayMax, usize)> {
        let mut cur = start;
        let (entry, mut d) = self.entry(first_iteration, &cur, 0.0)?;
        trace.push(entry);
        let mut residual = entry.residual;
        let mut steps = 0;
        while residual > self.opts.tol_residual && steps < limit {
            let pre = Preconditioner::new(self.model, &cur.u);
            let rhs: Vec<f64> = d.iter().map(|x| -x).collect();
            let dir = pre.solve(&rhs, CG_TOL, CG_MAX_ITER);
            let slope = kahan_sum(d.iter().zip(&dir).map(|(a, b)| a * b));
            if !(slope < 0.0) {
                break;
            }
            let mut tau = 1.0;
            let mut accepted = None;
            while tau >= MIN_STEP {
                let trial: Vec<f64> = cur.u.iter().zip(&dir).map(|(u, d)| u + tau * d).collect();
                if let Ok(r) = self.ray_max(&trial, 2.0) {
                    if r.energy <= cur.energy + self.opts.sufficient_decrease * tau * slope {
                        accepted = Some(r);
                        break;
                    }
                }
                tau *= self.opts.armijo_factor;
            }
            let Some(next) = accepted else { break };
            steps += 1;
            cur = next;
            let (entry, dn) = self.entry(first_iteration + steps, &cur, tau)?;
            trace.push(entry);
            residual = entry.residual;
            d = dn;
        }
        Ok((cur, steps))
    }
}

fn scale(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| s * x).collect()
}

/// Runs the path descent from the endpoint `u_hat`, clamps the negative part and
/// confirms the residual on the untruncated energy.
pub fn mountain_pass_solve(
    model: &EnergyModel,
    geometry: &Geometry,
    endpoint: &Endpoint,
    opts: &SolverOptions,
) -> Result<MountainPassResult> {
    opts.validate()?;
    let grid = model.grid();
    let mut trace = Vec::new();
    let driver = Driver {
        model,
        opts,
        truncated: true,
    };
    let start = driver.ray_max(endpoint.u_hat.values(), 1.0)?;
    let (found, iterations) = driver.descend(start, 0, opts.max_iters, &mut trace)?;

    let pre = GridFunction::new(grid, found.u.clone())?;
    let minus = pre.negative_part();
    let u_minus_norm = minus.l2_norm();
    let d = model.derivative(pre.values(), false);
    let u_minus_test = kahan_sum(d.iter().zip(minus.values()).map(|(a, b)| a * b)).abs();
    if u_minus_norm > opts.tol_sign {
        return Err(Error::ClampRejected(u_minus_norm));
    }
    let clamped: Vec<f64> = pre.values().iter().map(|&v| v.max(0.0)).collect();

    let confirm = Driver {
        model,
        opts,
        truncated: false,
    };
    let energy = model.total(&clamped, false);
    let start = RayMax {
        u: clamped,
        energy,
        path_end_energy: f64::NAN,
        max_index: 0,
    };
    let (fin, confirm_iterations) = confirm.descend(start, iterations + 1, opts.confirm_steps, &mut trace)?;
    let last = *trace.last().expect("trace is nonempty");
    let solution = GridFunction::new(grid, fin.u)?;
    let breakdown = model.energy(solution.values(), false);
    let min_node_value = solution.interior_min();
    let zero_nodes = (0..grid.len())
        .filter(|&k| !grid.is_boundary(k) && grid.weights()[k] > 0.0 && solution.values()[k] <= opts.tol_sign)
        .count();
    let converged = last.residual <= opts.tol_residual
        && breakdown.total >= geometry.eta - opts.tol_energy
        && breakdown.total > 0.0
        && min_node_value >= -opts.tol_sign;
    Ok(MountainPassResult {
        solution,
        energy: breakdown,
        residual_norm: last.residual,
        mp_level_estimate: breakdown.total,
        eta: geometry.eta,
        gamma: geometry.gamma,
        endpoint_scale: endpoint.t_star,
        iterations,
        confirm_iterations,
        trace,
        positivity: Positivity {
            min_node_value,
            u_minus_norm,
        },
        u_minus_test,
        zero_nodes,
        converged,
    })
}

/// Geometry, endpoint and path descent in one call, starting from the sine bump.
pub fn solve(
    grid: &Arc<Grid>,
    e: &ExponentData,
    prm: &ProblemParams,
    opts: &SolverOptions,
    seed: u64,
) -> Result<(Geometry, MountainPassResult)> {
    let geometry = certify_geometry(grid, e, prm, opts, seed)?;
    solve_with_geometry(grid, e, prm, opts, geometry)
}

pub fn solve_with_geometry(
    grid: &Arc<Grid>,
    e: &ExponentData,
    prm: &ProblemParams,
    opts: &SolverOptions,
    geometry: Geometry,
) -> Result<(Geometry, MountainPassResult)> {
    let model = EnergyModel::new(grid, e, prm);
    let endpoint = find_endpoint(&model, &sine_bump(grid), geometry.gamma)?;
    let result = mountain_pass_solve(&model, &geometry, &endpoint, opts)?;
    Ok((geometry, result))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PsReport {
    pub holds: bool,
    /// `max` of the energies along the trace.
    pub c0: f64,
    pub max_norm: f64,
    /// Smallest `rhs - lhs` of the coercivity bound.
    pub min_slack: f64,
    /// Trace positions where the bound fails.
    pub violations: Vec<usize>,
}

/// Checks `(1/q+ - 1/theta) ||u||^kappa <= c0 + (1/theta) ||u||_{L^2} residual` along
/// the trace, with `c0` the largest recorded energy and `kappa = p-` if
/// `||u||_{1,H,0} >= 1`, `q+` otherwise.
pub fn ps_monitor(trace: &[TraceEntry], p_minus: f64, q_plus: f64, theta: f64) -> PsReport {
    let c0 = trace.iter().map(|t| t.energy).fold(0.0f64, f64::max);
    let mut min_slack = f64::INFINITY;
    let mut max_norm = 0.0f64;
    let mut violations = Vec::new();
    for (i, t) in trace.iter().enumerate() {
        max_norm = max_norm.max(t.norm);
        let kappa = if t.norm >= 1.0 { p_minus } else { q_plus };
        let lhs = (1.0 / q_plus - 1.0 / theta) * t.norm.powf(kappa);
        let rhs = c0 + t.l2_norm * t.residual / theta;
        let slack = rhs - lhs;
        min_slack = min_slack.min(slack);
        if !(slack >= -1e-12 * rhs.abs().max(1.0)) {
            violations.push(i);
        }
    }
    PsReport {
        holds: violations.is_empty() && max_norm.is_finite(),
        c0,
        max_norm,
        min_slack,
        violations,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub converged: bool,
    pub energy: Option<f64>,
    pub norm: Option<f64>,
    pub residual: Option<f64>,
    pub eta: Option<f64>,
    pub error: Option<String>,
}

/// Independent runs for each `lambda` with the same seed; failures are recorded.
pub fn sweep_lambda(
    grid: &Arc<Grid>,
    e: &ExponentData,
    prm: &ProblemParams,
    opts: &SolverOptions,
    lambdas: &[f64],
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidArgument("lambda list is empty".into()));
    }
    let k = embedding_constants(grid, e, prm, opts, seed)?;
    let rows = lambdas
        .iter()
        .map(|&lambda| {
            let mut p = prm.clone();
            p.lambda = lambda;
            let run = certify_with_constants(grid, e, &p, opts, seed, k)
                .and_then(|g| solve_with_geometry(grid, e, &p, opts, g));
            match run {
                Ok((g, r)) => SweepRow {
                    lambda,
                    converged: r.converged,
                    energy: Some(r.energy.total),
                    norm: r.trace.last().map(|t| t.norm),
                    residual: Some(r.residual_norm),
                    eta: Some(g.eta),
                    error: None,
                },
                Err(err) => SweepRow {
                    lambda,
                    converged: false,
                    energy: None,
                    norm: None,
                    residual: None,
                    eta: None,
                    error: Some(err.to_string()),
                },
            }
        })
        .collect();
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::Nonlinearity;

    fn small() -> (Arc<Grid>, ExponentData) {
        let g = Arc::new(Grid::new(3, &[(-1.0, 1.0); 3], 7).unwrap());
        let e = ExponentData::constant(&g, 1.5, 1.8, 2.2, 1.0).unwrap();
        (g, e)
    }

    fn opts() -> SolverOptions {
        SolverOptions {
            embedding_samples: 40,
            geometry_samples: 40,
            ..SolverOptions::default()
        }
    }

    #[test]
    fn geometry_without_nonlinearity() {
        let (g, e) = small();
        let prm = ProblemParams::new(&g, &e, 0.0, 0.3, Nonlinearity::PurePower);
        let geo = certify_geometry(&g, &e, &prm, &opts(), 1).unwrap();
        assert!(geo.eta > 0.0 && geo.gamma < 1.0);
        assert!(geo.min_sphere_energy >= geo.eta);
    }

    #[test]
    fn large_lambda_breaks_geometry() {
        let (g, e) = small();
        let prm = ProblemParams::new(&g, &e, 0.0, 0.3, Nonlinearity::PurePower);
        let k = embedding_constants(&g, &e, &prm, &opts(), 1).unwrap();
        let mut big = prm.clone();
        big.lambda = 10.0 * k.lambda_hat;
        match certify_with_constants(&g, &e, &big, &opts(), 1, k) {
            Err(Error::Geometry { eta, counterexample, .. }) => {
                assert!(eta <= 0.0);
                assert_eq!(counterexample.len(), g.len());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn endpoint_needs_nonlinearity() {
        let (g, e) = small();
        let prm = ProblemParams::new(&g, &e, 0.0, 0.3, Nonlinearity::PurePower);
        let model = EnergyModel::new(&g, &e, &prm);
        assert!(matches!(
            find_endpoint(&model, &sine_bump(&g), 0.5),
            Err(Error::Endpoint(MAX_DOUBLINGS))
        ));
        let prm = ProblemParams::new(&g, &e, 0.5, 0.3, Nonlinearity::PurePower);
        let model = EnergyModel::new(&g, &e, &prm);
        let ep = find_endpoint(&model, &sine_bump(&g), 0.5).unwrap();
        assert!(ep.trace.last().unwrap().1 < 0.0);
        assert!(ep.trace.windows(2).all(|w| w[1].0 == 2.0 * w[0].0));
    }

    #[test]
    fn zero_is_a_critical_point() {
        let (g, e) = small();
        let prm = ProblemParams::new(&g, &e, 1.0, 0.3, Nonlinearity::PurePower);
        let model = EnergyModel::new(&g, &e, &prm);
        assert!(model.riesz_gradient(&vec![0.0; g.len()], true).is_zero());
    }

    #[test]
    fn small_grid_solve_converges() {
        let (g, e) = small();
        let prm0 = ProblemParams::new(&g, &e, 0.0, 0.3, Nonlinearity::PurePower);
        let k = embedding_constants(&g, &e, &prm0, &opts(), 5).unwrap();
        let mut prm = prm0;
        prm.lambda = 0.5 * k.lambda_hat;
        let geo = certify_with_constants(&g, &e, &prm, &opts(), 5, k).unwrap();
        let (_, r) = solve_with_geometry(&g, &e, &prm, &opts(), geo.clone()).unwrap();
        assert!(r.converged, "{r:?}");
        assert!(r.energy.total >= geo.eta);
        let main: Vec<f64> = r.trace.iter().filter(|t| !t.confirm).map(|t| t.energy).collect();
        assert!(main.windows(2).all(|w| w[1] <= w[0]));
        assert!(ps_monitor(&r.trace, 1.5, 1.8, prm.theta).holds);
    }

    #[test]
    fn ps_monitor_flags_divergence() {
        let entry = |norm: f64, energy: f64| TraceEntry {
            iteration: 0,
            confirm: false,
            energy,
            residual: 0.0,
            norm,
            l2_norm: 0.0,
            path_end_energy: -1.0,
            max_index: 1,
            step: 1.0,
        };
        let zero = vec![entry(0.0, 0.0); 3];
        assert!(ps_monitor(&zero, 1.5, 1.8, 2.2).holds);
        let diverging: Vec<TraceEntry> = (0..5).map(|k| entry(10f64.powi(k), 1.0)).collect();
        let r = ps_monitor(&diverging, 1.5, 1.8, 2.2);
        assert!(!r.holds);
        assert!(!r.violations.is_empty());
    }
}
