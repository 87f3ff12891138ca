//! Tensor-product box grids, nodal quadrature and difference operators.
//!
//! Nodes are stored in lexicographic order of their multi-index, axis 0 slowest.
//! Two lattices are used:
//!
//! * `Vertex`: `n` nodes per axis spanning `[a, b]` with spacing `(b - a) / (n - 1)`
//!   and tensor trapezoid weights.
//! * `Shifted`: the vertex lattice moved by half a spacing, so the first `n - 1`
//!   nodes sit at cell centres of `[a, b]` (midpoint weights) and the last node lies
//!   half a cell outside the box with zero weight.
//!
//! The shifted lattice is chosen when the origin is interior to the box and the
//! shift moves the closest node further away from it. The singular weights
//! `|x|^{-alpha p(x)}` are then never sampled at the origin.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Vertex,
    Shifted,
}

/// Difference stencil used by [`Grid::gradient`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// Central differences inside, one-sided at the first and last node of each axis.
    Central,
    /// Forward differences, backward at the last node of each axis. This is the
    /// stencil the energy functional is assembled with.
    Forward,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    extents: Vec<(f64, f64)>,
    nodes_per_axis: usize,
    spacing: Vec<f64>,
    first: Vec<f64>,
    layout: Layout,
    strides: Vec<usize>,
    boundary: Vec<bool>,
    weights: Vec<f64>,
    cell_weights: Vec<f64>,
}

fn axis_weights(n: usize, h: f64, layout: Layout) -> Vec<f64> {
    (0..n)
        .map(|k| match layout {
            Layout::Vertex if k == 0 || k == n - 1 => 0.5 * h,
            Layout::Vertex => h,
            Layout::Shifted if k == n - 1 => 0.0,
            Layout::Shifted => h,
        })
        .collect()
}

fn closest_to_origin(first: &[f64], spacing: &[f64], n: usize) -> f64 {
    first
        .iter()
        .zip(spacing)
        .map(|(&a, &h)| {
            (0..n)
                .map(|k| (a + k as f64 * h).abs())
                .fold(f64::INFINITY, f64::min)
                .powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

impl Grid {
    /// Builds a grid on the box `extents` with `nodes_per_axis` nodes on every axis.
    pub fn new(dim: usize, extents: &[(f64, f64)], nodes_per_axis: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Dimension(dim));
        }
        if extents.len() != dim {
            return Err(Error::Length {
                expected: dim,
                got: extents.len(),
            });
        }
        for (axis, &(lo, hi)) in extents.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::DegenerateExtent { axis, lo, hi });
            }
        }
        if nodes_per_axis < 3 {
            return Err(Error::TooFewNodes(nodes_per_axis));
        }
        let n = nodes_per_axis;
        let spacing: Vec<f64> = extents
            .iter()
            .map(|&(lo, hi)| (hi - lo) / (n - 1) as f64)
            .collect();
        let vertex_first: Vec<f64> = extents.iter().map(|e| e.0).collect();
        let shifted_first: Vec<f64> = extents
            .iter()
            .zip(&spacing)
            .map(|(e, h)| e.0 + 0.5 * h)
            .collect();

        let origin_inside = extents.iter().all(|&(lo, hi)| lo < 0.0 && 0.0 < hi);
        let layout = if origin_inside
            && closest_to_origin(&shifted_first, &spacing, n)
                > closest_to_origin(&vertex_first, &spacing, n)
        {
            Layout::Shifted
        } else {
            Layout::Vertex
        };
        let first = match layout {
            Layout::Vertex => vertex_first,
            Layout::Shifted => shifted_first,
        };

        let mut strides = vec![1usize; dim];
        for axis in (0..dim - 1).rev() {
            strides[axis] = strides[axis + 1] * n;
        }
        let total = n.pow(dim as u32);

        let node_w: Vec<Vec<f64>> = spacing.iter().map(|&h| axis_weights(n, h, layout)).collect();
        let cell_w: Vec<Vec<f64>> = spacing
            .iter()
            .map(|&h| axis_weights(n, h, Layout::Shifted))
            .collect();

        let mut boundary = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        let mut cell_weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            boundary.push(idx.iter().any(|&k| k == 0 || k == n - 1));
            weights.push(idx.iter().enumerate().map(|(a, &k)| node_w[a][k]).product());
            cell_weights.push(idx.iter().enumerate().map(|(a, &k)| cell_w[a][k]).product());
            increment(&mut idx, n);
        }

        Ok(Grid {
            dim,
            extents: extents.to_vec(),
            nodes_per_axis: n,
            spacing,
            first,
            layout,
            strides,
            boundary,
            weights,
            cell_weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[(f64, f64)] {
        &self.extents
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes_per_axis
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Lebesgue measure of the box.
    pub fn measure(&self) -> f64 {
        self.extents.iter().map(|(lo, hi)| hi - lo).product()
    }

    /// Smallest spacing over all axes.
    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    /// Nodal quadrature weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weights attached to the forward-difference cell anchored at each node.
    pub fn cell_weights(&self) -> &[f64] {
        &self.cell_weights
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        let mut rest = node;
        self.strides
            .iter()
            .map(|&s| {
                let k = rest / s;
                rest %= s;
                k
            })
            .collect()
    }

    pub fn coord(&self, node: usize, axis: usize) -> f64 {
        let k = (node / self.strides[axis]) % self.nodes_per_axis;
        self.first[axis] + k as f64 * self.spacing[axis]
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        (0..self.dim).map(|a| self.coord(node, a)).collect()
    }

    /// Euclidean distance of a node from the origin.
    pub fn radius(&self, node: usize) -> f64 {
        (0..self.dim)
            .map(|a| self.coord(node, a).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Node closest to the origin among non-boundary nodes (lowest index on ties).
    pub fn node_nearest_origin(&self) -> usize {
        let mut best = (f64::INFINITY, 0);
        for node in 0..self.len() {
            if self.boundary[node] {
                continue;
            }
            let r = self.radius(node);
            if r < best.0 {
                best = (r, node);
            }
        }
        best.1
    }

    /// Quadrature `sum_k w_k f_k` with compensated summation.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.len());
        crate::modular::kahan_sum(self.weights.iter().zip(f).map(|(w, v)| w * v))
    }

    /// Zeroes every boundary node.
    pub fn apply_mask(&self, values: &mut [f64]) {
        for (v, &b) in values.iter_mut().zip(&self.boundary) {
            if b {
                *v = 0.0;
            }
        }
    }

    /// Samples `f(x)` at every node.
    pub fn sample<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        (0..self.len())
            .map(|node| {
                for (a, xa) in x.iter_mut().enumerate() {
                    *xa = self.coord(node, a);
                }
                f(&x)
            })
            .collect()
    }

    /// Discrete gradient, node-major: entry `node * dim + axis`.
    pub fn gradient(&self, values: &[f64], stencil: Stencil) -> Vec<f64> {
        let n = self.nodes_per_axis;
        let mut out = vec![0.0; self.len() * self.dim];
        for node in 0..self.len() {
            for axis in 0..self.dim {
                let s = self.strides[axis];
                let h = self.spacing[axis];
                let k = (node / s) % n;
                out[node * self.dim + axis] = match stencil {
                    Stencil::Central if k > 0 && k < n - 1 => {
                        (values[node + s] - values[node - s]) / (2.0 * h)
                    }
                    _ if k < n - 1 => (values[node + s] - values[node]) / h,
                    _ => (values[node] - values[node - s]) / h,
                };
            }
        }
        out
    }

    /// Adjoint of the forward-stencil gradient: returns `D^T flux` so that
    /// `<D u, flux> = <u, D^T flux>` in the Euclidean pairing.
    pub fn forward_gradient_adjoint(&self, flux: &[f64]) -> Vec<f64> {
        let n = self.nodes_per_axis;
        let mut out = vec![0.0; self.len()];
        for node in 0..self.len() {
            for axis in 0..self.dim {
                let s = self.strides[axis];
                let j = flux[node * self.dim + axis] / self.spacing[axis];
                if j == 0.0 {
                    continue;
                }
                let k = (node / s) % n;
                if k < n - 1 {
                    out[node + s] += j;
                    out[node] -= j;
                } else {
                    out[node] += j;
                    out[node - s] -= j;
                }
            }
        }
        out
    }

    /// Euclidean norm of the gradient at every node.
    pub fn gradient_magnitude(&self, values: &[f64], stencil: Stencil) -> Vec<f64> {
        self.gradient(values, stencil)
            .chunks(self.dim)
            .map(|g| g.iter().map(|c| c * c).sum::<f64>().sqrt())
            .collect()
    }
}

fn increment(idx: &mut [usize], n: usize) {
    for k in idx.iter_mut().rev() {
        *k += 1;
        if *k < n {
            return;
        }
        *k = 0;
    }
}

/// Nodal values on a grid, zero on every boundary node.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl GridFunction {
    /// Wraps `values`, zeroing boundary nodes.
    pub fn new(grid: &Arc<Grid>, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Length {
                expected: grid.len(),
                got: values.len(),
            });
        }
        grid.apply_mask(&mut values);
        Ok(GridFunction {
            grid: Arc::clone(grid),
            values,
        })
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        GridFunction {
            grid: Arc::clone(grid),
            values: vec![0.0; grid.len()],
        }
    }

    /// Samples `f` at the nodes and applies the boundary mask.
    pub fn from_fn<F: FnMut(&[f64]) -> f64>(grid: &Arc<Grid>, f: F) -> Self {
        let mut values = grid.sample(f);
        grid.apply_mask(&mut values);
        GridFunction {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn scaled(&self, c: f64) -> Self {
        GridFunction {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &GridFunction) -> Self {
        GridFunction {
            grid: Arc::clone(&self.grid),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + c * b)
                .collect(),
        }
    }

    /// Quadrature inner product with `other`.
    pub fn dot(&self, other: &GridFunction) -> f64 {
        crate::modular::kahan_sum(
            self.grid
                .weights()
                .iter()
                .zip(self.values.iter().zip(&other.values))
                .map(|(w, (a, b))| w * a * b),
        )
    }

    /// Norm induced by the quadrature inner product.
    pub fn l2_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Smallest value over non-boundary nodes.
    pub fn interior_min(&self) -> f64 {
        self.values
            .iter()
            .zip(self.grid.boundary_mask())
            .filter(|(_, &b)| !b)
            .map(|(&v, _)| v)
            .fold(f64::INFINITY, f64::min)
    }

    /// Negative part `max(-u, 0)`.
    pub fn negative_part(&self) -> Self {
        GridFunction {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|&v| (-v).max(0.0)).collect(),
        }
    }

    /// Discrete gradient with the central stencil.
    pub fn gradient(&self) -> Vec<f64> {
        self.grid.gradient(&self.values, Stencil::Central)
    }

    /// One row per node: index, coordinates, value.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write_node_csv(&self.grid, &[("value", &self.values)], &mut out)
    }
}

/// Writes nodal columns as CSV: `index,x1,...,xN,<names...>`.
pub fn write_node_csv<W: Write>(
    grid: &Grid,
    columns: &[(&str, &[f64])],
    out: &mut W,
) -> std::io::Result<()> {
    let mut header = vec!["index".to_string()];
    header.extend((1..=grid.dim()).map(|a| format!("x{a}")));
    header.extend(columns.iter().map(|(name, _)| name.to_string()));
    writeln!(out, "{}", header.join(","))?;
    for node in 0..grid.len() {
        write!(out, "{node}")?;
        for a in 0..grid.dim() {
            write!(out, ",{}", grid.coord(node, a))?;
        }
        for (_, col) in columns {
            write!(out, ",{}", col[node])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(lo: f64, hi: f64, n: usize) -> Grid {
        Grid::new(2, &[(lo, hi), (lo, hi)], n).unwrap()
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Grid::new(1, &[(0.0, 1.0)], 5), Err(Error::Dimension(1))));
        assert!(matches!(
            Grid::new(2, &[(0.0, 1.0), (1.0, 1.0)], 5),
            Err(Error::DegenerateExtent { axis: 1, .. })
        ));
        assert!(matches!(
            Grid::new(2, &[(0.0, 1.0), (0.0, 1.0)], 2),
            Err(Error::TooFewNodes(2))
        ));
    }

    #[test]
    fn counts_boundary_nodes() {
        let g = square(-1.0, 1.0, 5);
        assert_eq!(g.len(), 25);
        assert_eq!(g.boundary_mask().iter().filter(|&&b| b).count(), 16);
    }

    #[test]
    fn total_weight_is_measure() {
        for (lo, hi, n) in [(-1.0, 1.0, 33), (0.0, 1.0, 33), (-1.0, 1.0, 8), (-0.3, 2.0, 7)] {
            let g = square(lo, hi, n);
            let total: f64 = g.weights().iter().sum();
            assert!((total - g.measure()).abs() <= 1e-12 * g.measure(), "{total}");
            let cells: f64 = g.cell_weights().iter().sum();
            assert!((cells - g.measure()).abs() <= 1e-12 * g.measure());
        }
    }

    #[test]
    fn origin_is_never_a_node() {
        for n in 3..12 {
            let g = Grid::new(3, &[(-1.0, 1.0); 3], n).unwrap();
            let h = g.min_spacing();
            for node in 0..g.len() {
                assert!(g.radius(node) >= 0.5 * h - 1e-15, "n={n} node={node}");
            }
        }
        // odd counts on a symmetric box need the shift, even counts do not
        assert_eq!(square(-1.0, 1.0, 5).layout(), Layout::Shifted);
        assert_eq!(square(-1.0, 1.0, 6).layout(), Layout::Vertex);
        assert_eq!(square(0.0, 1.0, 5).layout(), Layout::Vertex);
    }

    #[test]
    fn integrates_constants_and_linears() {
        let g = square(0.0, 1.0, 33);
        assert_eq!(g.integrate(&vec![1.0; g.len()]), 1.0);
        assert_eq!(g.integrate(&vec![0.0; g.len()]), 0.0);
        let x1 = g.sample(|x| x[0]);
        assert!((g.integrate(&x1) - 0.5).abs() < 1e-10);
    }

    #[test]
    fn multilinear_quadrature_is_exact() {
        // exact integral of (1 + x)(2 - y) over [a, b]^2
        for (lo, hi, n) in [(0.0, 1.0, 9), (-1.0, 1.0, 9), (-1.0, 2.0, 6)] {
            let g = square(lo, hi, n);
            let f = g.sample(|x| (1.0 + x[0]) * (2.0 - x[1]));
            let ix = (hi - lo) + 0.5 * (hi * hi - lo * lo);
            let iy = 2.0 * (hi - lo) - 0.5 * (hi * hi - lo * lo);
            let exact = ix * iy;
            assert!((g.integrate(&f) - exact).abs() <= 1e-10 * exact.abs());
        }
    }

    #[test]
    fn gradient_of_linear_is_exact() {
        let g = square(-1.0, 1.0, 9);
        let u = g.sample(|x| x[0]);
        for stencil in [Stencil::Central, Stencil::Forward] {
            let d = g.gradient(&u, stencil);
            for node in 0..g.len() {
                assert!((d[2 * node] - 1.0).abs() < 1e-12);
                assert!(d[2 * node + 1].abs() < 1e-12);
            }
        }
        let zero = g.gradient(&vec![0.0; g.len()], Stencil::Central);
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn central_gradient_is_second_order() {
        // x^2 is differentiated exactly by central differences, so the Richardson
        // ratio is measured on x^3, whose central error is exactly h^2
        let g = Grid::new(2, &[(0.0, 1.0), (0.0, 1.0)], 11).unwrap();
        let u = g.sample(|x| x[0] * x[0]);
        let d = g.gradient(&u, Stencil::Central);
        for k in (0..g.len()).filter(|&k| !g.is_boundary(k)) {
            assert!((d[2 * k] - 2.0 * g.coord(k, 0)).abs() < 1e-12);
        }
        let max_err = |n: usize| {
            let g = Grid::new(2, &[(0.0, 1.0), (0.0, 1.0)], n).unwrap();
            let u = g.sample(|x| x[0] * x[0] * x[0]);
            let d = g.gradient(&u, Stencil::Central);
            (0..g.len())
                .filter(|&k| !g.is_boundary(k))
                .map(|k| (d[2 * k] - 3.0 * g.coord(k, 0).powi(2)).abs())
                .fold(0.0, f64::max)
        };
        let ratio = max_err(11) / max_err(21);
        assert!((ratio - 4.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn forward_adjoint_matches_pairing() {
        let g = Grid::new(3, &[(-1.0, 1.0), (0.0, 2.0), (-0.5, 0.5)], 5).unwrap();
        let u = g.sample(|x| (3.0 * x[0]).sin() + x[1] * x[2]);
        let flux = (0..g.len() * 3).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect::<Vec<_>>();
        let du = g.gradient(&u, Stencil::Forward);
        let lhs: f64 = du.iter().zip(&flux).map(|(a, b)| a * b).sum();
        let dt = g.forward_gradient_adjoint(&flux);
        let rhs: f64 = u.iter().zip(&dt).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn masking_is_idempotent() {
        let g = Arc::new(square(-1.0, 1.0, 7));
        let u = GridFunction::from_fn(&g, |x| 1.0 + x[0]);
        let mut twice = u.values().to_vec();
        g.apply_mask(&mut twice);
        assert_eq!(twice, u.values());
        assert!(u
            .values()
            .iter()
            .zip(g.boundary_mask())
            .all(|(&v, &b)| !b || v == 0.0));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let g = Arc::new(square(0.0, 1.0, 3));
        let u = GridFunction::zeros(&g);
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "index,x1,x2,value");
        assert_eq!(lines.len(), 10);
        assert_eq!(lines[1], "0,0,0,0");
    }
}
