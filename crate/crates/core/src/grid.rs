//! Uniform periodic grids on the unit torus and second-order stencils.
//!
//! All first derivatives are centered differences. The advection operator
//! `w . grad` and the flux-form divergence `div(m w)` are built from the same
//! centered difference, so the assembled Fokker-Planck matrix
//! `-lap - div(. w)` is exactly the transpose of `-lap + w . grad`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsolve::SparseOperator;

pub const MIN_POINTS_PER_AXIS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodicGrid {
    dim: usize,
    points_per_axis: usize,
}

impl PeriodicGrid {
    pub fn new(dim: usize, points_per_axis: usize) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::InvalidInput(format!("grid dimension must be 1 or 2, got {dim}")));
        }
        if points_per_axis < MIN_POINTS_PER_AXIS {
            return Err(Error::InvalidInput(format!(
                "need at least {MIN_POINTS_PER_AXIS} points per axis, got {points_per_axis}"
            )));
        }
        Ok(Self { dim, points_per_axis })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.points_per_axis as f64
    }

    pub fn total_points(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    /// Quadrature weight `h^dim` of one grid point.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn index(&self, coords: [usize; 2]) -> usize {
        let n = self.points_per_axis;
        if self.dim == 1 {
            coords[0] % n
        } else {
            coords[0] % n + n * (coords[1] % n)
        }
    }

    pub fn coords(&self, idx: usize) -> [usize; 2] {
        let n = self.points_per_axis;
        if self.dim == 1 {
            [idx, 0]
        } else {
            [idx % n, idx / n]
        }
    }

    /// Index of the neighbour `offset` points away along `axis`, with wraparound.
    pub fn shift(&self, idx: usize, axis: usize, offset: isize) -> usize {
        let n = self.points_per_axis as isize;
        let mut c = self.coords(idx);
        c[axis] = (c[axis] as isize + offset).rem_euclid(n) as usize;
        self.index(c)
    }

    /// Physical coordinates of a grid point; unused components are zero.
    pub fn point(&self, idx: usize) -> [f64; 2] {
        let h = self.spacing();
        let c = self.coords(idx);
        [c[0] as f64 * h, c[1] as f64 * h]
    }

    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(self.dim, self.points_per_axis * factor)
    }

    pub fn zeros(&self) -> ScalarField {
        ScalarField::constant(*self, 0.0)
    }

    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> ScalarField {
        let values = (0..self.total_points())
            .map(|i| {
                let p = self.point(i);
                f(&p[..self.dim])
            })
            .collect();
        ScalarField { grid: *self, values }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.total_points() {
            return Err(Error::InvalidInput(format!(
                "field has {} values, grid has {} points",
                values.len(),
                grid.total_points()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: PeriodicGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.total_points()],
        }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `a * self + b * other`.
    pub fn axpby(&self, a: f64, other: &ScalarField, b: f64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        Self {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max |self - other|`.
    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        inner(self, self).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: PeriodicGrid,
    components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn new(grid: PeriodicGrid, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.len() != grid.dim() || components.iter().any(|c| c.len() != grid.total_points()) {
            return Err(Error::InvalidInput("vector field shape does not match grid".into()));
        }
        Ok(Self { grid, components })
    }

    /// Constant vector field equal to `v` everywhere.
    pub fn uniform(grid: PeriodicGrid, v: &[f64]) -> Result<Self> {
        if v.len() != grid.dim() {
            return Err(Error::InvalidInput(format!(
                "vector has {} components, grid dimension is {}",
                v.len(),
                grid.dim()
            )));
        }
        Ok(Self {
            grid,
            components: v.iter().map(|&c| vec![c; grid.total_points()]).collect(),
        })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.components[axis]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    /// Adds the constant vector `v` to every point.
    pub fn shifted(&self, v: &[f64]) -> Self {
        Self {
            grid: self.grid,
            components: self
                .components
                .iter()
                .zip(v)
                .map(|(c, &s)| c.iter().map(|x| x + s).collect())
                .collect(),
        }
    }

    /// Pointwise squared Euclidean norm.
    pub fn norm_sq(&self) -> ScalarField {
        let n = self.grid.total_points();
        let values = (0..n)
            .map(|i| self.components.iter().map(|c| c[i] * c[i]).sum())
            .collect();
        ScalarField { grid: self.grid, values }
    }
}

/// Centered gradient.
pub fn gradient(f: &ScalarField) -> VectorField {
    let g = f.grid;
    let inv2h = 0.5 / g.spacing();
    let components = (0..g.dim())
        .map(|axis| {
            (0..g.total_points())
                .map(|i| (f.values[g.shift(i, axis, 1)] - f.values[g.shift(i, axis, -1)]) * inv2h)
                .collect()
        })
        .collect();
    VectorField { grid: g, components }
}

/// Compact `(2 dim + 1)`-point Laplacian.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    let g = f.grid;
    let inv_h2 = 1.0 / (g.spacing() * g.spacing());
    let values = (0..g.total_points())
        .map(|i| {
            let mut acc = -2.0 * g.dim() as f64 * f.values[i];
            for axis in 0..g.dim() {
                acc += f.values[g.shift(i, axis, 1)] + f.values[g.shift(i, axis, -1)];
            }
            acc * inv_h2
        })
        .collect();
    ScalarField { grid: g, values }
}

/// `w . grad f` with centered differences.
pub fn advection(w: &VectorField, f: &ScalarField) -> Result<ScalarField> {
    if w.grid != f.grid {
        return Err(Error::InvalidInput("advection: grid mismatch".into()));
    }
    let grad = gradient(f);
    let n = f.grid.total_points();
    let values = (0..n)
        .map(|i| (0..f.grid.dim()).map(|a| w.components[a][i] * grad.components[a][i]).sum())
        .collect();
    Ok(ScalarField { grid: f.grid, values })
}

/// Flux-form `div(m w)`: centered difference of the product `m w`.
pub fn divergence_of_product(m: &ScalarField, w: &VectorField) -> Result<ScalarField> {
    if m.grid != w.grid {
        return Err(Error::InvalidInput("divergence_of_product: grid mismatch".into()));
    }
    let g = m.grid;
    let inv2h = 0.5 / g.spacing();
    let values = (0..g.total_points())
        .map(|i| {
            (0..g.dim())
                .map(|a| {
                    let ip = g.shift(i, a, 1);
                    let im = g.shift(i, a, -1);
                    (m.values[ip] * w.components[a][ip] - m.values[im] * w.components[a][im]) * inv2h
                })
                .sum()
        })
        .collect();
    Ok(ScalarField { grid: g, values })
}

/// Trapezoid quadrature over the torus.
pub fn integrate(f: &ScalarField) -> f64 {
    f.values.iter().sum::<f64>() * f.grid.cell_volume()
}

/// `h^dim`-weighted inner product.
pub fn inner(f: &ScalarField, g: &ScalarField) -> f64 {
    debug_assert_eq!(f.grid, g.grid);
    f.values.iter().zip(&g.values).map(|(a, b)| a * b).sum::<f64>() * f.grid.cell_volume()
}

/// Matrix of the compact Laplacian.
pub fn laplacian_matrix(g: &PeriodicGrid) -> SparseOperator {
    let inv_h2 = 1.0 / (g.spacing() * g.spacing());
    let mut t = Vec::with_capacity(g.total_points() * (2 * g.dim() + 1));
    for i in 0..g.total_points() {
        t.push((i, i, -2.0 * g.dim() as f64 * inv_h2));
        for axis in 0..g.dim() {
            t.push((i, g.shift(i, axis, 1), inv_h2));
            t.push((i, g.shift(i, axis, -1), inv_h2));
        }
    }
    SparseOperator::from_triplets(g.total_points(), g.total_points(), &t).expect("laplacian stencil")
}

/// Matrix of the centered difference along `axis`.
pub fn centered_difference_matrix(g: &PeriodicGrid, axis: usize) -> SparseOperator {
    let inv2h = 0.5 / g.spacing();
    let mut t = Vec::with_capacity(2 * g.total_points());
    for i in 0..g.total_points() {
        t.push((i, g.shift(i, axis, 1), inv2h));
        t.push((i, g.shift(i, axis, -1), -inv2h));
    }
    SparseOperator::from_triplets(g.total_points(), g.total_points(), &t).expect("difference stencil")
}

fn advection_triplets(w: &VectorField, scale: f64, t: &mut Vec<(usize, usize, f64)>) {
    let g = w.grid;
    let inv2h = 0.5 / g.spacing();
    for i in 0..g.total_points() {
        for axis in 0..g.dim() {
            let c = scale * w.components[axis][i] * inv2h;
            t.push((i, g.shift(i, axis, 1), c));
            t.push((i, g.shift(i, axis, -1), -c));
        }
    }
}

/// Matrix of `f -> w . grad f`.
pub fn advection_matrix(w: &VectorField) -> SparseOperator {
    let n = w.grid.total_points();
    let mut t = Vec::new();
    advection_triplets(w, 1.0, &mut t);
    SparseOperator::from_triplets(n, n, &t).expect("advection stencil")
}

/// Matrix of `m -> div(m w)`.
pub fn divergence_of_product_matrix(w: &VectorField) -> SparseOperator {
    let g = w.grid;
    let inv2h = 0.5 / g.spacing();
    let mut t = Vec::with_capacity(2 * g.dim() * g.total_points());
    for i in 0..g.total_points() {
        for axis in 0..g.dim() {
            let ip = g.shift(i, axis, 1);
            let im = g.shift(i, axis, -1);
            t.push((i, ip, w.components[axis][ip] * inv2h));
            t.push((i, im, -w.components[axis][im] * inv2h));
        }
    }
    SparseOperator::from_triplets(g.total_points(), g.total_points(), &t).expect("divergence stencil")
}

/// Matrix of `f -> sum_d D_d(weight * D_d f)` with centered differences `D_d`.
pub fn weighted_gradient_divergence_matrix(weight: &ScalarField) -> SparseOperator {
    let g = weight.grid;
    let c = 0.25 / (g.spacing() * g.spacing());
    let mut t = Vec::with_capacity(4 * g.dim() * g.total_points());
    for i in 0..g.total_points() {
        for axis in 0..g.dim() {
            let ip = g.shift(i, axis, 1);
            let im = g.shift(i, axis, -1);
            let wp = weight.values[ip] * c;
            let wm = weight.values[im] * c;
            t.push((i, g.shift(i, axis, 2), wp));
            t.push((i, i, -wp - wm));
            t.push((i, g.shift(i, axis, -2), wm));
        }
    }
    SparseOperator::from_triplets(g.total_points(), g.total_points(), &t).expect("weighted stencil")
}

/// `-lap + w . grad` (linearized HJB generator).
pub fn advection_diffusion_matrix(w: &VectorField) -> SparseOperator {
    let g = w.grid;
    let n = g.total_points();
    let mut t: Vec<(usize, usize, f64)> = laplacian_matrix(&g).triplets().map(|(r, c, v)| (r, c, -v)).collect();
    advection_triplets(w, 1.0, &mut t);
    SparseOperator::from_triplets(n, n, &t).expect("advection-diffusion stencil")
}

/// `-lap - div(. w)` (stationary Fokker-Planck operator).
pub fn fokker_planck_matrix(w: &VectorField) -> SparseOperator {
    let g = w.grid;
    let n = g.total_points();
    let mut t: Vec<(usize, usize, f64)> = laplacian_matrix(&g).triplets().map(|(r, c, v)| (r, c, -v)).collect();
    t.extend(divergence_of_product_matrix(w).triplets().map(|(r, c, v)| (r, c, -v)));
    SparseOperator::from_triplets(n, n, &t).expect("Fokker-Planck stencil")
}
