//! Cell-centred tensor grids, sampled fields and the finite-difference and
//! quadrature primitives shared by the solver, the trainers and the oracle.
//!
//! Nodes sit at cell centres, `x = xmin + (ix + 1/2) dx`, and values are
//! stored row-major with `y` as the slow index: node `(ix, iy)` lives at
//! `iy * nx + ix`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid2D {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64, nx: usize, ny: usize) -> Result<Self> {
        let grid = Grid2D { xmin, xmax, ymin, ymax, nx, ny };
        grid.validate()?;
        Ok(grid)
    }

    /// Square grid `[-half, half]^2` with `n` cells per axis.
    pub fn square(half: f64, n: usize) -> Result<Self> {
        Self::new(-half, half, -half, half, n, n)
    }

    pub fn validate(&self) -> Result<()> {
        let bounds = [self.xmin, self.xmax, self.ymin, self.ymax];
        if bounds.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidGrid("non-finite bounds".into()));
        }
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::InvalidGrid(format!("cell counts must be positive, got {}x{}", self.nx, self.ny)));
        }
        if !(self.xmax > self.xmin && self.ymax > self.ymin) {
            return Err(Error::InvalidGrid("bounds must satisfy xmin < xmax and ymin < ymax".into()));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.xmax - self.xmin) / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        (self.ymax - self.ymin) / self.ny as f64
    }

    /// Number of nodes `N = nx * ny`.
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell measure `|dx| = dx * dy`, evaluated as area / N so that the
    /// Riemann sum of a constant reproduces the area exactly.
    pub fn cell_measure(&self) -> f64 {
        (self.xmax - self.xmin) * (self.ymax - self.ymin) / self.len() as f64
    }

    #[inline]
    pub fn x(&self, ix: usize) -> f64 {
        self.xmin + (ix as f64 + 0.5) * self.dx()
    }

    #[inline]
    pub fn y(&self, iy: usize) -> f64 {
        self.ymin + (iy as f64 + 0.5) * self.dy()
    }

    #[inline]
    pub fn idx(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.nx && iy < self.ny);
        iy * self.nx + ix
    }

    /// Coordinates of flat node `i`.
    #[inline]
    pub fn node(&self, i: usize) -> (f64, f64) {
        (self.x(i % self.nx), self.y(i / self.nx))
    }

    /// All node coordinates in storage order.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.len()).map(move |i| self.node(i))
    }

    fn check_fd(&self) -> Result<()> {
        if self.nx < 3 || self.ny < 3 {
            return Err(Error::GridTooSmall { nx: self.nx, ny: self.ny });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::FieldLength { expected: grid.len(), got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteField(i));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        ScalarField { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        ScalarField { grid, values: vec![c; grid.len()] }
    }

    /// Samples `f` at every node. Panics on non-finite samples; use
    /// [`ScalarField::new`] for fallible construction.
    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let values: Vec<f64> = grid.nodes().map(|(x, y)| f(x, y)).collect();
        Self::new(grid, values).expect("sampled function returned a non-finite value")
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// `alpha * self + beta * other`.
    pub fn axpby(&self, alpha: f64, other: &ScalarField, beta: f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| alpha * a + beta * b).collect();
        Ok(ScalarField { grid: self.grid, values })
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Nodal mean `(1/N) sum_i v_i`.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid2D,
    ux: Vec<f64>,
    uy: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Grid2D, ux: Vec<f64>, uy: Vec<f64>) -> Result<Self> {
        for comp in [&ux, &uy] {
            if comp.len() != grid.len() {
                return Err(Error::FieldLength { expected: grid.len(), got: comp.len() });
            }
            if let Some(i) = comp.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteField(i));
            }
        }
        Ok(VectorField { grid, ux, uy })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        VectorField { grid, ux: vec![0.0; grid.len()], uy: vec![0.0; grid.len()] }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let (ux, uy): (Vec<f64>, Vec<f64>) = grid.nodes().map(|(x, y)| f(x, y)).unzip();
        Self::new(grid, ux, uy).expect("sampled function returned a non-finite value")
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn ux(&self) -> &[f64] {
        &self.ux
    }

    pub fn uy(&self) -> &[f64] {
        &self.uy
    }

    #[inline]
    pub fn at(&self, i: usize) -> (f64, f64) {
        (self.ux[i], self.uy[i])
    }

    pub fn axpby(&self, alpha: f64, other: &VectorField, beta: f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let comb = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(a, b)| alpha * a + beta * b).collect();
        Ok(VectorField { grid: self.grid, ux: comb(&self.ux, &other.ux), uy: comb(&self.uy, &other.uy) })
    }

    /// Pointwise squared magnitude `|u|^2`.
    pub fn norm_sq(&self) -> ScalarField {
        let values = self.ux.iter().zip(&self.uy).map(|(a, b)| a * a + b * b).collect();
        ScalarField { grid: self.grid, values }
    }

    /// Largest pointwise magnitude.
    pub fn max_norm(&self) -> f64 {
        self.ux.iter().zip(&self.uy).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max)
    }
}

/// Riemann sum `|dx| * sum_i f_i`.
pub fn quadrature(field: &ScalarField) -> f64 {
    field.grid.cell_measure() * field.values.iter().sum::<f64>()
}

/// Unnormalised first moment `(|dx| sum x_i f_i, |dx| sum y_i f_i)`.
///
/// No division by the mass: this is the centroid convention of the
/// first-moment loss, and densities are expected to carry unit mass already.
pub fn centroid(field: &ScalarField) -> (f64, f64) {
    let g = &field.grid;
    let mut mx = 0.0;
    let mut my = 0.0;
    for iy in 0..g.ny {
        let y = g.y(iy);
        let row = &field.values[iy * g.nx..(iy + 1) * g.nx];
        let mut row_sum = 0.0;
        for (ix, &f) in row.iter().enumerate() {
            mx += g.x(ix) * f;
            row_sum += f;
        }
        my += y * row_sum;
    }
    let w = g.cell_measure();
    (w * mx, w * my)
}

/// Second-order derivative of a strided line: central differences inside,
/// one-sided three-point formulas at both ends.
fn diff_line(n: usize, h: f64, get: impl Fn(usize) -> f64, mut put: impl FnMut(usize, f64)) {
    let inv2h = 0.5 / h;
    put(0, (-3.0 * get(0) + 4.0 * get(1) - get(2)) * inv2h);
    for i in 1..n - 1 {
        put(i, (get(i + 1) - get(i - 1)) * inv2h);
    }
    put(n - 1, (3.0 * get(n - 1) - 4.0 * get(n - 2) + get(n - 3)) * inv2h);
}

fn d_dx(grid: &Grid2D, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    let (nx, dx) = (grid.nx, grid.dx());
    for iy in 0..grid.ny {
        let base = iy * nx;
        diff_line(nx, dx, |i| v[base + i], |i, d| out[base + i] = d);
    }
    out
}

fn d_dy(grid: &Grid2D, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    let (nx, ny, dy) = (grid.nx, grid.ny, grid.dy());
    for ix in 0..nx {
        diff_line(ny, dy, |j| v[j * nx + ix], |j, d| out[j * nx + ix] = d);
    }
    out
}

/// Finite-difference gradient, second order everywhere.
pub fn gradient_fd(field: &ScalarField) -> Result<VectorField> {
    field.grid.check_fd()?;
    let ux = d_dx(&field.grid, &field.values);
    let uy = d_dy(&field.grid, &field.values);
    VectorField::new(field.grid, ux, uy)
}

/// Finite-difference divergence, second order everywhere.
pub fn divergence_fd(field: &VectorField) -> Result<ScalarField> {
    field.grid.check_fd()?;
    let a = d_dx(&field.grid, &field.ux);
    let b = d_dy(&field.grid, &field.uy);
    let values = a.iter().zip(&b).map(|(p, q)| p + q).collect();
    ScalarField::new(field.grid, values)
}
