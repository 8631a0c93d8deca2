//! Ground-truth benchmarks and a finite-volume Poisson solver used as an
//! independent reference for the learned decomposition.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fokker_planck::{DriftSpec, Potential};
use crate::grid::{divergence_fd, gradient_fd, Grid2D, ScalarField, VectorField};

type Scalar2 = fn(f64, f64) -> f64;
type Vector2 = fn(f64, f64) -> (f64, f64);

pub const BENCHMARK_NAMES: [&str; 4] = ["double-well", "quadruple-well", "oscillatory-rotation", "rough"];

/// Oscillation scale of the rough potential.
pub const ROUGH_EPS: f64 = 0.2;

/// A drift `b = -grad(psi) + R` with closed-form parts.
#[derive(Debug, Clone, Copy)]
pub struct Benchmark {
    pub name: &'static str,
    pub sigma2: f64,
    pub m: usize,
    pub epochs: usize,
    psi: Scalar2,
    grad_psi: Vector2,
    rotation: Vector2,
}

fn double_well(x: f64, y: f64) -> f64 {
    0.25 * (x * x - 1.0).powi(2) + 0.5 * y * y
}

fn double_well_grad(x: f64, y: f64) -> (f64, f64) {
    (x * x * x - x, y)
}

fn quadruple_well(x: f64, y: f64) -> f64 {
    0.125 * (x * x - 1.0).powi(2) + 0.125 * (y * y - 1.0).powi(2)
}

fn quadruple_well_grad(x: f64, y: f64) -> (f64, f64) {
    (0.5 * x * (x * x - 1.0), 0.5 * y * (y * y - 1.0))
}

fn harmonic(x: f64, y: f64) -> f64 {
    0.5 * (x * x + y * y)
}

fn harmonic_grad(x: f64, y: f64) -> (f64, f64) {
    (x, y)
}

fn rough(x: f64, y: f64) -> f64 {
    let k = 2.0 * PI / ROUGH_EPS;
    double_well(x, y) + ROUGH_EPS.powi(4) * (k * x).sin() * (k * y).sin()
}

fn rough_grad(x: f64, y: f64) -> (f64, f64) {
    let k = 2.0 * PI / ROUGH_EPS;
    let amp = ROUGH_EPS.powi(4) * k;
    let (gx, gy) = double_well_grad(x, y);
    (gx + amp * (k * x).cos() * (k * y).sin(), gy + amp * (k * x).sin() * (k * y).cos())
}

fn solid_rotation(x: f64, y: f64) -> (f64, f64) {
    (y, -x)
}

fn oscillatory_rotation(x: f64, y: f64) -> (f64, f64) {
    (y.cos(), -x.sin())
}

/// Looks up a benchmark by name.
pub fn benchmark(name: &str) -> Result<Benchmark> {
    let (psi, grad_psi, rotation, m, epochs): (Scalar2, Vector2, Vector2, usize, usize) = match name {
        "double-well" => (double_well, double_well_grad, solid_rotation, 40, 10_000),
        "quadruple-well" => (quadruple_well, quadruple_well_grad, solid_rotation, 80, 100_000),
        "oscillatory-rotation" => (harmonic, harmonic_grad, oscillatory_rotation, 80, 50_000),
        "rough" => (rough, rough_grad, solid_rotation, 40, 10_000),
        _ => return Err(Error::UnknownBenchmark(name.to_string())),
    };
    let name = BENCHMARK_NAMES.iter().find(|n| **n == name).copied().unwrap_or_default();
    Ok(Benchmark { name, sigma2: 2.0, m, epochs, psi, grad_psi, rotation })
}

impl Benchmark {
    pub fn psi(&self, x: f64, y: f64) -> f64 {
        (self.psi)(x, y)
    }

    pub fn grad_psi(&self, x: f64, y: f64) -> (f64, f64) {
        (self.grad_psi)(x, y)
    }

    pub fn rotation(&self, x: f64, y: f64) -> (f64, f64) {
        (self.rotation)(x, y)
    }

    pub fn drift(&self, x: f64, y: f64) -> (f64, f64) {
        let (gx, gy) = self.grad_psi(x, y);
        let (rx, ry) = self.rotation(x, y);
        (rx - gx, ry - gy)
    }

    pub fn sample_psi(&self, grid: &Grid2D) -> ScalarField {
        ScalarField::from_fn(*grid, self.psi)
    }

    pub fn sample_grad_psi(&self, grid: &Grid2D) -> VectorField {
        VectorField::from_fn(*grid, self.grad_psi)
    }

    pub fn sample_rotation(&self, grid: &Grid2D) -> VectorField {
        VectorField::from_fn(*grid, self.rotation)
    }

    pub fn sample_drift(&self, grid: &Grid2D) -> VectorField {
        VectorField::from_fn(*grid, |x, y| self.drift(x, y))
    }

    pub fn drift_spec(&self) -> DriftSpec {
        let (psi, grad, rot) = (self.psi, self.grad_psi, self.rotation);
        DriftSpec::from_decomposition(
            self.name,
            Potential { value: Arc::new(psi), gradient: Arc::new(grad) },
            Arc::new(rot),
        )
    }
}

/// Largest relative share of `rhs` removed to make the Neumann problem solvable.
const MAX_COMPAT_CORRECTION: f64 = 1e-2;
const CG_RTOL: f64 = 1e-8;

/// Five-point finite-volume Neumann Laplacian on cell centres,
/// `(A psi)_P = sum over interior neighbours (psi_P - psi_Q) / h^2`.
fn apply_laplacian(grid: &Grid2D, psi: &[f64], out: &mut [f64]) {
    let (nx, ny) = (grid.nx, grid.ny);
    let (cx, cy) = (1.0 / (grid.dx() * grid.dx()), 1.0 / (grid.dy() * grid.dy()));
    for iy in 0..ny {
        for ix in 0..nx {
            let p = grid.idx(ix, iy);
            let v = psi[p];
            let mut acc = 0.0;
            if ix > 0 {
                acc += cx * (v - psi[p - 1]);
            }
            if ix + 1 < nx {
                acc += cx * (v - psi[p + 1]);
            }
            if iy > 0 {
                acc += cy * (v - psi[p - nx]);
            }
            if iy + 1 < ny {
                acc += cy * (v - psi[p + nx]);
            }
            out[p] = acc;
        }
    }
}

/// Right-hand side with the boundary flux `-(b.n)` folded in. The face value
/// of `b` is extrapolated linearly from the two nearest cell centres.
fn neumann_rhs(rhs: &ScalarField, b: &VectorField) -> Vec<f64> {
    let grid = rhs.grid();
    let (nx, ny) = (grid.nx, grid.ny);
    let (hx, hy) = (grid.dx(), grid.dy());
    let (bx, by) = (b.ux(), b.uy());
    let face = |u: &[f64], p: usize, q: usize| 1.5 * u[p] - 0.5 * u[q];
    let mut r = rhs.values().to_vec();
    for iy in 0..ny {
        let (w, e) = (grid.idx(0, iy), grid.idx(nx - 1, iy));
        // outward normals: -x on the west face, +x on the east face
        r[w] += face(bx, w, w + 1) / hx;
        r[e] -= face(bx, e, e - 1) / hx;
    }
    for ix in 0..nx {
        let (s, n) = (grid.idx(ix, 0), grid.idx(ix, ny - 1));
        r[s] += face(by, s, s + nx) / hy;
        r[n] -= face(by, n, n - nx) / hy;
    }
    r
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn remove_mean(v: &mut [f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    mean
}

/// Solves `-lap(psi) = rhs` with `(grad psi + b).n = 0` on the boundary.
/// The returned potential has zero nodal mean.
pub fn poisson_solve(rhs: &ScalarField, b: &VectorField, grid: &Grid2D) -> Result<ScalarField> {
    if rhs.grid() != grid || b.grid() != grid {
        return Err(Error::GridMismatch);
    }
    if grid.nx < 2 || grid.ny < 2 {
        return Err(Error::GridTooSmall { nx: grid.nx, ny: grid.ny });
    }
    let n = grid.len();
    let mut r = neumann_rhs(rhs, b);
    let total = dot(&r, &r).sqrt();
    if total == 0.0 {
        return Ok(ScalarField::zeros(*grid));
    }
    let mean = remove_mean(&mut r);
    let correction = mean.abs() * (n as f64).sqrt() / total;
    if correction > MAX_COMPAT_CORRECTION {
        return Err(Error::IncompatibleRhs(correction));
    }
    let target = CG_RTOL * dot(&r, &r).sqrt();
    let mut psi = vec![0.0; n];
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let max_iter = 10 * n;
    let mut iter = 0;
    while rr.sqrt() > target {
        if iter == max_iter {
            return Err(Error::SolverDiverged { iterations: iter, residual: rr.sqrt() });
        }
        apply_laplacian(grid, &p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            psi[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        remove_mean(&mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        iter += 1;
    }
    remove_mean(&mut psi);
    ScalarField::new(*grid, psi)
}

/// Relative residual `|A psi - r| / |r|` of the discrete Neumann problem,
/// with `r` projected onto the solvable subspace.
pub fn poisson_residual(psi: &ScalarField, rhs: &ScalarField, b: &VectorField) -> f64 {
    let mut r = neumann_rhs(rhs, b);
    remove_mean(&mut r);
    let mut ap = vec![0.0; r.len()];
    apply_laplacian(psi.grid(), psi.values(), &mut ap);
    let res = ap.iter().zip(&r).map(|(a, r)| (a - r) * (a - r)).sum::<f64>().sqrt();
    res / dot(&r, &r).sqrt()
}

/// Splits a sampled drift into `(psi, R)` with `R = b + grad(psi)`.
pub fn decompose_with_oracle(b: &VectorField, grid: &Grid2D) -> Result<(ScalarField, VectorField)> {
    let psi = poisson_solve(&divergence_fd(b)?, b, grid)?;
    let r = b.axpby(1.0, &gradient_fd(&psi)?, 1.0)?;
    Ok((psi, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid2D {
        Grid2D::square(4.0, 80).unwrap()
    }

    fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn benchmark_values() {
        let dw = benchmark("double-well").unwrap();
        assert_eq!(dw.drift(1.0, 0.0), (0.0, -1.0));
        assert_eq!(benchmark("oscillatory-rotation").unwrap().rotation(0.0, 0.0), (1.0, -0.0));
        assert_eq!(benchmark("rough").unwrap().psi(0.0, 0.0), 0.25);
        assert!(matches!(benchmark("triple-well"), Err(Error::UnknownBenchmark(_))));
        let qw = benchmark("quadruple-well").unwrap();
        assert_eq!((qw.m, qw.epochs, qw.name), (80, 100_000, "quadruple-well"));
    }

    #[test]
    fn symbolic_gradients_match_central_differences() {
        let h = 1e-5;
        for name in BENCHMARK_NAMES {
            let bm = benchmark(name).unwrap();
            for &(x, y) in &[(0.3, -1.1), (1.7, 0.4), (-2.2, 2.9), (0.0, 0.05)] {
                let gx = (bm.psi(x + h, y) - bm.psi(x - h, y)) / (2.0 * h);
                let gy = (bm.psi(x, y + h) - bm.psi(x, y - h)) / (2.0 * h);
                let (ax, ay) = bm.grad_psi(x, y);
                assert!((gx - ax).abs() < 1e-6 * (1.0 + ax.abs()), "{name} x at ({x},{y})");
                assert!((gy - ay).abs() < 1e-6 * (1.0 + ay.abs()), "{name} y at ({x},{y})");
            }
        }
    }

    #[test]
    fn sampled_drift_is_consistent_with_parts() {
        let g = grid();
        for name in BENCHMARK_NAMES {
            let bm = benchmark(name).unwrap();
            let b = bm.sample_drift(&g);
            let spec = bm.drift_spec().sample(&g);
            let (gp, r) = (bm.sample_grad_psi(&g), bm.sample_rotation(&g));
            for i in 0..g.len() {
                let (bx, by) = b.at(i);
                assert!((bx - (r.ux()[i] - gp.ux()[i])).abs() <= 1e-12);
                assert!((by - (r.uy()[i] - gp.uy()[i])).abs() <= 1e-12);
                assert_eq!(spec.at(i), (bx, by));
            }
        }
    }

    #[test]
    fn rotations_are_divergence_free() {
        let g = grid();
        for name in BENCHMARK_NAMES {
            let div = divergence_fd(&benchmark(name).unwrap().sample_rotation(&g)).unwrap();
            let sup = div.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(sup <= g.dx() * g.dx(), "{name}: {sup}");
        }
    }

    #[test]
    fn zero_input_gives_zero_potential() {
        let g = grid();
        let psi = poisson_solve(&ScalarField::zeros(g), &VectorField::zeros(g), &g).unwrap();
        assert!(psi.values().iter().all(|&v| v == 0.0));
        let (psi, r) = decompose_with_oracle(&VectorField::zeros(g), &g).unwrap();
        assert!(psi.values().iter().chain(r.ux()).chain(r.uy()).all(|&v| v == 0.0));
    }

    #[test]
    fn harmonic_potential_is_recovered() {
        let g = grid();
        let truth = ScalarField::from_fn(g, harmonic);
        let b = VectorField::from_fn(g, |x, y| (-x, -y));
        let rhs = divergence_fd(&b).unwrap();
        let psi = poisson_solve(&rhs, &b, &g).unwrap();
        let shift = truth.mean();
        let shifted = psi.map(|v| v + shift);
        assert!(rel_l2(shifted.values(), truth.values()) <= 1e-3);
        assert!(poisson_residual(&psi, &rhs, &b) <= 1e-8);
    }

    #[test]
    fn solid_rotation_only_picks_up_a_boundary_potential() {
        // (y, -x) is divergence-free but not tangent to the square, so the
        // natural boundary condition leaves a harmonic psi with
        // int |grad psi|^2 ~ 0.1565 int |b|^2 in the continuum limit.
        let g = grid();
        let b = VectorField::from_fn(g, solid_rotation);
        let rhs = divergence_fd(&b).unwrap();
        assert!(rhs.values().iter().all(|v| v.abs() < 1e-12));
        let (psi, r) = decompose_with_oracle(&b, &g).unwrap();
        let energy = |v: &VectorField| crate::grid::quadrature(&v.norm_sq());
        let ratio = energy(&gradient_fd(&psi).unwrap()) / energy(&b);
        assert!((ratio - 0.1565).abs() < 2e-3, "{ratio}");
        // psi inherits the antisymmetry psi(x, y) = -psi(y, x) of the data
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let (a, c) = (psi.values()[g.idx(ix, iy)], psi.values()[g.idx(iy, ix)]);
                assert!((a + c).abs() < 1e-8, "{a} {c}");
            }
        }
        // R is tangent at the outermost cell centres up to O(dx)
        let edge = g.idx(0, g.ny / 2);
        assert!(r.ux()[edge].abs() < 0.1 * b.uy()[edge].abs().max(1.0));
    }

    #[test]
    fn pure_gradient_has_no_rotation() {
        let g = grid();
        let b = VectorField::from_fn(g, |x, y| (-x, -y));
        let (_, r) = decompose_with_oracle(&b, &g).unwrap();
        let energy = |v: &VectorField| crate::grid::quadrature(&v.norm_sq());
        assert!(energy(&r) / energy(&b) <= 1e-4);
    }

    #[test]
    fn incompatible_rhs_is_rejected() {
        let g = Grid2D::square(1.0, 20).unwrap();
        let rhs = ScalarField::constant(g, 1.0);
        assert!(matches!(
            poisson_solve(&rhs, &VectorField::zeros(g), &g),
            Err(Error::IncompatibleRhs(c)) if c > 0.99
        ));
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let g = grid();
        let other = Grid2D::square(4.0, 40).unwrap();
        assert!(matches!(
            poisson_solve(&ScalarField::zeros(other), &VectorField::zeros(g), &g),
            Err(Error::GridMismatch)
        ));
    }
}
