//! Explicit finite-volume solver for the Fokker-Planck equation
//!
//! ```text
//! df/dt + div(b f) = 1/2 lap(sigma^2 f)
//! ```
//!
//! on a cell-centred grid with zero total flux through the domain boundary.
//! Each interior face carries a two-point flux `F = c_l f_l - c_r f_r`; the
//! coefficient pair depends on the [`AdvectionScheme`]. Because every face
//! flux leaves one cell and enters its neighbour, mass is conserved to
//! round-off whatever the scheme.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{quadrature, Grid2D, ScalarField, VectorField};

pub type Vec2Fn = Arc<dyn Fn(f64, f64) -> (f64, f64) + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Closed-form potential with its hand-derived gradient.
#[derive(Clone)]
pub struct Potential {
    pub value: ScalarFn,
    pub gradient: Vec2Fn,
}

/// A closed-form drift, optionally with the ground-truth decomposition
/// `b = -grad(psi) + R`.
#[derive(Clone)]
pub struct DriftSpec {
    pub label: String,
    pub drift: Vec2Fn,
    pub potential: Option<Potential>,
    pub rotation: Option<Vec2Fn>,
}

impl fmt::Debug for DriftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftSpec")
            .field("label", &self.label)
            .field("potential", &self.potential.is_some())
            .field("rotation", &self.rotation.is_some())
            .finish()
    }
}

impl DriftSpec {
    pub fn new(label: impl Into<String>, drift: impl Fn(f64, f64) -> (f64, f64) + Send + Sync + 'static) -> Self {
        DriftSpec { label: label.into(), drift: Arc::new(drift), potential: None, rotation: None }
    }

    /// Drift assembled from a potential and a rotation, `b = -grad(psi) + R`.
    pub fn from_decomposition(label: impl Into<String>, potential: Potential, rotation: Vec2Fn) -> Self {
        let grad = potential.gradient.clone();
        let rot = rotation.clone();
        let drift: Vec2Fn = Arc::new(move |x, y| {
            let (gx, gy) = grad(x, y);
            let (rx, ry) = rot(x, y);
            (rx - gx, ry - gy)
        });
        DriftSpec { label: label.into(), drift, potential: Some(potential), rotation: Some(rotation) }
    }

    /// Zero drift.
    pub fn zero() -> Self {
        Self::new("zero", |_, _| (0.0, 0.0))
    }

    /// Linear drift `b(x) = A x`, with `A` given row-major.
    pub fn linear(label: impl Into<String>, a: [[f64; 2]; 2]) -> Self {
        Self::new(label, move |x, y| (a[0][0] * x + a[0][1] * y, a[1][0] * x + a[1][1] * y))
    }

    pub fn eval(&self, x: f64, y: f64) -> (f64, f64) {
        (self.drift)(x, y)
    }

    pub fn sample(&self, grid: &Grid2D) -> VectorField {
        VectorField::from_fn(*grid, |x, y| (self.drift)(x, y))
    }

    /// Largest nodal mismatch `|b - (-grad(psi) + R)|`, or `None` when the
    /// decomposition is not known.
    pub fn decomposition_defect(&self, grid: &Grid2D) -> Option<f64> {
        let (pot, rot) = (self.potential.as_ref()?, self.rotation.as_ref()?);
        let worst = grid
            .nodes()
            .map(|(x, y)| {
                let (bx, by) = (self.drift)(x, y);
                let (gx, gy) = (pot.gradient)(x, y);
                let (rx, ry) = rot(x, y);
                (bx - (rx - gx)).abs().max((by - (ry - gy)).abs())
            })
            .fold(0.0, f64::max);
        Some(worst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvectionScheme {
    /// First-order upwind advection plus central diffusion.
    Upwind,
    /// Exponentially fitted (Scharfetter-Gummel / Chang-Cooper) flux: central
    /// for small cell Peclet numbers, upwind in the advection-dominated
    /// limit, and exact for the discrete Boltzmann equilibrium of a
    /// one-dimensional gradient drift.
    #[default]
    ScharfetterGummel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    /// Noise intensity `sigma^2`, constant in space.
    pub sigma2: f64,
    pub t_end: f64,
    #[serde(default)]
    pub scheme: AdvectionScheme,
}

impl SolverConfig {
    pub fn new(dt: f64, sigma2: f64, t_end: f64) -> Self {
        SolverConfig { dt, sigma2, t_end, scheme: AdvectionScheme::default() }
    }

    pub fn with_scheme(mut self, scheme: AdvectionScheme) -> Self {
        self.scheme = scheme;
        self
    }

    /// Checks `dt > 0`, the diffusion bound
    /// `(sigma^2/2) dt (1/dx^2 + 1/dy^2) <= 1/2` and the advective bound
    /// `max|b| dt / min(dx, dy) <= 1`.
    pub fn check_stability(&self, grid: &Grid2D, max_drift: f64) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::StabilityViolation(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(Error::StabilityViolation(format!("sigma^2 must be non-negative, got {}", self.sigma2)));
        }
        let (dx, dy) = (grid.dx(), grid.dy());
        let diffusion = 0.5 * self.sigma2 * self.dt * (1.0 / (dx * dx) + 1.0 / (dy * dy));
        if diffusion > 0.5 {
            return Err(Error::StabilityViolation(format!("diffusion number {diffusion:.4} exceeds 1/2")));
        }
        let courant = max_drift * self.dt / dx.min(dy);
        if courant > 1.0 {
            return Err(Error::StabilityViolation(format!("Courant number {courant:.4} exceeds 1")));
        }
        Ok(())
    }
}

/// Isotropic Gaussian density sampled at the nodes and rescaled so that its
/// Riemann sum is exactly one.
pub fn gaussian_density(grid: &Grid2D, mean: (f64, f64), variance: f64) -> Result<ScalarField> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::DegenerateVariance(variance));
    }
    let raw = ScalarField::from_fn(*grid, |x, y| {
        let r2 = (x - mean.0).powi(2) + (y - mean.1).powi(2);
        (-r2 / (2.0 * variance)).exp()
    });
    let mass = quadrature(&raw);
    if !(mass > 0.0) {
        return Err(Error::DegenerateVariance(variance));
    }
    Ok(raw.map(|v| v / mass))
}

/// `B(z) = z / (e^z - 1)`, the Bernoulli function.
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// Flux coefficients `(c_l, c_r)` for a face with drift `b` (positive
/// pointing from the left cell to the right cell), diffusion `d` and
/// spacing `h`.
fn face_coefficients(scheme: AdvectionScheme, b: f64, d: f64, h: f64) -> (f64, f64) {
    match scheme {
        AdvectionScheme::Upwind => (b.max(0.0) + d / h, (-b).max(0.0) + d / h),
        AdvectionScheme::ScharfetterGummel => {
            if d == 0.0 {
                (b.max(0.0), (-b).max(0.0))
            } else {
                let pe = b * h / d;
                (d / h * bernoulli(-pe), d / h * bernoulli(pe))
            }
        }
    }
}

/// Precomputed face coefficients for one drift on one grid.
#[derive(Debug, Clone)]
pub struct FokkerPlanckSolver {
    grid: Grid2D,
    cfg: SolverConfig,
    // x-faces between (ix, iy) and (ix+1, iy), indexed iy * (nx-1) + ix
    xl: Vec<f64>,
    xr: Vec<f64>,
    // y-faces between (ix, iy) and (ix, iy+1), indexed iy * nx + ix
    yl: Vec<f64>,
    yr: Vec<f64>,
}

impl FokkerPlanckSolver {
    pub fn new(grid: &Grid2D, drift: &DriftSpec, cfg: SolverConfig) -> Result<Self> {
        Self::from_field(&drift.sample(grid), cfg)
    }

    /// Solver for a drift given by its nodal values. Face drifts are the
    /// average of the two adjacent nodes.
    pub fn from_field(drift: &VectorField, cfg: SolverConfig) -> Result<Self> {
        let grid = *drift.grid();
        cfg.check_stability(&grid, drift.max_norm())?;
        let (nx, ny) = (grid.nx, grid.ny);
        let d = 0.5 * cfg.sigma2;
        let (dx, dy) = (grid.dx(), grid.dy());
        let (bx, by) = (drift.ux(), drift.uy());

        let mut xl = Vec::with_capacity(nx.saturating_sub(1) * ny);
        let mut xr = Vec::with_capacity(xl.capacity());
        for iy in 0..ny {
            for ix in 0..nx.saturating_sub(1) {
                let i = grid.idx(ix, iy);
                let (l, r) = face_coefficients(cfg.scheme, 0.5 * (bx[i] + bx[i + 1]), d, dx);
                xl.push(l);
                xr.push(r);
            }
        }
        let mut yl = Vec::with_capacity(nx * ny.saturating_sub(1));
        let mut yr = Vec::with_capacity(yl.capacity());
        for iy in 0..ny.saturating_sub(1) {
            for ix in 0..nx {
                let i = grid.idx(ix, iy);
                let (l, r) = face_coefficients(cfg.scheme, 0.5 * (by[i] + by[i + nx]), d, dy);
                yl.push(l);
                yr.push(r);
            }
        }
        Ok(FokkerPlanckSolver { grid, cfg, xl, xr, yl, yr })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// One explicit Euler step, writing into `out`.
    fn step_into(&self, f: &[f64], out: &mut [f64]) {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let lx = self.cfg.dt / self.grid.dx();
        let ly = self.cfg.dt / self.grid.dy();
        out.copy_from_slice(f);
        for iy in 0..ny {
            let row = iy * nx;
            let frow = row - iy;
            for ix in 0..nx - 1 {
                let i = row + ix;
                let k = frow + ix;
                let flux = lx * (self.xl[k] * f[i] - self.xr[k] * f[i + 1]);
                out[i] -= flux;
                out[i + 1] += flux;
            }
        }
        for iy in 0..ny - 1 {
            let row = iy * nx;
            for ix in 0..nx {
                let i = row + ix;
                let flux = ly * (self.yl[i] * f[i] - self.yr[i] * f[i + nx]);
                out[i] -= flux;
                out[i + nx] += flux;
            }
        }
    }

    pub fn step(&self, f: &ScalarField) -> Result<ScalarField> {
        self.advance(f, 1)
    }

    /// Takes `steps` explicit steps from `f`.
    pub fn advance(&self, f: &ScalarField, steps: usize) -> Result<ScalarField> {
        if f.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        let mut cur = f.values().to_vec();
        let mut next = vec![0.0; cur.len()];
        for s in 0..steps {
            self.step_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
            if ((s + 1) % 64 == 0 || s + 1 == steps) && !cur.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteState { step: s + 1 });
            }
        }
        ScalarField::new(self.grid, cur)
    }

    /// Advances to `cfg.t_end`, which must be a whole number of steps.
    pub fn run(&self, f0: &ScalarField) -> Result<ScalarField> {
        let n = steps_for(self.cfg.t_end, self.cfg.dt)?;
        self.advance(f0, n)
    }
}

/// One explicit step of the scheme for `drift`.
pub fn step(f: &ScalarField, drift: &DriftSpec, cfg: SolverConfig) -> Result<ScalarField> {
    FokkerPlanckSolver::new(f.grid(), drift, cfg)?.step(f)
}

/// Number of steps of size `dt` covering `t`, if `t` is a whole multiple.
pub fn steps_for(t: f64, dt: f64) -> Result<usize> {
    if !(t >= 0.0) || !(dt > 0.0) {
        return Err(Error::NotMultipleOfDt(format!("t = {t}, dt = {dt}")));
    }
    let n = (t / dt).round();
    if (n * dt - t).abs() > 1e-9 * t.max(dt) {
        return Err(Error::NotMultipleOfDt(format!("{t} is not a multiple of dt = {dt}")));
    }
    Ok(n as usize)
}

/// Densities at `t1` and `t2` starting from `f0` at time zero.
pub fn solve_snapshots(
    drift: &DriftSpec,
    cfg: SolverConfig,
    f0: &ScalarField,
    t1: f64,
    t2: f64,
) -> Result<(ScalarField, ScalarField)> {
    let solver = FokkerPlanckSolver::new(f0.grid(), drift, cfg)?;
    snapshots_with(&solver, f0, t1, t2)
}

pub(crate) fn snapshots_with(
    solver: &FokkerPlanckSolver,
    f0: &ScalarField,
    t1: f64,
    t2: f64,
) -> Result<(ScalarField, ScalarField)> {
    if !(t1 > 0.0 && t2 > t1) {
        return Err(Error::NotMultipleOfDt(format!("need 0 < t1 < t2, got t1 = {t1}, t2 = {t2}")));
    }
    let dt = solver.cfg.dt;
    let n1 = steps_for(t1, dt)?;
    let n12 = steps_for(t2 - t1, dt)?;
    let f1 = solver.advance(f0, n1)?;
    let f2 = solver.advance(&f1, n12)?;
    Ok((f1, f2))
}
