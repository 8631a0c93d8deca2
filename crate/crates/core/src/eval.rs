//! Error metrics and the gauge fix for learned potentials.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField, VectorField};
use crate::neural::Mlp;
use crate::training::grid_points;

/// Anything sampled node-wise on a grid.
pub trait Sampled {
    fn grid(&self) -> &Grid2D;
    fn components(&self) -> Vec<&[f64]>;
}

impl Sampled for ScalarField {
    fn grid(&self) -> &Grid2D {
        ScalarField::grid(self)
    }

    fn components(&self) -> Vec<&[f64]> {
        vec![self.values()]
    }
}

impl Sampled for VectorField {
    fn grid(&self) -> &Grid2D {
        VectorField::grid(self)
    }

    fn components(&self) -> Vec<&[f64]> {
        vec![self.ux(), self.uy()]
    }
}

/// Nodes over which a metric is accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    Full,
    /// The box `[-half, half]^2`.
    Interior { half: f64 },
}

impl Region {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Region::Full => true,
            Region::Interior { half } => x.abs() <= half && y.abs() <= half,
        }
    }

    pub fn mask(&self, grid: &Grid2D) -> Vec<bool> {
        grid.nodes().map(|(x, y)| self.contains(x, y)).collect()
    }
}

/// Sum of squares in ascending order, so the result does not depend on
/// node order.
fn canonical_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Relative root mean square error over all nodes.
pub fn rrmse<F: Sampled>(learned: &F, truth: &F) -> Result<f64> {
    rrmse_in(learned, truth, Region::Full)
}

pub fn rrmse_in<F: Sampled>(learned: &F, truth: &F, region: Region) -> Result<f64> {
    let grid = truth.grid();
    if learned.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let mask = region.mask(grid);
    let mut err = Vec::with_capacity(grid.len());
    let mut norm = Vec::with_capacity(grid.len());
    for i in (0..grid.len()).filter(|&i| mask[i]) {
        let (mut e, mut n) = (0.0, 0.0);
        for (l, t) in learned.components().iter().zip(truth.components()) {
            e += (l[i] - t[i]).powi(2);
            n += t[i] * t[i];
        }
        err.push(e);
        norm.push(n);
    }
    let norm = canonical_sum(norm);
    if norm == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((canonical_sum(err) / norm).sqrt())
}

/// Shifts `psi_nn` so that its nodal mean matches that of `psi_true`.
pub fn mean_shift(psi_nn: &ScalarField, psi_true: &ScalarField) -> ScalarField {
    let diff: Vec<f64> = psi_true.values().iter().zip(psi_nn.values()).map(|(t, n)| t - n).collect();
    let shift = canonical_sum(diff) / psi_nn.values().len() as f64;
    psi_nn.map(|v| v + shift)
}

/// `R = b* + grad(psi)`.
pub fn recover_rotation(b_star: &VectorField, psi_grad: &VectorField) -> Result<VectorField> {
    b_star.axpby(1.0, psi_grad, 1.0)
}

/// Value and input gradient of a scalar network at every node.
pub fn tabulate_potential(net: &Mlp, grid: &Grid2D) -> Result<(ScalarField, VectorField)> {
    if net.output_dim() != 1 {
        return Err(Error::RequiresScalarOutput(net.output_dim()));
    }
    let tape = net.input_grad_tape(grid_points(grid).view())?;
    let psi = ScalarField::new(*grid, tape.output().column(0).to_vec())?;
    let g: Array2<f64> = tape.input_grad(0);
    let grad = VectorField::new(*grid, g.column(0).to_vec(), g.column(1).to_vec())?;
    Ok((psi, grad))
}

/// The three errors reported for one region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rrmse_b: f64,
    pub rrmse_psi: f64,
    pub rrmse_r: f64,
}

impl Metrics {
    pub fn is_valid(&self) -> bool {
        [self.rrmse_b, self.rrmse_psi, self.rrmse_r].iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// Learned and true fields on a common grid.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub b_nn: VectorField,
    pub b: VectorField,
    pub psi_nn: ScalarField,
    pub psi: ScalarField,
    pub r_nn: VectorField,
    pub r: VectorField,
}

impl Comparison {
    /// `psi_nn` is mean-shifted against `psi` here.
    pub fn new(
        b_nn: VectorField,
        b: VectorField,
        psi_nn: &ScalarField,
        psi_nn_grad: &VectorField,
        psi: ScalarField,
        r: VectorField,
    ) -> Result<Self> {
        let r_nn = recover_rotation(&b_nn, psi_nn_grad)?;
        let psi_nn = mean_shift(psi_nn, &psi);
        Ok(Comparison { b_nn, b, psi_nn, psi, r_nn, r })
    }

    pub fn metrics(&self, region: Region) -> Result<Metrics> {
        Ok(Metrics {
            rrmse_b: rrmse_in(&self.b_nn, &self.b, region)?,
            rrmse_psi: rrmse_in(&self.psi_nn, &self.psi, region)?,
            rrmse_r: rrmse_in(&self.r_nn, &self.r, region)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::benchmark;

    fn grid() -> Grid2D {
        Grid2D::square(4.0, 40).unwrap()
    }

    #[test]
    fn rrmse_examples() {
        let g = grid();
        let t = VectorField::from_fn(g, |x, y| (x - x.powi(3) + y, -y - x));
        assert_eq!(rrmse(&t, &t).unwrap(), 0.0);
        let scaled = t.axpby(1.1, &t, 0.0).unwrap();
        assert!((rrmse(&scaled, &t).unwrap() - 0.1).abs() < 1e-14);
        let zero = VectorField::zeros(g);
        assert!(matches!(rrmse(&t, &zero), Err(Error::ZeroReference)));
        let other = VectorField::zeros(Grid2D::square(4.0, 20).unwrap());
        assert!(matches!(rrmse(&other, &t), Err(Error::GridMismatch)));
    }

    #[test]
    fn interior_region_excludes_boundary_nodes() {
        let g = grid();
        let t = ScalarField::constant(g, 1.0);
        let l = ScalarField::from_fn(g, |x, y| if x.abs() > 3.0 || y.abs() > 3.0 { 5.0 } else { 1.0 });
        assert_eq!(rrmse_in(&l, &t, Region::Interior { half: 3.0 }).unwrap(), 0.0);
        assert!(rrmse(&l, &t).unwrap() > 1.0);
        let inner = Region::Interior { half: 3.0 }.mask(&g).iter().filter(|m| **m).count();
        assert_eq!(inner, 30 * 30);
    }

    #[test]
    fn mean_shift_examples() {
        let g = grid();
        let t = ScalarField::from_fn(g, |x, y| x * x - y);
        let shifted = mean_shift(&t.map(|v| v + 7.0), &t);
        for (a, b) in shifted.values().iter().zip(t.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(mean_shift(&t, &t).values(), t.values());
        let other = ScalarField::from_fn(g, |x, y| (x * y).sin() - 3.0);
        assert!((mean_shift(&other, &t).mean() - t.mean()).abs() < 1e-12);
    }

    #[test]
    fn rotation_recovery_examples() {
        let g = grid();
        let grad = VectorField::from_fn(g, |x, y| (x.sin(), y * x));
        let minus = grad.axpby(-1.0, &grad, 0.0).unwrap();
        let r = recover_rotation(&minus, &grad).unwrap();
        assert!(r.ux().iter().chain(r.uy()).all(|&v| v == 0.0));
        let r = recover_rotation(&VectorField::zeros(g), &grad).unwrap();
        assert_eq!(r.ux(), grad.ux());

        let dw = benchmark("double-well").unwrap();
        let r = recover_rotation(&dw.sample_drift(&g), &dw.sample_grad_psi(&g)).unwrap();
        for (i, (x, y)) in g.nodes().enumerate() {
            assert!((r.ux()[i] - y).abs() <= 1e-12 && (r.uy()[i] + x).abs() <= 1e-12);
        }
    }

    #[test]
    fn tabulated_potential_matches_pointwise_network() {
        let g = grid();
        let net = Mlp::glorot(&[2, 7, 7, 1], 5).unwrap();
        let (psi, grad) = tabulate_potential(&net, &g).unwrap();
        for i in [0, 17, 803, g.len() - 1] {
            let (x, y) = g.node(i);
            assert!((psi.values()[i] - net.forward(&[x, y]).unwrap()[0]).abs() < 1e-14);
            let j = net.grad_input(&[x, y]).unwrap();
            assert!((grad.ux()[i] - j[0]).abs() < 1e-14 && (grad.uy()[i] - j[1]).abs() < 1e-14);
        }
        assert!(matches!(
            tabulate_potential(&Mlp::zeros(&[2, 2]).unwrap(), &g),
            Err(Error::RequiresScalarOutput(2))
        ));
    }
}
