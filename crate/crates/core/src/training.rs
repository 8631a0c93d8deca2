//! The two learning phases.
//!
//! Phase 1 fits a drift network `b_nn` to the first-moment dynamics of the
//! corpus: for every pair `j` and axis `k`,
//!
//! ```text
//! (mu_jk(t2) - mu_jk(t1)) / (t2 - t1)  ~  |dx| sum_i b_nn,k(x_i) f_j(x_i, t1)
//! ```
//!
//! Phase 2 freezes `b* = b_nn` on the grid and minimises the Ritz energy
//!
//! ```text
//! I(psi) = |dx| sum_i [ 1/2 |grad psi_nn(x_i)|^2 + grad psi_nn(x_i) . b*(x_i) ]
//! ```
//!
//! whose minimiser solves `-lap(psi) = div(b*)` with the natural boundary
//! condition `(grad psi + b*) . n = 0`.

use log::{debug, info};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Corpus, SnapshotPair};
use crate::error::{Error, Result};
use crate::grid::{centroid, Grid2D, VectorField};
use crate::neural::{AdamState, Mlp};

fn default_hidden() -> Vec<usize> {
    vec![50, 50]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase1Config {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
}

impl Default for Phase1Config {
    fn default() -> Self {
        Phase1Config { epochs: 10_000, batch_size: 5, learning_rate: 1e-4, seed: 1, hidden: default_hidden() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase2Config {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
}

impl Default for Phase2Config {
    fn default() -> Self {
        Phase2Config { epochs: 10_000, learning_rate: 1e-4, seed: 2, hidden: default_hidden() }
    }
}

/// A trained network and its per-epoch loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub net: Mlp,
    pub loss_curve: Vec<f64>,
}

/// Node coordinates as an `N x 2` matrix in storage order.
pub fn grid_points(grid: &Grid2D) -> Array2<f64> {
    let mut pts = Array2::zeros((grid.len(), 2));
    for (i, (x, y)) in grid.nodes().enumerate() {
        pts[[i, 0]] = x;
        pts[[i, 1]] = y;
    }
    pts
}

/// Evaluates a two-output network at every node.
pub fn tabulate_vector(net: &Mlp, grid: &Grid2D) -> Result<VectorField> {
    if net.output_dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: net.output_dim() });
    }
    let out = net.forward_batch(grid_points(grid).view())?;
    VectorField::new(*grid, out.column(0).to_vec(), out.column(1).to_vec())
}

/// Precomputed moment targets and weights for a set of snapshot pairs.
pub struct MomentProblem<'a> {
    grid: Grid2D,
    points: Array2<f64>,
    targets: Vec<[f64; 2]>,
    weights: Vec<&'a [f64]>,
}

impl<'a> MomentProblem<'a> {
    pub fn new<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a SnapshotPair>,
    {
        let mut grid = None;
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        for p in pairs {
            let g = *p.f1.grid();
            if *grid.get_or_insert(g) != g || p.f2.grid() != &g {
                return Err(Error::GridMismatch);
            }
            if !(p.t2 > p.t1) {
                return Err(Error::Precondition("snapshot pair needs t2 > t1".into()));
            }
            let (a, b) = (centroid(&p.f1), centroid(&p.f2));
            let dt = p.t2 - p.t1;
            targets.push([(b.0 - a.0) / dt, (b.1 - a.1) / dt]);
            weights.push(p.f1.values());
        }
        let grid = grid.ok_or(Error::EmptyBatch)?;
        Ok(MomentProblem { points: grid_points(&grid), grid, targets, weights })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Moment target `d mu_j / dt` of pair `j`.
    pub fn target(&self, j: usize) -> [f64; 2] {
        self.targets[j]
    }

    fn check_net(&self, net: &Mlp) -> Result<()> {
        if net.input_dim() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: net.input_dim() });
        }
        if net.output_dim() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: net.output_dim() });
        }
        Ok(())
    }

    /// Residuals `target_jk - |dx| sum_i b_k(x_i) f_j(x_i)` for each `j` in
    /// `batch`, given the tabulated network output.
    fn residuals(&self, out: &Array2<f64>, batch: &[usize]) -> Vec<[f64; 2]> {
        let w = self.grid.cell_measure();
        let (bx, by) = (out.column(0), out.column(1));
        batch
            .iter()
            .map(|&j| {
                let f = self.weights[j];
                let (mut sx, mut sy) = (0.0, 0.0);
                for ((fi, bxi), byi) in f.iter().zip(bx.iter()).zip(by.iter()) {
                    sx += bxi * fi;
                    sy += byi * fi;
                }
                let t = self.targets[j];
                [t[0] - w * sx, t[1] - w * sy]
            })
            .collect()
    }

    /// Batch loss, summed in a canonical order so that it does not depend
    /// on the order of `batch`.
    pub fn loss(&self, net: &Mlp, batch: &[usize]) -> Result<f64> {
        self.check_net(net)?;
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let out = net.forward_batch(self.points.view())?;
        let mut terms: Vec<f64> = self.residuals(&out, batch).iter().map(|r| r[0] * r[0] + r[1] * r[1]).collect();
        terms.sort_by(f64::total_cmp);
        Ok(terms.iter().sum())
    }

    /// Batch loss and its parameter gradient.
    pub fn loss_and_grad(&self, net: &Mlp, batch: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check_net(net)?;
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let tape = net.forward_tape(self.points.view())?;
        let out = tape.output().to_owned();
        let res = self.residuals(&out, batch);
        let loss = res.iter().map(|r| r[0] * r[0] + r[1] * r[1]).sum();
        // dL/d b_k(x_i) = -2 |dx| sum_j r_jk f_j(x_i)
        let scale = -2.0 * self.grid.cell_measure();
        let mut upstream = Array2::zeros((self.grid.len(), 2));
        for (&j, r) in batch.iter().zip(&res) {
            let f = self.weights[j];
            for (mut row, fi) in upstream.rows_mut().into_iter().zip(f) {
                row[0] += scale * r[0] * fi;
                row[1] += scale * r[1] * fi;
            }
        }
        let grad = net.backward_batch(&tape, upstream.view())?;
        Ok((loss, grad))
    }
}

/// First-moment loss of `net_b` over `batch`.
pub fn phase1_loss(net_b: &Mlp, batch: &[SnapshotPair]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let problem = MomentProblem::new(batch)?;
    let all: Vec<usize> = (0..problem.len()).collect();
    problem.loss(net_b, &all)
}

pub fn train_phase1(corpus: &Corpus, cfg: &Phase1Config) -> Result<TrainingRun> {
    corpus.validate()?;
    if cfg.epochs == 0 {
        return Err(Error::Precondition("phase 1 needs at least one epoch".into()));
    }
    if cfg.batch_size == 0 || cfg.batch_size > corpus.len() {
        return Err(Error::Precondition(format!(
            "batch size {} must lie in 1..={}",
            cfg.batch_size,
            corpus.len()
        )));
    }
    let problem = MomentProblem::new(&corpus.pairs)?;
    let mut sizes = vec![2];
    sizes.extend(&cfg.hidden);
    sizes.push(2);
    let mut net = Mlp::glorot(&sizes, cfg.seed)?;
    let mut adam = AdamState::new(net.params().len(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..problem.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grad) = problem.loss_and_grad(&net, batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, step, loss });
            }
            adam.step(net.params_mut(), &grad)?;
            epoch_loss += loss;
        }
        curve.push(epoch_loss);
        log_progress("phase 1", epoch, cfg.epochs, epoch_loss);
    }
    Ok(TrainingRun { net, loss_curve: curve })
}

fn log_progress(phase: &str, epoch: usize, epochs: usize, loss: f64) {
    let every = (epochs / 20).max(1);
    if (epoch + 1).is_multiple_of(every) || epoch + 1 == epochs {
        info!("{phase}: epoch {}/{epochs} loss {loss:.6e}", epoch + 1);
    } else {
        debug!("{phase}: epoch {} loss {loss:.6e}", epoch + 1);
    }
}

/// Ritz energy of a scalar network against a fixed drift field.
pub struct RitzProblem {
    grid: Grid2D,
    points: Array2<f64>,
    b_star: Array2<f64>,
}

impl RitzProblem {
    pub fn new(b_star: &VectorField) -> Self {
        let grid = *b_star.grid();
        let mut b = Array2::zeros((grid.len(), 2));
        b.column_mut(0).assign(&ndarray::ArrayView1::from(b_star.ux()));
        b.column_mut(1).assign(&ndarray::ArrayView1::from(b_star.uy()));
        RitzProblem { grid, points: grid_points(&grid), b_star: b }
    }

    fn check_net(&self, net: &Mlp) -> Result<()> {
        if net.input_dim() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: net.input_dim() });
        }
        if net.output_dim() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: net.output_dim() });
        }
        Ok(())
    }

    fn energy(&self, grad: &Array2<f64>) -> f64 {
        let mut total = 0.0;
        for (g, b) in grad.rows().into_iter().zip(self.b_star.rows()) {
            total += 0.5 * (g[0] * g[0] + g[1] * g[1]) + g[0] * b[0] + g[1] * b[1];
        }
        self.grid.cell_measure() * total
    }

    pub fn loss(&self, net: &Mlp) -> Result<f64> {
        self.check_net(net)?;
        let tape = net.input_grad_tape(self.points.view())?;
        Ok(self.energy(&tape.input_grad(0)))
    }

    pub fn loss_and_grad(&self, net: &Mlp) -> Result<(f64, Vec<f64>)> {
        self.check_net(net)?;
        let tape = net.input_grad_tape(self.points.view())?;
        let g = tape.input_grad(0);
        let loss = self.energy(&g);
        // dI/dtheta = sum_i <d grad psi(x_i)/dtheta, |dx| (grad psi(x_i) + b*(x_i))>
        let mut v = g;
        v += &self.b_star;
        v *= self.grid.cell_measure();
        let grad = net.directional_input_grad_backward(&tape, v.view())?;
        Ok((loss, grad))
    }
}

pub fn phase2_loss(net_psi: &Mlp, b_star: &VectorField) -> Result<f64> {
    RitzProblem::new(b_star).loss(net_psi)
}

/// Phase 2 against the frozen drift network, tabulated once on `grid`.
pub fn train_phase2(net_b_star: &Mlp, grid: &Grid2D, cfg: &Phase2Config) -> Result<TrainingRun> {
    let b_star = tabulate_vector(net_b_star, grid)?;
    train_phase2_on_field(&b_star, cfg)
}

/// Full-grid Adam descent of the Ritz energy; one epoch is one step.
pub fn train_phase2_on_field(b_star: &VectorField, cfg: &Phase2Config) -> Result<TrainingRun> {
    if cfg.epochs == 0 {
        return Err(Error::Precondition("phase 2 needs at least one epoch".into()));
    }
    let problem = RitzProblem::new(b_star);
    let mut sizes = vec![2];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let mut net = Mlp::glorot(&sizes, cfg.seed)?;
    let mut adam = AdamState::new(net.params().len(), cfg.learning_rate);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (loss, grad) = problem.loss_and_grad(&net)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch, step: 0, loss });
        }
        adam.step(net.params_mut(), &grad)?;
        curve.push(loss);
        log_progress("phase 2", epoch, cfg.epochs, loss);
    }
    Ok(TrainingRun { net, loss_curve: curve })
}

/// Means of consecutive non-overlapping windows of `width` epochs.
pub fn window_means(curve: &[f64], width: usize) -> Vec<f64> {
    curve.chunks_exact(width.max(1)).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect()
}
