//! Fully connected tanh networks with hand-written derivatives.
//!
//! All weights and biases live in one flat parameter vector, layer by layer:
//! the `n_out x n_in` weight matrix (row-major) followed by the `n_out`
//! biases. Hidden layers use `tanh`, the output layer is affine.
//!
//! Four evaluation modes are provided, each in a per-point form (this
//! module) and a batched form over many inputs ([`batch`]):
//!
//! * value,
//! * parameter gradient of `<u, net(x)>` (reverse mode),
//! * input Jacobian (forward mode),
//! * parameter gradient of the directional input derivative
//!   `<grad_x net(x), v>` for scalar networks (forward-over-reverse).

mod adam;
pub mod batch;
mod checkpoint;

pub use adam::{adam_step, AdamState};
pub use batch::{ForwardTape, InputGradTape};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, NET_MAGIC};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `tanh` through one `exp`, falling back to the library routine near zero.
#[inline]
pub(crate) fn tanh(x: f64) -> f64 {
    if x.abs() < 0.1 {
        x.tanh()
    } else {
        1.0 - 2.0 / ((2.0 * x).exp() + 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Offsets of one layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerSpan {
    pub n_in: usize,
    pub n_out: usize,
    pub w: usize,
    pub b: usize,
}

impl Mlp {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(())
    }

    /// Network with every parameter zero.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(sizes)?;
        Ok(Mlp { sizes: sizes.to_vec(), params: vec![0.0; Self::param_count(sizes)] })
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let expected = Self::param_count(sizes);
        if params.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: params.len() });
        }
        Ok(Mlp { sizes: sizes.to_vec(), params })
    }

    /// Glorot-uniform weights (gain 1) and zero biases.
    pub fn glorot(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for span in net.spans() {
            let limit = (6.0 / (span.n_in + span.n_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            for w in &mut net.params[span.w..span.b] {
                *w = dist.sample(&mut rng);
            }
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn spans(&self) -> Vec<LayerSpan> {
        let mut off = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let span = LayerSpan { n_in: w[0], n_out: w[1], w: off, b: off + w[0] * w[1] };
                off = span.b + w[1];
                span
            })
            .collect()
    }

    /// Adds `shift` to the output-layer biases.
    pub fn shift_output_bias(&mut self, shift: &[f64]) -> Result<()> {
        if shift.len() != self.output_dim() {
            return Err(Error::DimensionMismatch { expected: self.output_dim(), got: shift.len() });
        }
        let last = *self.spans().last().unwrap();
        for (b, s) in self.params[last.b..last.b + last.n_out].iter_mut().zip(shift) {
            *b += s;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    /// `y = W a + b` for one layer.
    fn affine(&self, span: &LayerSpan, a: &[f64]) -> Vec<f64> {
        let w = &self.params[span.w..span.b];
        let b = &self.params[span.b..span.b + span.n_out];
        (0..span.n_out)
            .map(|o| {
                let row = &w[o * span.n_in..(o + 1) * span.n_in];
                b[o] + row.iter().zip(a).map(|(w, a)| w * a).sum::<f64>()
            })
            .collect()
    }

    /// `W^T g` for one layer.
    fn affine_transpose(&self, span: &LayerSpan, g: &[f64]) -> Vec<f64> {
        let w = &self.params[span.w..span.b];
        let mut out = vec![0.0; span.n_in];
        for (o, go) in g.iter().enumerate() {
            for (i, oi) in out.iter_mut().enumerate() {
                *oi += w[o * span.n_in + i] * go;
            }
        }
        out
    }

    /// Activations of every layer, input first and output last.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let spans = self.spans();
        let mut acts = vec![x.to_vec()];
        for (l, span) in spans.iter().enumerate() {
            let mut z = self.affine(span, acts.last().unwrap());
            if l + 1 < spans.len() {
                z.iter_mut().for_each(|v| *v = tanh(*v));
            }
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.activations(x).pop().unwrap())
    }

    /// Gradient of `<upstream, net(x)>` with respect to the parameters.
    pub fn grad_params(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch { expected: self.output_dim(), got: upstream.len() });
        }
        let spans = self.spans();
        let acts = self.activations(x);
        let mut grad = vec![0.0; self.params.len()];
        let mut g = upstream.to_vec();
        for l in (0..spans.len()).rev() {
            let span = spans[l];
            let a_prev = &acts[l];
            for o in 0..span.n_out {
                grad[span.b + o] += g[o];
                for i in 0..span.n_in {
                    grad[span.w + o * span.n_in + i] += g[o] * a_prev[i];
                }
            }
            if l > 0 {
                let back = self.affine_transpose(&span, &g);
                g = back.iter().zip(a_prev).map(|(b, a)| b * (1.0 - a * a)).collect();
            }
        }
        Ok(grad)
    }

    /// Jacobian `d net / d x`, row-major `output_dim x input_dim`.
    pub fn grad_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let (d, m) = (self.input_dim(), self.output_dim());
        let mut jac = vec![0.0; m * d];
        for j in 0..d {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            let (_, dz) = self.tangent_pass(x, &e);
            let out = dz.last().unwrap();
            for k in 0..m {
                jac[k * d + j] = out[k];
            }
        }
        Ok(jac)
    }

    /// Forward-mode pass in direction `v`: activations and pre-activation
    /// tangents of every layer (tangents indexed from the first layer).
    fn tangent_pass(&self, x: &[f64], v: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let spans = self.spans();
        let acts = self.activations(x);
        let mut dz_all = Vec::with_capacity(spans.len());
        let mut da = v.to_vec();
        for (l, span) in spans.iter().enumerate() {
            let w = &self.params[span.w..span.b];
            let dz: Vec<f64> = (0..span.n_out)
                .map(|o| w[o * span.n_in..(o + 1) * span.n_in].iter().zip(&da).map(|(w, t)| w * t).sum())
                .collect();
            if l + 1 < spans.len() {
                da = dz.iter().zip(&acts[l + 1]).map(|(t, a)| t * (1.0 - a * a)).collect();
            }
            dz_all.push(dz);
        }
        (acts, dz_all)
    }

    /// Gradient with respect to the parameters of
    /// `upstream * <grad_x net(x), v>` for a scalar network, obtained by
    /// differentiating the forward-mode tangent pass in reverse.
    pub fn grad_params_of_directional_input_grad(&self, x: &[f64], v: &[f64], upstream: f64) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if v.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: v.len() });
        }
        if self.output_dim() != 1 {
            return Err(Error::RequiresScalarOutput(self.output_dim()));
        }
        let spans = self.spans();
        let (acts, dz) = self.tangent_pass(x, v);
        let nl = spans.len();
        // post-activation tangents: t[0] = v, t[l] = s_l * dz_l for hidden l
        let mut t = vec![v.to_vec()];
        for l in 1..nl {
            t.push(dz[l - 1].iter().zip(&acts[l]).map(|(d, a)| d * (1.0 - a * a)).collect());
        }

        let mut grad = vec![0.0; self.params.len()];
        // adjoints of the tangent (dz) and primal (z) pre-activations of layer l
        let mut gdz = vec![upstream];
        let mut gz = vec![0.0];
        for l in (0..nl).rev() {
            let span = spans[l];
            for o in 0..span.n_out {
                grad[span.b + o] += gz[o];
                for i in 0..span.n_in {
                    grad[span.w + o * span.n_in + i] += gz[o] * acts[l][i] + gdz[o] * t[l][i];
                }
            }
            if l == 0 {
                break;
            }
            // back through a = tanh(z), t = (1 - a^2) dz of the layer below
            let ga_t = self.affine_transpose(&span, &gdz);
            let ga = self.affine_transpose(&span, &gz);
            let a = &acts[l];
            let dzl = &dz[l - 1];
            let mut next_gdz = vec![0.0; span.n_in];
            let mut next_gz = vec![0.0; span.n_in];
            for i in 0..span.n_in {
                let s = 1.0 - a[i] * a[i];
                next_gdz[i] = ga_t[i] * s;
                let ga_total = ga[i] - 2.0 * a[i] * ga_t[i] * dzl[i];
                next_gz[i] = ga_total * s;
            }
            gdz = next_gdz;
            gz = next_gz;
        }
        Ok(grad)
    }
}
