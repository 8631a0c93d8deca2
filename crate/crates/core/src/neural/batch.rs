//! Batched evaluation: one row per input point, dense matrix products per
//! layer. Parameter gradients are summed over the rows.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::{LayerSpan, Mlp};
use crate::error::{Error, Result};

/// Activations of every layer for a batch of inputs.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    acts: Vec<Array2<f64>>,
}

impl ForwardTape {
    /// Network output, one row per input.
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.acts.last().unwrap().view()
    }
}

/// Activations plus the forward-mode tangents along each input axis.
#[derive(Debug, Clone)]
pub struct InputGradTape {
    acts: Vec<Array2<f64>>,
    // dz[j][l]: pre-activation tangent of layer l along input axis j
    dz: Vec<Vec<Array2<f64>>>,
}

impl InputGradTape {
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.acts.last().unwrap().view()
    }

    /// `d out_k / d x_j` for every row, as a `batch x input_dim` matrix.
    pub fn input_grad(&self, k: usize) -> Array2<f64> {
        let batch = self.acts[0].nrows();
        let mut g = Array2::zeros((batch, self.dz.len()));
        for (j, dz) in self.dz.iter().enumerate() {
            g.column_mut(j).assign(&dz.last().unwrap().column(k));
        }
        g
    }
}

/// `sum_j diag(v[:, j]) parts[j]`.
fn weighted_rows(parts: &[&Array2<f64>], v: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut acc = Array2::zeros(parts[0].dim());
    for (j, part) in parts.iter().enumerate() {
        Zip::from(acc.rows_mut()).and(part.rows()).and(v.column(j)).for_each(|mut a, p, &vj| {
            a.scaled_add(vj, &p);
        });
    }
    acc
}

impl Mlp {
    fn weights(&self, span: &LayerSpan) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((span.n_out, span.n_in), &self.params[span.w..span.b]).unwrap()
    }

    fn biases(&self, span: &LayerSpan) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[span.b..span.b + span.n_out])
    }

    fn check_batch(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.ncols() });
        }
        Ok(())
    }

    fn batch_activations(&self, x: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        let spans = self.spans();
        let mut acts = Vec::with_capacity(spans.len() + 1);
        acts.push(x.to_owned());
        for (l, span) in spans.iter().enumerate() {
            let mut z = acts[l].dot(&self.weights(span).t());
            z += &self.biases(span);
            if l + 1 < spans.len() {
                z.mapv_inplace(super::tanh);
            }
            acts.push(z);
        }
        acts
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_batch(&x)?;
        Ok(self.batch_activations(x).pop().unwrap())
    }

    pub fn forward_tape(&self, x: ArrayView2<'_, f64>) -> Result<ForwardTape> {
        self.check_batch(&x)?;
        Ok(ForwardTape { acts: self.batch_activations(x) })
    }

    /// Sum over rows of the parameter gradient of `<upstream_i, net(x_i)>`.
    pub fn backward_batch(&self, tape: &ForwardTape, upstream: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let out = tape.output();
        if upstream.dim() != out.dim() {
            return Err(Error::DimensionMismatch { expected: out.len(), got: upstream.len() });
        }
        let spans = self.spans();
        let mut grad = vec![0.0; self.params.len()];
        let mut g = upstream.to_owned();
        for l in (0..spans.len()).rev() {
            let span = spans[l];
            let a_prev = &tape.acts[l];
            let dw = g.t().dot(a_prev);
            grad[span.w..span.b].iter_mut().zip(dw.iter()).for_each(|(d, s)| *d = *s);
            for (dst, s) in grad[span.b..span.b + span.n_out].iter_mut().zip(g.sum_axis(Axis(0))) {
                *dst = s;
            }
            if l > 0 {
                let mut back = g.dot(&self.weights(&span));
                Zip::from(&mut back).and(a_prev).for_each(|b, &a| *b *= 1.0 - a * a);
                g = back;
            }
        }
        Ok(grad)
    }

    /// Forward pass carrying tangents along every input axis.
    pub fn input_grad_tape(&self, x: ArrayView2<'_, f64>) -> Result<InputGradTape> {
        self.check_batch(&x)?;
        let spans = self.spans();
        let acts = self.batch_activations(x.view());
        let batch = x.nrows();
        let d = self.input_dim();
        let mut dz = Vec::with_capacity(d);
        for j in 0..d {
            let mut per_layer = Vec::with_capacity(spans.len());
            // first layer: the tangent of x along axis j is e_j, so dz is
            // column j of W broadcast over the rows
            let w0 = self.weights(&spans[0]);
            let col = w0.column(j);
            let mut z = Array2::zeros((batch, spans[0].n_out));
            z.rows_mut().into_iter().for_each(|mut r| r.assign(&col));
            per_layer.push(z);
            for l in 1..spans.len() {
                let mut t = per_layer[l - 1].clone();
                Zip::from(&mut t).and(&acts[l]).for_each(|t, &a| *t *= 1.0 - a * a);
                per_layer.push(t.dot(&self.weights(&spans[l]).t()));
            }
            dz.push(per_layer);
        }
        Ok(InputGradTape { acts, dz })
    }

    /// Sum over rows of the parameter gradient of `<grad_x net(x_i), v_i>`
    /// for a scalar network.
    pub fn directional_input_grad_backward(&self, tape: &InputGradTape, v: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if self.output_dim() != 1 {
            return Err(Error::RequiresScalarOutput(self.output_dim()));
        }
        let x = &tape.acts[0];
        if v.dim() != x.dim() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: v.len() });
        }
        let spans = self.spans();
        let nl = spans.len();
        let batch = x.nrows();

        // dz_v[l] for hidden layers; t_v[l] is the post-activation tangent
        // entering layer l (t_v[0] = v)
        let dz_v: Vec<Array2<f64>> = (0..nl - 1)
            .map(|l| {
                let parts: Vec<&Array2<f64>> = tape.dz.iter().map(|per_axis| &per_axis[l]).collect();
                weighted_rows(&parts, v)
            })
            .collect();
        let mut t_v = vec![v.to_owned()];
        for l in 1..nl {
            let mut t = dz_v[l - 1].clone();
            Zip::from(&mut t).and(&tape.acts[l]).for_each(|t, &a| *t *= 1.0 - a * a);
            t_v.push(t);
        }

        let mut grad = vec![0.0; self.params.len()];
        let mut gdz = Array2::<f64>::ones((batch, 1));
        let mut gz: Option<Array2<f64>> = None;
        for l in (0..nl).rev() {
            let span = spans[l];
            let mut dw = gdz.t().dot(&t_v[l]);
            if let Some(gz) = &gz {
                dw += &gz.t().dot(&tape.acts[l]);
                for (dst, s) in grad[span.b..span.b + span.n_out].iter_mut().zip(gz.sum_axis(Axis(0))) {
                    *dst = s;
                }
            }
            grad[span.w..span.b].iter_mut().zip(dw.iter()).for_each(|(d, s)| *d = *s);
            if l == 0 {
                break;
            }
            let w = self.weights(&span);
            let ga_t = gdz.dot(&w);
            let mut ga = match &gz {
                Some(gz) => gz.dot(&w),
                None => Array2::zeros(ga_t.dim()),
            };
            let a = &tape.acts[l];
            let dzl = &dz_v[l - 1];
            let mut next_gdz = ga_t.clone();
            Zip::from(&mut next_gdz).and(a).for_each(|g, &a| *g *= 1.0 - a * a);
            Zip::from(&mut ga).and(&ga_t).and(dzl).and(a).for_each(|g, &gt, &dz, &a| {
                *g = (*g - 2.0 * a * gt * dz) * (1.0 - a * a);
            });
            gdz = next_gdz;
            gz = Some(ga);
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_inputs(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, 2), |_| rng.gen_range(-3.0..3.0))
    }

    fn max_rel(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().map(|v| v.abs()).fold(1e-12, f64::max);
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
    }

    #[test]
    fn batch_forward_matches_pointwise() {
        let net = Mlp::glorot(&[2, 7, 5, 3], 8).unwrap();
        let x = random_inputs(11, 1);
        let out = net.forward_batch(x.view()).unwrap();
        for (i, row) in x.rows().into_iter().enumerate() {
            let p = net.forward(row.as_slice().unwrap()).unwrap();
            assert!(max_rel(out.row(i).as_slice().unwrap(), &p) < 1e-14);
        }
    }

    #[test]
    fn batch_backward_matches_pointwise_sum() {
        let net = Mlp::glorot(&[2, 6, 4, 2], 2).unwrap();
        let x = random_inputs(9, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let up = Array2::from_shape_fn((9, 2), |_| rng.gen_range(-1.0..1.0));
        let tape = net.forward_tape(x.view()).unwrap();
        let g = net.backward_batch(&tape, up.view()).unwrap();
        let mut expected = vec![0.0; g.len()];
        for i in 0..9 {
            let gi = net.grad_params(x.row(i).as_slice().unwrap(), up.row(i).as_slice().unwrap()).unwrap();
            expected.iter_mut().zip(gi).for_each(|(e, v)| *e += v);
        }
        assert!(max_rel(&g, &expected) < 1e-12);
    }

    #[test]
    fn batch_input_grad_matches_pointwise() {
        let net = Mlp::glorot(&[2, 6, 6, 1], 5).unwrap();
        let x = random_inputs(7, 6);
        let tape = net.input_grad_tape(x.view()).unwrap();
        let g = tape.input_grad(0);
        for i in 0..7 {
            let jac = net.grad_input(x.row(i).as_slice().unwrap()).unwrap();
            assert!(max_rel(g.row(i).as_slice().unwrap(), &jac) < 1e-13);
        }
    }

    #[test]
    fn batch_directional_matches_pointwise_sum() {
        let net = Mlp::glorot(&[2, 5, 4, 1], 9).unwrap();
        let x = random_inputs(8, 10);
        let v = random_inputs(8, 11);
        let tape = net.input_grad_tape(x.view()).unwrap();
        let g = net.directional_input_grad_backward(&tape, v.view()).unwrap();
        let mut expected = vec![0.0; g.len()];
        for i in 0..8 {
            let gi = net
                .grad_params_of_directional_input_grad(x.row(i).as_slice().unwrap(), v.row(i).as_slice().unwrap(), 1.0)
                .unwrap();
            expected.iter_mut().zip(gi).for_each(|(e, v)| *e += v);
        }
        assert!(max_rel(&g, &expected) < 1e-12);
    }

    #[test]
    fn shallow_network_directional_gradient() {
        // no hidden layer: the loop body runs only for the output layer
        let net = Mlp::from_params(&[2, 1], vec![1.5, -0.5, 2.0]).unwrap();
        let x = random_inputs(3, 1);
        let v = random_inputs(3, 2);
        let tape = net.input_grad_tape(x.view()).unwrap();
        let g = net.directional_input_grad_backward(&tape, v.view()).unwrap();
        let sums = v.sum_axis(Axis(0));
        assert!((g[0] - sums[0]).abs() < 1e-14 && (g[1] - sums[1]).abs() < 1e-14 && g[2] == 0.0);
    }

    #[test]
    fn batch_dimension_checks() {
        let net = Mlp::glorot(&[2, 3, 2], 1).unwrap();
        let bad = Array2::<f64>::zeros((4, 3));
        assert!(net.forward_batch(bad.view()).is_err());
        let x = Array2::<f64>::zeros((4, 2));
        let tape = net.input_grad_tape(x.view()).unwrap();
        assert!(matches!(net.directional_input_grad_backward(&tape, x.view()), Err(Error::RequiresScalarOutput(2))));
    }
}
