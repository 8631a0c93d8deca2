use crate::error::{Error, Result};

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::DimensionMismatch { expected: self.m.len(), got: params.len() });
        }
        if grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch { expected: self.m.len(), got: grad.len() });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64]) -> Result<()> {
    state.step(params, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // f = theta^2 at theta = 1: g = 2, m_hat = g, v_hat = g^2
        let mut st = AdamState::new(1, 0.1);
        let mut theta = [1.0];
        st.step(&mut theta, &[2.0]).unwrap();
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((theta[0] - expected).abs() < 1e-15);
        assert!((theta[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut st = AdamState::new(3, 0.1);
        let mut theta = [1.0, -2.0, 3.0];
        for _ in 0..50 {
            st.step(&mut theta, &[0.0; 3]).unwrap();
        }
        assert_eq!(theta, [1.0, -2.0, 3.0]);
        assert_eq!(st.steps(), 50);
    }

    #[test]
    fn quadratic_descent() {
        let mut st = AdamState::new(1, 0.1);
        let mut theta = [1.0];
        let mut trace = vec![theta[0]];
        for _ in 0..200 {
            let g = [2.0 * theta[0]];
            st.step(&mut theta, &g).unwrap();
            trace.push(theta[0]);
        }
        // monotone until the iterate first gets close to the minimiser
        let first_small = trace.iter().position(|t| t.abs() < 0.1).expect("never reached |theta| < 0.1");
        assert!(trace[..=first_small].windows(2).all(|w| w[1].abs() < w[0].abs()));
        assert!(trace.last().unwrap().abs() < 0.1);
    }

    #[test]
    fn shape_mismatch() {
        let mut st = AdamState::new(2, 0.1);
        assert!(st.step(&mut [0.0; 3], &[0.0; 3]).is_err());
        assert!(st.step(&mut [0.0; 2], &[0.0; 1]).is_err());
    }
}
