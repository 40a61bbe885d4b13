use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Scalar;

use super::params::Parameters;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer state for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new<P: Parameters<T>>(config: AdamConfig, params: &P) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
        Self {
            config,
            step: 0,
            first_moment: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// One update `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn update<P: Parameters<T>>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        if grads.len() != params.len() || params.len() != self.first_moment.len() {
            return Err(Error::Shape(
                "optimizer state does not match parameter set".into(),
            ));
        }
        self.step += 1;
        let b1 = T::lit(self.config.beta1);
        let b2 = T::lit(self.config.beta2);
        let one = T::one();
        let bias1 = one - T::lit(self.config.beta1.powi(self.step as i32));
        let bias2 = one - T::lit(self.config.beta2.powi(self.step as i32));
        let eps = T::lit(self.config.eps);
        let lr = T::lit(lr);
        for (i, ((_, p), (_, g))) in params.iter_mut().zip(&grads).enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            if m.len() != p.len() || g.len() != p.len() {
                return Err(Error::Shape(format!("optimizer tensor {i} size mismatch")));
            }
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Linear::<f64>::new(2, 1);
        p.weight = vec![1.0, -1.0];
        let mut g = Linear::<f64>::new(2, 1);
        g.weight = vec![0.3, -2.0];
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.update(&mut p, &g, 0.1).unwrap();
        // m_hat = g, v_hat = g^2 on the first step
        assert!((p.weight[0] - 0.9).abs() < 1e-6);
        assert!((p.weight[1] + 0.9).abs() < 1e-6);
        assert_eq!(p.bias, vec![0.0]);
    }

    #[test]
    fn zero_rate_leaves_parameters_bit_identical() {
        let mut p = Linear::<f32>::new(3, 2);
        p.weight = vec![0.1, 0.2, -0.3, 1e-7, -5.0, 3.0];
        let before = p.clone();
        let mut g = p.clone();
        g.weight.iter_mut().for_each(|w| *w *= 7.0);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.update(&mut p, &g, 0.0).unwrap();
        assert_eq!(p, before);
    }
}
