use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Mat, Scalar, Tensor};

use super::conv::normal_init;

/// Fully connected layer. Weight layout `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub inputs: usize,
    pub outputs: usize,
}

impl<T: Scalar> Linear<T> {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
            inputs,
            outputs,
        }
    }

    pub fn init_normal<R: Rng + ?Sized>(&mut self, std: f64, rng: &mut R) {
        normal_init(&mut self.weight, std, rng);
        self.bias.iter_mut().for_each(|b| *b = T::zero());
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.inputs {
            return Err(Error::Shape(format!(
                "linear layer expects {} inputs, got {}",
                self.inputs,
                x.len()
            )));
        }
        let mut y = self.bias.clone();
        gemm(
            Mat::new(&self.weight, self.outputs, self.inputs),
            Mat::new(x, self.inputs, 1),
            T::one(),
            &mut y,
        );
        Ok(y)
    }

    pub fn backward(&self, x: &[T], dy: &[T], grad: &mut Linear<T>) -> Vec<T> {
        for (o, &g) in dy.iter().enumerate() {
            grad.bias[o] += g;
            let row = &mut grad.weight[o * self.inputs..(o + 1) * self.inputs];
            row.iter_mut().zip(x).for_each(|(w, &xi)| *w += g * xi);
        }
        let mut dx = vec![T::zero(); self.inputs];
        gemm(
            Mat::new(&self.weight, self.outputs, self.inputs).t(),
            Mat::new(dy, self.outputs, 1),
            T::zero(),
            &mut dx,
        );
        dx
    }
}

/// Spatial mean of each channel.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Vec<T> {
    let n = T::from_usize(x.plane_len()).unwrap();
    (0..x.channels())
        .map(|c| x.plane(c).iter().copied().sum::<T>() / n)
        .collect()
}

pub fn global_avg_pool_backward<T: Scalar>(
    dy: &[T],
    channels: usize,
    height: usize,
    width: usize,
) -> Tensor<T> {
    let n = T::from_usize(height * width).unwrap();
    Tensor::from_fn(channels, height, width, |c, _, _| dy[c] / n)
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| a.max(b));
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `softmax(logits)` against `target`, with its logit gradient.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], target: usize) -> (T, Vec<T>) {
    let mut p = softmax(logits);
    let loss = -(p[target].max(T::min_positive_value())).ln();
    p[target] -= T::one();
    (loss, p)
}
