use crate::tensor::Scalar;

use super::conv::{Conv2d, ConvTranspose2d};
use super::linear::Linear;

/// Uniform access to the trainable buffers of a layer or model.
///
/// Ordering is stable: optimizers and checkpoints rely on it.
pub trait Parameters<T: Scalar> {
    fn tensors(&self) -> Vec<(String, &[T])>;

    fn tensors_mut(&mut self) -> Vec<(String, &mut [T])>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn zero_all(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Flattened copy of every parameter, in [`Parameters::tensors`] order.
    fn flat(&self) -> Vec<T> {
        self.tensors()
            .into_iter()
            .flat_map(|(_, t)| t.iter().copied())
            .collect()
    }
}

/// Same structure as `p` with every parameter set to zero; used as a gradient buffer.
pub fn zeros_like<T: Scalar, P: Parameters<T> + Clone>(p: &P) -> P {
    let mut z = p.clone();
    z.zero_all();
    z
}

pub(crate) fn prefixed<'a, T>(
    prefix: &str,
    inner: Vec<(String, &'a [T])>,
) -> impl Iterator<Item = (String, &'a [T])> {
    let prefix = prefix.to_string();
    inner
        .into_iter()
        .map(move |(n, t)| (format!("{prefix}.{n}"), t))
}

pub(crate) fn prefixed_mut<'a, T>(
    prefix: &str,
    inner: Vec<(String, &'a mut [T])>,
) -> impl Iterator<Item = (String, &'a mut [T])> {
    let prefix = prefix.to_string();
    inner
        .into_iter()
        .map(move |(n, t)| (format!("{prefix}.{n}"), t))
}

macro_rules! weight_bias_params {
    ($ty:ident) => {
        impl<T: Scalar> Parameters<T> for $ty<T> {
            fn tensors(&self) -> Vec<(String, &[T])> {
                vec![
                    ("weight".to_string(), self.weight.as_slice()),
                    ("bias".to_string(), self.bias.as_slice()),
                ]
            }

            fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
                vec![
                    ("weight".to_string(), self.weight.as_mut_slice()),
                    ("bias".to_string(), self.bias.as_mut_slice()),
                ]
            }
        }
    };
}

weight_bias_params!(Conv2d);
weight_bias_params!(ConvTranspose2d);
weight_bias_params!(Linear);
