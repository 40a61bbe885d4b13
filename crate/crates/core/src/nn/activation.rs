use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Uses the forward output; `y > 0` iff `x > 0`.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    dx.data_mut()
        .iter_mut()
        .zip(y.data())
        .for_each(|(d, &v)| {
            if v <= T::zero() {
                *d = T::zero();
            }
        });
    dx
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::lit(slope);
    x.map(|v| if v > T::zero() { v } else { v * s })
}

/// Uses the forward output; the sign is preserved for positive slopes.
pub fn leaky_relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::lit(slope);
    let mut dx = dy.clone();
    dx.data_mut()
        .iter_mut()
        .zip(y.data())
        .for_each(|(d, &v)| {
            if v <= T::zero() {
                *d *= s;
            }
        });
    dx
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

pub fn tanh_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    dx.data_mut()
        .iter_mut()
        .zip(y.data())
        .for_each(|(d, &v)| *d *= T::one() - v * v);
    dx
}
