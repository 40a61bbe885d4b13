use crate::tensor::{Scalar, Tensor};

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-channel statistics saved by [`instance_norm`] for the backward pass.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    pub inv_std: Vec<T>,
}

/// Instance normalization without affine parameters: each channel of the
/// single image is shifted to zero mean and scaled to unit variance.
pub fn instance_norm<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, NormCache<T>) {
    let n = T::from_usize(x.plane_len()).unwrap();
    let eps = T::lit(INSTANCE_NORM_EPS);
    let mut y = x.clone();
    let mut inv_std = Vec::with_capacity(x.channels());
    for c in 0..x.channels() {
        let plane = y.plane_mut(c);
        let mean = plane.iter().copied().sum::<T>() / n;
        let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = T::one() / (var + eps).sqrt();
        plane.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        inv_std.push(inv);
    }
    (y, NormCache { inv_std })
}

/// Gradient of [`instance_norm`] given its output `y`.
pub fn instance_norm_backward<T: Scalar>(
    y: &Tensor<T>,
    cache: &NormCache<T>,
    dy: &Tensor<T>,
) -> Tensor<T> {
    let n = T::from_usize(y.plane_len()).unwrap();
    let mut dx = dy.clone();
    for c in 0..y.channels() {
        let yp = y.plane(c);
        let mean_dy = dy.plane(c).iter().copied().sum::<T>() / n;
        let mean_dy_y = dy
            .plane(c)
            .iter()
            .zip(yp)
            .map(|(&g, &v)| g * v)
            .sum::<T>()
            / n;
        let inv = cache.inv_std[c];
        for (d, &v) in dx.plane_mut(c).iter_mut().zip(yp) {
            *d = inv * (*d - mean_dy - v * mean_dy_y);
        }
    }
    dx
}
