//! Minimal layer library with explicit backward passes.
//!
//! Every layer exposes `forward` plus a `backward` that accumulates parameter
//! gradients into a same-shaped gradient buffer and optionally returns the
//! input gradient. Networks wire these together by hand.

mod activation;
mod adam;
mod conv;
mod linear;
mod norm;
mod params;

pub use activation::{
    leaky_relu, leaky_relu_backward, relu, relu_backward, tanh, tanh_backward,
};
pub use adam::{Adam, AdamConfig};
pub use conv::{reflection_pad, reflection_pad_backward, Conv2d, ConvTranspose2d};
pub use linear::{
    global_avg_pool, global_avg_pool_backward, softmax, softmax_cross_entropy, Linear,
};
pub use norm::{instance_norm, instance_norm_backward, NormCache, INSTANCE_NORM_EPS};
pub use params::{zeros_like, Parameters};

pub(crate) use params::{prefixed, prefixed_mut};
