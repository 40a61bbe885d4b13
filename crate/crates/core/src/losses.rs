//! Least-squares adversarial, pixel and cycle objectives.
//!
//! Expectations over discriminator outputs are means over the patch grid.
//! Each loss has a `*_with_grad` twin returning the gradient with respect to
//! its tensor arguments; training backpropagates from those.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::PatchScores;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_pixel: f64,
    pub lambda_cyc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_pixel: 10.0,
            lambda_cyc: 5.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_pixel >= 0.0 && self.lambda_cyc >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be nonnegative, got lambda_pixel={} lambda_cyc={}",
                self.lambda_pixel, self.lambda_cyc
            )));
        }
        Ok(())
    }
}

fn count<T: Scalar>(t: &Tensor<T>) -> T {
    T::from_usize(t.len().max(1)).unwrap()
}

fn half<T: Scalar>() -> T {
    T::lit(0.5)
}

/// `1/2 * mean((D(fake) - 1)^2)`
pub fn gen_adv_loss<T: Scalar>(fake_scores: &PatchScores<T>) -> T {
    gen_adv_loss_with_grad(fake_scores).0
}

pub fn gen_adv_loss_with_grad<T: Scalar>(fake_scores: &PatchScores<T>) -> (T, PatchScores<T>) {
    let n = count(fake_scores);
    let loss = half::<T>()
        * fake_scores
            .data()
            .iter()
            .map(|&s| (s - T::one()) * (s - T::one()))
            .sum::<T>()
        / n;
    let grad = fake_scores.map(|s| (s - T::one()) / n);
    (loss, grad)
}

/// `1/2 * mean((D(real) - 1)^2) + 1/2 * mean(D(fake)^2)`
pub fn disc_loss<T: Scalar>(real_scores: &PatchScores<T>, fake_scores: &PatchScores<T>) -> Result<T> {
    Ok(disc_loss_with_grad(real_scores, fake_scores)?.0)
}

/// Returns the loss and its gradients with respect to the real and fake scores.
pub fn disc_loss_with_grad<T: Scalar>(
    real_scores: &PatchScores<T>,
    fake_scores: &PatchScores<T>,
) -> Result<(T, PatchScores<T>, PatchScores<T>)> {
    real_scores.same_shape(fake_scores)?;
    let (real_term, d_real) = gen_adv_loss_with_grad(real_scores);
    let n = count(fake_scores);
    let fake_term =
        half::<T>() * fake_scores.data().iter().map(|&s| s * s).sum::<T>() / n;
    let d_fake = fake_scores.map(|s| s / n);
    Ok((real_term + fake_term, d_real, d_fake))
}

/// Mean absolute error; gradient is with respect to `pred`.
pub fn l1_with_grad<T: Scalar>(target: &Tensor<T>, pred: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    target.same_shape(pred)?;
    let n = count(pred);
    let mut grad = pred.zeros_like();
    let mut sum = T::zero();
    for ((g, &t), &p) in grad.data_mut().iter_mut().zip(target.data()).zip(pred.data()) {
        let diff = p - t;
        sum += diff.abs();
        *g = if diff > T::zero() {
            T::one() / n
        } else if diff < T::zero() {
            -T::one() / n
        } else {
            T::zero()
        };
    }
    Ok((sum / n, grad))
}

/// `mean |B_t - G(A_t)|`
pub fn pixel_loss<T: Scalar>(gt: &Tensor<T>, pred: &Tensor<T>) -> Result<T> {
    Ok(l1_with_grad(gt, pred)?.0)
}

/// `mean |A_r - G_B2A(G_A2B(A_r))|`
pub fn cycle_loss<T: Scalar>(original: &Tensor<T>, reconstructed: &Tensor<T>) -> Result<T> {
    Ok(l1_with_grad(original, reconstructed)?.0)
}

/// Adversarial term plus `lambda_pixel` times the pixel term.
pub fn teacher_total<T: Scalar>(
    fake_depth_scores: &PatchScores<T>,
    gt_depth: &Tensor<T>,
    pred_depth: &Tensor<T>,
    weights: &LossWeights,
) -> Result<T> {
    weights.validate()?;
    Ok(gen_adv_loss(fake_depth_scores)
        + T::lit(weights.lambda_pixel) * pixel_loss(gt_depth, pred_depth)?)
}

/// Depth-branch adversarial term, RGB-branch adversarial term and
/// `lambda_cyc` times the cycle term.
pub fn student_total<T: Scalar>(
    fake_depth_scores: &PatchScores<T>,
    fake_rgb_scores: &PatchScores<T>,
    original_rgb: &Tensor<T>,
    reconstructed_rgb: &Tensor<T>,
    weights: &LossWeights,
) -> Result<T> {
    weights.validate()?;
    Ok(gen_adv_loss(fake_depth_scores)
        + gen_adv_loss(fake_rgb_scores)
        + T::lit(weights.lambda_cyc) * cycle_loss(original_rgb, reconstructed_rgb)?)
}
