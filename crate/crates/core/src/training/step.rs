use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainingConfig;
use super::lr_schedule;
use super::pool::ImagePool;
use crate::datasets::{PairedSample, UnpairedSample};
use crate::error::{Error, Result};
use crate::losses::{disc_loss_with_grad, gen_adv_loss_with_grad, l1_with_grad, LossWeights};
use crate::models::{Discriminator, Generator};
use crate::nn::{zeros_like, Adam};
use crate::tensor::{ImageTensor, Scalar, Tensor};

/// Sub-seed tags for the independent random streams of a run.
pub(crate) mod tag {
    pub const G_A2B: u64 = 1;
    pub const G_B2A: u64 = 2;
    pub const D_DEPTH: u64 = 3;
    pub const D_RGB: u64 = 4;
    pub const DEPTH_POOL: u64 = 5;
    pub const RGB_POOL: u64 = 6;
    pub const SHUFFLE: u64 = 7;
}

pub(crate) fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng.next_u64()
}

/// Everything that evolves during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub global_step: u64,
    pub g_a2b: Generator<f32>,
    pub g_b2a: Generator<f32>,
    pub d_depth: Discriminator<f32>,
    pub d_rgb: Discriminator<f32>,
    /// Teacher-phase moments of the shared generator.
    pub opt_g_a2b: Adam<f32>,
    /// Student-phase moments of the shared generator.
    pub opt_g_a2b_student: Adam<f32>,
    pub opt_g_b2a: Adam<f32>,
    pub opt_d_depth: Adam<f32>,
    pub opt_d_rgb: Adam<f32>,
    pub depth_pool: ImagePool,
    pub rgb_pool: ImagePool,
}

impl TrainState {
    /// Freshly initialized networks, zero moments, empty pools.
    pub fn new(config: &TrainingConfig) -> Self {
        let gc = config.generator();
        let dc = config.discriminator();
        let s = |t| derive_seed(config.seed, t);
        let g_a2b = Generator::init(&gc, s(tag::G_A2B));
        let g_b2a = Generator::init(&gc, s(tag::G_B2A));
        let d_depth = Discriminator::init(&dc, s(tag::D_DEPTH));
        let d_rgb = Discriminator::init(&dc, s(tag::D_RGB));
        let adam = config.adam();
        Self {
            epoch: 0,
            global_step: 0,
            opt_g_a2b: Adam::new(adam, &g_a2b),
            opt_g_a2b_student: Adam::new(adam, &g_a2b),
            opt_g_b2a: Adam::new(adam, &g_b2a),
            opt_d_depth: Adam::new(adam, &d_depth),
            opt_d_rgb: Adam::new(adam, &d_rgb),
            g_a2b,
            g_b2a,
            d_depth,
            d_rgb,
            depth_pool: ImagePool::new(config.pool_capacity, s(tag::DEPTH_POOL)),
            rgb_pool: ImagePool::new(config.pool_capacity, s(tag::RGB_POOL)),
        }
    }

    /// Learning rates `(teacher, student)` in effect during the current epoch.
    pub fn rates(&self, config: &TrainingConfig) -> (f64, f64) {
        let n = self.epoch + 1;
        (
            lr_schedule(n, config.alpha_teach, config.teacher_decay_epoch, config.beta_decay),
            lr_schedule(n, config.alpha_student, config.student_decay_epoch, config.beta_decay),
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TeacherLosses {
    pub adv: f64,
    pub pixel: f64,
    pub total: f64,
    pub disc: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StudentLosses {
    pub adv_depth: f64,
    pub adv_rgb: f64,
    pub cyc: f64,
    pub total: f64,
    pub disc_rgb: f64,
}

/// Teacher objective and its gradients for one sample.
#[derive(Clone, Debug)]
pub struct TeacherGradients<T> {
    pub adv: T,
    pub pixel: T,
    pub total: T,
    pub fake_depth: Tensor<T>,
    pub g_a2b: Generator<T>,
    /// Present when discriminator gradients were requested.
    pub d_depth: Option<Discriminator<T>>,
}

/// Forward and backward of `adv + lambda_pixel * pixel` through `G_A2B`.
///
/// With `adversarial == false` the adversarial term is dropped (pixel-only
/// regression). Discriminator gradients of the same objective are
/// accumulated when `disc_grads` is set.
pub fn teacher_gradients<T: Scalar>(
    g_a2b: &Generator<T>,
    d_depth: &Discriminator<T>,
    rgb: &Tensor<T>,
    depth: &Tensor<T>,
    weights: &LossWeights,
    adversarial: bool,
    disc_grads: bool,
) -> Result<TeacherGradients<T>> {
    let trace = g_a2b.forward_traced(rgb)?;
    let fake = trace.output();
    let (pixel, mut d_fake) = l1_with_grad(depth, fake)?;
    d_fake.scale(T::lit(weights.lambda_pixel));
    let mut adv = T::zero();
    let mut d_grads = disc_grads.then(|| zeros_like(d_depth));
    if adversarial {
        let dt = d_depth.forward_traced(fake)?;
        let (loss, d_scores) = gen_adv_loss_with_grad(dt.scores());
        adv = loss;
        let dx = d_depth
            .backward(&dt, &d_scores, d_grads.as_mut(), true)?
            .expect("input grad requested");
        d_fake.add_assign(&dx);
    }
    let mut grads = zeros_like(g_a2b);
    g_a2b.backward(&trace, &d_fake, Some(&mut grads), false)?;
    Ok(TeacherGradients {
        adv,
        pixel,
        total: adv + T::lit(weights.lambda_pixel) * pixel,
        fake_depth: fake.clone(),
        g_a2b: grads,
        d_depth: d_grads,
    })
}

/// Student objective and its gradients for one sample.
#[derive(Clone, Debug)]
pub struct StudentGradients<T> {
    pub adv_depth: T,
    pub adv_rgb: T,
    pub cyc: T,
    pub total: T,
    pub fake_depth: Tensor<T>,
    pub reconstruction: Tensor<T>,
    pub g_a2b: Generator<T>,
    pub g_b2a: Generator<T>,
    pub d_depth: Option<Discriminator<T>>,
    pub d_rgb: Option<Discriminator<T>>,
}

/// Forward and backward of `adv_depth + adv_rgb + lambda_cyc * cyc` for the
/// round trip `G_B2A(G_A2B(rgb))`.
pub fn student_gradients<T: Scalar>(
    g_a2b: &Generator<T>,
    g_b2a: &Generator<T>,
    d_depth: &Discriminator<T>,
    d_rgb: &Discriminator<T>,
    rgb: &Tensor<T>,
    weights: &LossWeights,
    disc_grads: bool,
) -> Result<StudentGradients<T>> {
    let t_a2b = g_a2b.forward_traced(rgb)?;
    let fake_depth = t_a2b.output();
    let t_b2a = g_b2a.forward_traced(fake_depth)?;
    let rec = t_b2a.output();

    let mut gd_depth = disc_grads.then(|| zeros_like(d_depth));
    let mut gd_rgb = disc_grads.then(|| zeros_like(d_rgb));

    let dt_depth = d_depth.forward_traced(fake_depth)?;
    let (adv_depth, ds_depth) = gen_adv_loss_with_grad(dt_depth.scores());
    let d_fake_from_disc = d_depth
        .backward(&dt_depth, &ds_depth, gd_depth.as_mut(), true)?
        .expect("input grad requested");

    let dt_rgb = d_rgb.forward_traced(rec)?;
    let (adv_rgb, ds_rgb) = gen_adv_loss_with_grad(dt_rgb.scores());
    let mut d_rec = d_rgb
        .backward(&dt_rgb, &ds_rgb, gd_rgb.as_mut(), true)?
        .expect("input grad requested");

    let (cyc, mut d_cyc) = l1_with_grad(rgb, rec)?;
    d_cyc.scale(T::lit(weights.lambda_cyc));
    d_rec.add_assign(&d_cyc);

    let mut grads_b2a = zeros_like(g_b2a);
    let mut d_fake = g_b2a
        .backward(&t_b2a, &d_rec, Some(&mut grads_b2a), true)?
        .expect("input grad requested");
    d_fake.add_assign(&d_fake_from_disc);
    let mut grads_a2b = zeros_like(g_a2b);
    g_a2b.backward(&t_a2b, &d_fake, Some(&mut grads_a2b), false)?;

    Ok(StudentGradients {
        adv_depth,
        adv_rgb,
        cyc,
        total: adv_depth + adv_rgb + T::lit(weights.lambda_cyc) * cyc,
        fake_depth: fake_depth.clone(),
        reconstruction: rec.clone(),
        g_a2b: grads_a2b,
        g_b2a: grads_b2a,
        d_depth: gd_depth,
        d_rgb: gd_rgb,
    })
}

/// Discriminator objective on a real and a fake image and its parameter gradients.
pub fn discriminator_gradients<T: Scalar>(
    disc: &Discriminator<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
) -> Result<(T, Discriminator<T>)> {
    let rt = disc.forward_traced(real)?;
    let ft = disc.forward_traced(fake)?;
    let (loss, d_real, d_fake) = disc_loss_with_grad(rt.scores(), ft.scores())?;
    let mut grads = zeros_like(disc);
    disc.backward(&rt, &d_real, Some(&mut grads), false)?;
    disc.backward(&ft, &d_fake, Some(&mut grads), false)?;
    Ok((loss, grads))
}

fn ensure_finite(state: &TrainState, sample: &str, values: &[(&str, f64)]) -> Result<()> {
    if values.iter().all(|(_, v)| v.is_finite()) {
        return Ok(());
    }
    let detail = values
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ");
    Err(Error::NonFinite {
        epoch: state.epoch + 1,
        step: state.global_step as usize,
        detail: format!("sample {sample}: {detail}"),
    })
}

fn update_discriminator(
    disc: &mut Discriminator<f32>,
    opt: &mut Adam<f32>,
    pool: &mut ImagePool,
    real: &ImageTensor,
    fake: ImageTensor,
    lr: f64,
) -> Result<f64> {
    let pooled = pool.query(fake);
    let (loss, grads) = discriminator_gradients(disc, real, &pooled)?;
    opt.update(disc, &grads, lr)?;
    Ok(loss as f64)
}

/// One teacher update: `G_A2B` on the teacher objective, then `D_depth` on
/// real depth against a pooled fake. `G_B2A` and `D_RGB` are not touched.
pub fn teacher_step(
    state: &mut TrainState,
    sample: &PairedSample,
    config: &TrainingConfig,
) -> Result<TeacherLosses> {
    let weights = config.weights();
    let (lr, _) = state.rates(config);
    let adversarial = config.mode.uses_discriminators();
    let g = teacher_gradients(
        &state.g_a2b,
        &state.d_depth,
        &sample.rgb,
        &sample.depth,
        &weights,
        adversarial,
        false,
    )?;
    let mut losses = TeacherLosses {
        adv: g.adv as f64,
        pixel: g.pixel as f64,
        total: g.total as f64,
        disc: 0.0,
    };
    ensure_finite(
        state,
        &sample.name,
        &[("adv", losses.adv), ("pixel", losses.pixel), ("lr", lr)],
    )?;
    state.opt_g_a2b.update(&mut state.g_a2b, &g.g_a2b, lr)?;
    if adversarial {
        losses.disc = update_discriminator(
            &mut state.d_depth,
            &mut state.opt_d_depth,
            &mut state.depth_pool,
            &sample.depth,
            g.fake_depth,
            lr,
        )?;
        ensure_finite(state, &sample.name, &[("disc", losses.disc)])?;
    }
    state.global_step += 1;
    Ok(losses)
}

/// One student update: `G_A2B` and `G_B2A` on the student objective, then
/// `D_RGB` on the real image against a pooled reconstruction. `D_depth`
/// supplies gradients but is not updated.
pub fn student_step(
    state: &mut TrainState,
    sample: &UnpairedSample,
    config: &TrainingConfig,
) -> Result<StudentLosses> {
    let weights = config.weights();
    let (_, lr) = state.rates(config);
    let g = student_gradients(
        &state.g_a2b,
        &state.g_b2a,
        &state.d_depth,
        &state.d_rgb,
        &sample.rgb,
        &weights,
        false,
    )?;
    let mut losses = StudentLosses {
        adv_depth: g.adv_depth as f64,
        adv_rgb: g.adv_rgb as f64,
        cyc: g.cyc as f64,
        total: g.total as f64,
        disc_rgb: 0.0,
    };
    ensure_finite(
        state,
        &sample.name,
        &[
            ("adv_depth", losses.adv_depth),
            ("adv_rgb", losses.adv_rgb),
            ("cyc", losses.cyc),
            ("lr", lr),
        ],
    )?;
    state.opt_g_a2b_student.update(&mut state.g_a2b, &g.g_a2b, lr)?;
    state.opt_g_b2a.update(&mut state.g_b2a, &g.g_b2a, lr)?;
    losses.disc_rgb = update_discriminator(
        &mut state.d_rgb,
        &mut state.opt_d_rgb,
        &mut state.rgb_pool,
        &sample.rgb,
        g.reconstruction,
        lr,
    )?;
    ensure_finite(state, &sample.name, &[("disc_rgb", losses.disc_rgb)])?;
    state.global_step += 1;
    Ok(losses)
}
