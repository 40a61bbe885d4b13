#![allow(dead_code)]

pub mod contracts;
pub mod oracles;

use depth_halluc::losses::{student_total, teacher_total, LossWeights};
use depth_halluc::models::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use depth_halluc::training::{student_gradients, teacher_gradients};
use depth_halluc::nn::Parameters;
use depth_halluc::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_REL_TOL: f64 = 1e-3;
/// Magnitude below which a gradient entry counts as zero for the relative test.
pub const FD_ZERO: f64 = 1e-6;

/// Weight multiplier for the tiny fixtures; turns the std-0.02 init into unit variance.
///
/// Instance norm makes the loss scale-invariant in each normalized conv, so
/// curvature grows like 1/|w|^2; at the training init scale a 1e-4 step is a
/// sizable fraction of a weight and central differences lose accuracy.
pub const FIXTURE_SCALE: f64 = 50.0;

fn scaled<P: Parameters<f64>>(mut p: P) -> P {
    for (_, t) in p.tensors_mut() {
        t.iter_mut().for_each(|v| *v *= FIXTURE_SCALE);
    }
    p
}

pub fn tiny_generator(seed: u64) -> Generator<f64> {
    scaled(Generator::init(&GeneratorConfig::uniform(2, 1), seed))
}

pub fn tiny_discriminator(seed: u64) -> Discriminator<f64> {
    scaled(Discriminator::init(&DiscriminatorConfig { filters: vec![2, 2] }, seed))
}

pub fn random_image(seed: u64, side: usize) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(3, side, side, |_, _, _| rng.random_range(-1.0..1.0))
}

pub fn nudge<P: Parameters<f64>>(p: &mut P, flat_index: usize, delta: f64) {
    let mut i = flat_index;
    for (_, t) in p.tensors_mut() {
        if i < t.len() {
            t[i] += delta;
            return;
        }
        i -= t.len();
    }
    panic!("flat index {flat_index} out of range");
}

/// Relative error with a floor so exactly-zero gradients compare by absolute difference.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_ZERO)
}

/// Outcome of a finite-difference sweep over one parameter set.
#[derive(Debug)]
pub struct GradCheck {
    pub worst: f64,
    pub at: String,
    pub checked: usize,
    /// Entries whose stencil straddles a ReLU, LeakyReLU or L1 kink.
    pub kinks: usize,
}

impl GradCheck {
    pub fn kink_fraction(&self) -> f64 {
        self.kinks as f64 / (self.checked + self.kinks).max(1) as f64
    }
}

/// Largest fraction of stencils allowed to straddle a kink.
pub const MAX_KINK_FRACTION: f64 = 0.1;

/// Central differences of `loss` over every parameter of `params`.
///
/// A central difference at step h and at h/2 agree to O(h^2) where the loss
/// is smooth; where they disagree by more than a quarter of the tolerance a
/// kink lies inside the stencil, the derivative there is one-sided and the
/// entry is counted in `kinks` instead of being compared.
pub fn check_gradients<P, F>(params: &P, analytic: &P, loss: F) -> GradCheck
where
    P: Parameters<f64> + Clone,
    F: Fn(&P) -> f64,
{
    let names: Vec<(String, usize)> = params
        .tensors()
        .into_iter()
        .flat_map(|(n, t)| (0..t.len()).map(move |i| (n.clone(), i)))
        .collect();
    let grads = analytic.flat();
    let central = |k: usize, h: f64| {
        let mut plus = params.clone();
        nudge(&mut plus, k, h);
        let mut minus = params.clone();
        nudge(&mut minus, k, -h);
        (loss(&plus) - loss(&minus)) / (2.0 * h)
    };
    let mut out = GradCheck {
        worst: 0.0,
        at: String::new(),
        checked: 0,
        kinks: 0,
    };
    for (k, (name, i)) in names.iter().enumerate() {
        let fd = central(k, FD_STEP);
        let half = central(k, FD_STEP / 2.0);
        if rel_err(fd, half) > FD_REL_TOL / 4.0 {
            out.kinks += 1;
            continue;
        }
        out.checked += 1;
        let e = rel_err(grads[k], fd);
        if e > out.worst {
            out.worst = e;
            out.at = format!("{name}[{i}] analytic {} numeric {fd}", grads[k]);
        }
    }
    out
}

impl GradCheck {
    pub fn passes(&self) -> bool {
        self.worst < FD_REL_TOL && self.kink_fraction() <= MAX_KINK_FRACTION
    }
}

/// Panics unless the sweep is within tolerance and mostly kink-free.
pub fn assert_grad_check(c: &GradCheck, what: &str) {
    assert!(c.worst < FD_REL_TOL, "{what}: {} (rel {:e})", c.at, c.worst);
    assert!(
        c.kink_fraction() <= MAX_KINK_FRACTION,
        "{what}: {} of {} stencils straddle a kink",
        c.kinks,
        c.checked + c.kinks
    );
}

/// `pred` moved by +-`margin` per pixel, so every L1 residual stays clear of zero.
pub fn offset_target(pred: &Tensor<f64>, seed: u64, margin: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = pred.clone();
    for v in t.data_mut() {
        *v += if rng.random_bool(0.5) { margin } else { -margin };
    }
    t
}

/// Image with every value in +-[1.5, 2], outside the generator's tanh range.
pub fn far_image(seed: u64, side: usize) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(3, side, side, |_, _, _| {
        let m = rng.random_range(1.5..2.0);
        if rng.random_bool(0.5) { m } else { -m }
    })
}

/// Sweeps of the teacher and student totals over every network they train.
pub struct ObjectiveSweep {
    pub checks: Vec<(String, GradCheck)>,
    /// Largest gap between a reported total and the loss recomputed from scratch.
    pub total_gap: f64,
}

impl ObjectiveSweep {
    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|(_, c)| !c.passes())
            .map(|(n, c)| format!("{n}: {} (rel {:e}, kinks {})", c.at, c.worst, c.kinks))
            .collect()
    }
}

pub fn objective_sweep(seed: u64) -> ObjectiveSweep {
    let w = LossWeights::default();
    let s = seed * 10;
    let g_a2b = tiny_generator(s + 1);
    let g_b2a = tiny_generator(s + 5);
    let d_depth = tiny_discriminator(s + 2);
    let d_rgb = tiny_discriminator(s + 6);
    let mut checks = Vec::new();

    let rgb = random_image(s + 3, 8);
    let depth = offset_target(&g_a2b.forward(&rgb).unwrap(), s + 4, 0.5);
    let tg = teacher_gradients(&g_a2b, &d_depth, &rgb, &depth, &w, true, true).unwrap();
    let teacher = |g: &Generator<f64>, d: &Discriminator<f64>| {
        let fake = g.forward(&rgb).unwrap();
        teacher_total(&d.forward(&fake).unwrap(), &depth, &fake, &w).unwrap()
    };
    let mut total_gap = (tg.total - teacher(&g_a2b, &d_depth)).abs();
    checks.push((
        format!("seed {seed}: teacher G_A2B"),
        check_gradients(&g_a2b, &tg.g_a2b, |p| teacher(p, &d_depth)),
    ));
    checks.push((
        format!("seed {seed}: teacher D_depth"),
        check_gradients(&d_depth, tg.d_depth.as_ref().unwrap(), |p| teacher(&g_a2b, p)),
    ));

    let rgb = far_image(s + 3, 8);
    let sg = student_gradients(&g_a2b, &g_b2a, &d_depth, &d_rgb, &rgb, &w, true).unwrap();
    let student = |ga: &Generator<f64>,
                   gb: &Generator<f64>,
                   dd: &Discriminator<f64>,
                   dr: &Discriminator<f64>| {
        let fake = ga.forward(&rgb).unwrap();
        let rec = gb.forward(&fake).unwrap();
        student_total(&dd.forward(&fake).unwrap(), &dr.forward(&rec).unwrap(), &rgb, &rec, &w)
            .unwrap()
    };
    total_gap = total_gap.max((sg.total - student(&g_a2b, &g_b2a, &d_depth, &d_rgb)).abs());
    checks.push((
        format!("seed {seed}: student G_A2B"),
        check_gradients(&g_a2b, &sg.g_a2b, |p| student(p, &g_b2a, &d_depth, &d_rgb)),
    ));
    checks.push((
        format!("seed {seed}: student G_B2A"),
        check_gradients(&g_b2a, &sg.g_b2a, |p| student(&g_a2b, p, &d_depth, &d_rgb)),
    ));
    checks.push((
        format!("seed {seed}: student D_depth"),
        check_gradients(&d_depth, sg.d_depth.as_ref().unwrap(), |p| {
            student(&g_a2b, &g_b2a, p, &d_rgb)
        }),
    ));
    checks.push((
        format!("seed {seed}: student D_RGB"),
        check_gradients(&d_rgb, sg.d_rgb.as_ref().unwrap(), |p| {
            student(&g_a2b, &g_b2a, &d_depth, p)
        }),
    ));
    ObjectiveSweep { checks, total_gap }
}
