//! Small fixtures for the training-step and image-pool contracts.

use std::collections::VecDeque;

use depth_halluc::datasets::{PairedSample, UnpairedSample};
use depth_halluc::training::{ImagePool, Mode, PoolRng, TrainingConfig};
use depth_halluc::ImageTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tiny 8x8 model with two maps per layer.
pub fn tiny_config(mode: Mode, epochs: usize) -> TrainingConfig {
    TrainingConfig {
        epochs,
        teacher_decay_epoch: epochs,
        student_decay_epoch: epochs,
        mode,
        image_size: 8,
        checkpoint_every: 2,
        pool_capacity: 3,
        gen_filters: [2, 2, 2],
        gen_residual_blocks: 1,
        disc_filters: vec![2, 2],
        seed: 5,
        ..TrainingConfig::default()
    }
}

pub fn image(seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::from_fn(3, 8, 8, |_, _, _| rng.random_range(-1.0..1.0))
}

pub fn paired(n: usize) -> Vec<PairedSample> {
    (0..n as u64)
        .map(|i| {
            let rgb = image(100 + i);
            let depth = ImageTensor::from_fn(3, 8, 8, |_, y, x| rgb.plane(0)[y * 8 + x] * 0.5 + 0.2);
            PairedSample {
                name: format!("t{i}.png"),
                identity: format!("id{}", i % 2),
                rgb,
                depth,
            }
        })
        .collect()
}

pub fn unpaired(n: usize) -> Vec<UnpairedSample> {
    (0..n as u64)
        .map(|i| UnpairedSample {
            name: format!("u{i}.png"),
            identity: format!("id{}", i % 2),
            rgb: image(200 + i),
        })
        .collect()
}

pub fn tagged(v: f32) -> ImageTensor {
    ImageTensor::filled(1, 1, 1, v)
}

pub fn tag_of(img: &ImageTensor) -> f32 {
    img.data()[0]
}

/// Replays fixed draws and checks the requested index range.
pub struct Script {
    pub units: VecDeque<f64>,
    pub indices: VecDeque<usize>,
    pub capacity: usize,
}

impl PoolRng for Script {
    fn unit(&mut self) -> f64 {
        self.units.pop_front().expect("unit draw past the script")
    }

    fn index(&mut self, n: usize) -> usize {
        assert_eq!(n, self.capacity);
        self.indices.pop_front().expect("index draw past the script")
    }
}

pub struct PoolTrace {
    pub returned: Vec<f32>,
    pub kept: Vec<f32>,
    pub script_consumed: bool,
}

/// Hand simulation of images 1..=6 through a 2-slot pool under the script
/// units [0.7, 0.2, 0.9, 0.5] and indices [1, 0, 0]: fill, fill, swap slot 1,
/// pass, swap slot 0, swap slot 0 (0.5 is not below one half).
pub const TRACE_RETURNED: [f32; 6] = [1.0, 2.0, 2.0, 4.0, 1.0, 5.0];
pub const TRACE_KEPT: [f32; 2] = [6.0, 3.0];

pub fn scripted_pool_trace() -> PoolTrace {
    let mut pool = ImagePool::new(2, 0);
    let mut rng = Script {
        units: [0.7, 0.2, 0.9, 0.5].into(),
        indices: [1, 0, 0].into(),
        capacity: 2,
    };
    let returned = (1..=6)
        .map(|i| tag_of(&pool.query_with(tagged(i as f32), &mut rng)))
        .collect();
    PoolTrace {
        returned,
        kept: pool.images().iter().map(tag_of).collect(),
        script_consumed: rng.units.is_empty() && rng.indices.is_empty(),
    }
}

/// Largest pool size seen over `queries` distinct inputs, and whether every
/// returned image was one of the inputs so far.
pub fn pool_sweep(capacity: usize, queries: usize, seed: u64) -> (usize, bool) {
    let mut pool = ImagePool::new(capacity, seed);
    let mut peak = 0;
    let mut only_inputs = true;
    for i in 0..queries {
        let t = tag_of(&pool.query(tagged(i as f32)));
        peak = peak.max(pool.len());
        only_inputs &= t <= i as f32 && t.fract() == 0.0;
    }
    (peak, only_inputs)
}
