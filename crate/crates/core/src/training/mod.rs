//! Alternating teacher/student optimization of the shared depth generator.
//!
//! Each epoch walks freshly shuffled copies of both datasets in lockstep:
//! one teacher step on a paired sample, then one student step on an RGB-only
//! sample, cycling the shorter dataset. Shuffles depend only on the seed and
//! the epoch number, so a resumed run replays the uninterrupted one.

mod checkpoint;
mod config;
mod pool;
mod step;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{PairedSample, UnpairedSample};
use crate::error::{Error, Result};

pub use checkpoint::{
    epoch_dir, latest_checkpoint, load_checkpoint, load_discriminator, load_generator,
    load_generator_moments, load_hallucinator, read_manifest, save_checkpoint, save_discriminator,
    save_generator, save_generator_moments,
    save_passthrough, Architecture, ArchiveHeader, CheckpointManifest, D_DEPTH_FILE, D_RGB_FILE,
    G_A2B_FILE, G_A2B_STUDENT_MOMENTS_FILE, G_B2A_FILE, MANIFEST_FILE, POOLS_FILE,
};
pub use config::{Mode, TrainingConfig, CONFIG_KEYS};
pub use pool::{ImagePool, PoolRng, RngState};
pub use step::{
    discriminator_gradients, student_gradients, student_step, teacher_gradients, teacher_step,
    StudentGradients, StudentLosses, TeacherGradients, TeacherLosses, TrainState,
};

/// `base * decay_rate^max(0, epoch - decay_start)` for 1-based epochs.
pub fn lr_schedule(epoch: usize, base: f64, decay_start: usize, decay_rate: f64) -> f64 {
    let over = epoch.saturating_sub(decay_start);
    base * decay_rate.powi(over.min(i32::MAX as usize) as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub step: usize,
    pub name: String,
    pub value: f64,
}

/// Every recorded loss value of a run, in recording order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurves {
    pub points: Vec<CurvePoint>,
}

pub const CURVE_CSV_HEADER: &str = "epoch,step,loss_name,value";

impl LossCurves {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, epoch: usize, step: usize, name: &str, value: f64) {
        self.points.push(CurvePoint {
            epoch,
            step,
            name: name.to_string(),
            value,
        });
    }

    pub fn extend(&mut self, other: LossCurves) {
        self.points.extend(other.points);
    }

    /// `(epoch, mean)` for one loss name, ordered by epoch.
    pub fn epoch_means(&self, name: &str) -> Vec<(usize, f64)> {
        let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for p in self.points.iter().filter(|p| p.name == name) {
            let e = acc.entry(p.epoch).or_default();
            e.0 += p.value;
            e.1 += 1;
        }
        acc.into_iter()
            .map(|(epoch, (sum, n))| (epoch, sum / n as f64))
            .collect()
    }

    /// Means of every loss recorded in `epoch`.
    pub fn summary(&self, epoch: usize) -> BTreeMap<String, f64> {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for p in self.points.iter().filter(|p| p.epoch == epoch) {
            let e = acc.entry(p.name.clone()).or_default();
            e.0 += p.value;
            e.1 += 1;
        }
        acc.into_iter()
            .map(|(k, (sum, n))| (k, sum / n as f64))
            .collect()
    }

    /// CSV rows without the header.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            let _ = writeln!(out, "{},{},{},{}", p.epoch, p.step, p.name, p.value);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{CURVE_CSV_HEADER}\n{}", self.csv_rows())
    }
}

/// Optional side effects of a training run.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Checkpoints go to `<dir>/epoch_NNNN/` every `checkpoint_every` epochs and at the end.
    pub checkpoint_dir: Option<PathBuf>,
    /// Called after each epoch with its loss means.
    pub on_epoch: Option<Box<dyn FnMut(usize, &BTreeMap<String, f64>) + 'a>>,
}

impl TrainHooks<'_> {
    pub fn checkpoints(dir: &Path) -> Self {
        Self {
            checkpoint_dir: Some(dir.to_path_buf()),
            on_epoch: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub curves: LossCurves,
    pub checkpoints: Vec<PathBuf>,
}

fn epoch_order(len: usize, seed: u64, epoch: usize, which: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(step::derive_seed(seed, step::tag::SHUFFLE));
    rng.set_stream(epoch as u64 * 2 + which);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

/// Trains from a fresh state for `config.epochs` epochs.
pub fn train(
    config: &TrainingConfig,
    teacher: &[PairedSample],
    target: &[UnpairedSample],
    hooks: TrainHooks<'_>,
) -> Result<TrainOutcome> {
    train_from(TrainState::new(config), config, teacher, target, hooks)
}

/// Continues `state` from its completed epoch up to `config.epochs`.
pub fn train_from(
    mut state: TrainState,
    config: &TrainingConfig,
    teacher: &[PairedSample],
    target: &[UnpairedSample],
    mut hooks: TrainHooks<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut curves = LossCurves::default();
    let mut checkpoints = Vec::new();
    if state.epoch >= config.epochs {
        return Ok(TrainOutcome {
            state,
            curves,
            checkpoints,
        });
    }
    if teacher.is_empty() {
        return Err(Error::Validation("teacher dataset is empty".into()));
    }
    if config.mode.runs_student() && target.is_empty() {
        return Err(Error::Validation(
            "target dataset is empty; use mode=teacher_only".into(),
        ));
    }
    for epoch in state.epoch + 1..=config.epochs {
        let t_order = epoch_order(teacher.len(), config.seed, epoch, 0);
        let r_order = epoch_order(target.len(), config.seed, epoch, 1);
        let steps = if config.mode.runs_student() {
            teacher.len().max(target.len())
        } else {
            teacher.len()
        };
        for i in 0..steps {
            let t = teacher_step(&mut state, &teacher[t_order[i % teacher.len()]], config)?;
            curves.push(epoch, i, "teacher_adv", t.adv);
            curves.push(epoch, i, "teacher_pixel", t.pixel);
            curves.push(epoch, i, "teacher_total", t.total);
            if config.mode.uses_discriminators() {
                curves.push(epoch, i, "disc_depth", t.disc);
            }
            if config.mode.runs_student() {
                let s = student_step(&mut state, &target[r_order[i % target.len()]], config)?;
                curves.push(epoch, i, "student_adv_depth", s.adv_depth);
                curves.push(epoch, i, "student_adv_rgb", s.adv_rgb);
                curves.push(epoch, i, "student_cyc", s.cyc);
                curves.push(epoch, i, "student_total", s.total);
                curves.push(epoch, i, "disc_rgb", s.disc_rgb);
            }
        }
        state.epoch = epoch;
        let summary = curves.summary(epoch);
        if let Some(dir) = &hooks.checkpoint_dir {
            if epoch % config.checkpoint_every == 0 || epoch == config.epochs {
                checkpoints.push(save_checkpoint(dir, &state, config, summary.clone())?);
            }
        }
        if let Some(f) = hooks.on_epoch.as_mut() {
            f(epoch, &summary);
        }
    }
    Ok(TrainOutcome {
        state,
        curves,
        checkpoints,
    })
}
