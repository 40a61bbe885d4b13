use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::models::{DiscriminatorConfig, GeneratorConfig};
use crate::nn::AdamConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Teacher and student steps interleaved.
    #[default]
    Full,
    /// Teacher steps only.
    TeacherOnly,
    /// Pixel loss on the shared generator only; no discriminator ever moves.
    TeacherGeneratorOnly,
}

impl Mode {
    pub fn runs_student(self) -> bool {
        self == Mode::Full
    }

    pub fn uses_discriminators(self) -> bool {
        self != Mode::TeacherGeneratorOnly
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::TeacherOnly => "teacher_only",
            Mode::TeacherGeneratorOnly => "teacher_generator_only",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "teacher_only" => Ok(Mode::TeacherOnly),
            "teacher_generator_only" => Ok(Mode::TeacherGeneratorOnly),
            other => Err(Error::Config(format!(
                "unknown mode {other:?}; expected full, teacher_only or teacher_generator_only"
            ))),
        }
    }
}

/// Every hyperparameter of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub lambda_pixel: f64,
    pub lambda_cyc: f64,
    pub alpha_teach: f64,
    pub alpha_student: f64,
    pub beta_decay: f64,
    /// Teacher rates decay after this epoch.
    pub teacher_decay_epoch: usize,
    /// Student rates decay after this epoch.
    pub student_decay_epoch: usize,
    /// Total epochs `N`.
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: Mode,
    pub image_size: usize,
    pub checkpoint_every: usize,
    pub pool_capacity: usize,
    pub gen_filters: [usize; 3],
    pub gen_residual_blocks: usize,
    pub disc_filters: Vec<usize>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        let gen = GeneratorConfig::default();
        Self {
            lambda_pixel: 10.0,
            lambda_cyc: 5.0,
            alpha_teach: 2e-4,
            alpha_student: 2e-6,
            beta_decay: 0.5,
            teacher_decay_epoch: 25,
            student_decay_epoch: 50,
            epochs: 100,
            batch_size: 1,
            seed: 0,
            mode: Mode::Full,
            image_size: 128,
            checkpoint_every: 5,
            pool_capacity: 50,
            gen_filters: gen.filters,
            gen_residual_blocks: gen.residual_blocks,
            disc_filters: DiscriminatorConfig::default().filters,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "lambda_pixel",
    "lambda_cyc",
    "alpha_teach",
    "alpha_student",
    "beta_decay",
    "teacher_decay_epoch",
    "student_decay_epoch",
    "epochs",
    "batch_size",
    "seed",
    "mode",
    "image_size",
    "checkpoint_every",
    "pool_capacity",
    "gen_filters",
    "gen_residual_blocks",
    "disc_filters",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl TrainingConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_pixel: self.lambda_pixel,
            lambda_cyc: self.lambda_cyc,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            filters: self.gen_filters,
            residual_blocks: self.gen_residual_blocks,
        }
    }

    pub fn discriminator(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            filters: self.disc_filters.clone(),
        }
    }

    /// Sets one field from its textual form. Unknown keys list the valid ones.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "lambda_pixel" => self.lambda_pixel = parse(key, value)?,
            "lambda_cyc" => self.lambda_cyc = parse(key, value)?,
            "alpha_teach" => self.alpha_teach = parse(key, value)?,
            "alpha_student" => self.alpha_student = parse(key, value)?,
            "beta_decay" => self.beta_decay = parse(key, value)?,
            "teacher_decay_epoch" => self.teacher_decay_epoch = parse(key, value)?,
            "student_decay_epoch" => self.student_decay_epoch = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "mode" => self.mode = value.parse()?,
            "image_size" => self.image_size = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "pool_capacity" => self.pool_capacity = parse(key, value)?,
            "gen_filters" => {
                let v = parse_list(key, value)?;
                self.gen_filters = v.try_into().map_err(|_| {
                    Error::Config(format!("gen_filters needs exactly 3 values, got {value:?}"))
                })?;
            }
            "gen_residual_blocks" => self.gen_residual_blocks = parse(key, value)?,
            "disc_filters" => self.disc_filters = parse_list(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown config key {other:?}; valid keys: {}",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "lambda_pixel" => self.lambda_pixel.to_string(),
            "lambda_cyc" => self.lambda_cyc.to_string(),
            "alpha_teach" => self.alpha_teach.to_string(),
            "alpha_student" => self.alpha_student.to_string(),
            "beta_decay" => self.beta_decay.to_string(),
            "teacher_decay_epoch" => self.teacher_decay_epoch.to_string(),
            "student_decay_epoch" => self.student_decay_epoch.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "seed" => self.seed.to_string(),
            "mode" => self.mode.to_string(),
            "image_size" => self.image_size.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "pool_capacity" => self.pool_capacity.to_string(),
            "gen_filters" => join(&self.gen_filters),
            "gen_residual_blocks" => self.gen_residual_blocks.to_string(),
            "disc_filters" => join(&self.disc_filters),
            "adam_beta1" => self.adam_beta1.to_string(),
            "adam_beta2" => self.adam_beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            _ => return None,
        })
    }

    /// Flat `key=value` lines in [`CONFIG_KEYS`] order.
    pub fn to_text(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("known key")))
            .collect()
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Hex SHA-256 of [`TrainingConfig::to_text`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.weights().validate()?;
        if !(self.alpha_teach > 0.0 && self.alpha_student > 0.0) {
            return bad(format!(
                "learning rates must be positive, got alpha_teach={} alpha_student={}",
                self.alpha_teach, self.alpha_student
            ));
        }
        if !(self.beta_decay > 0.0 && self.beta_decay <= 1.0) {
            return bad(format!("beta_decay must be in (0, 1], got {}", self.beta_decay));
        }
        if self.teacher_decay_epoch > self.epochs || self.student_decay_epoch > self.epochs {
            return bad(format!(
                "decay epochs ({}, {}) must not exceed epochs ({})",
                self.teacher_decay_epoch, self.student_decay_epoch, self.epochs
            ));
        }
        if self.batch_size != 1 {
            return bad(format!("batch_size must be 1, got {}", self.batch_size));
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be at least 1".into());
        }
        if self.gen_filters.contains(&0) || self.disc_filters.contains(&0) {
            return bad("filter counts must be positive".into());
        }
        if self.disc_filters.is_empty() {
            return bad("disc_filters needs at least one layer".into());
        }
        let m = self.discriminator().size_multiple().max(4);
        if self.image_size == 0 || self.image_size % m != 0 {
            return bad(format!(
                "image_size {} must be a positive multiple of {m}",
                self.image_size
            ));
        }
        Ok(())
    }
}
