use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, softmax,
    softmax_cross_entropy, zeros_like, Adam, AdamConfig, Conv2d, Linear, Parameters,
};
use crate::tensor::{ImageTensor, Tensor};

/// Embedding network with a per-identity classifier head.
pub trait Backbone {
    fn name(&self) -> &str;

    /// Trains from scratch on labeled images with labels in `0..classes`.
    fn fit(&mut self, images: &[ImageTensor], labels: &[usize], classes: usize) -> Result<()>;

    fn embedding_dim(&self) -> usize;

    fn embed(&self, image: &ImageTensor) -> Result<Vec<f32>>;

    /// Softmax scores over the identities seen by `fit`.
    fn classify(&self, image: &ImageTensor) -> Result<Vec<f32>>;
}

fn check_labels(labels: &[usize], classes: usize, n: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} inputs but {} labels", labels.len())));
    }
    if n == 0 || classes == 0 {
        return Err(Error::Validation("nothing to train on".into()));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Validation(format!("label {l} out of range for {classes} classes")));
    }
    Ok(())
}

/// Softmax regression on fixed feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    pub layer: Linear<f32>,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    trained: bool,
}

impl LinearClassifier {
    pub fn new(epochs: usize, lr: f64, seed: u64) -> Self {
        Self {
            layer: Linear::new(0, 0),
            epochs,
            lr,
            seed,
            trained: false,
        }
    }

    pub fn fit(&mut self, features: &[Vec<f32>], labels: &[usize], classes: usize) -> Result<()> {
        check_labels(labels, classes, features.len())?;
        let dim = features[0].len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.layer = Linear::new(dim, classes);
        self.layer.init_normal(0.01, &mut rng);
        let mut adam = Adam::new(AdamConfig { beta1: 0.9, ..AdamConfig::default() }, &self.layer);
        let mut order: Vec<usize> = (0..features.len()).collect();
        for _ in 0..self.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                let logits = self.layer.forward(&features[i])?;
                let (_, dlogits) = softmax_cross_entropy(&logits, labels[i]);
                let mut grad = zeros_like(&self.layer);
                self.layer.backward(&features[i], &dlogits, &mut grad);
                adam.update(&mut self.layer, &grad, self.lr)?;
            }
        }
        self.trained = true;
        Ok(())
    }

    pub fn scores(&self, features: &[f32]) -> Result<Vec<f32>> {
        if !self.trained {
            return Err(Error::Untrained("linear classifier".into()));
        }
        Ok(softmax(&self.layer.forward(features)?))
    }
}

/// Training budget and widths of [`ReferenceCnn`].
#[derive(Clone, Debug, PartialEq)]
pub struct CnnConfig {
    /// Output maps of the four stride-2 3x3 conv blocks.
    pub widths: [usize; 4],
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            widths: [8, 16, 32, 32],
            epochs: 15,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct CnnParams {
    blocks: Vec<Conv2d<f32>>,
    head: Linear<f32>,
}

impl Parameters<f32> for CnnParams {
    fn tensors(&self) -> Vec<(String, &[f32])> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(crate::nn::prefixed(&format!("blocks.{i}"), b.tensors()));
        }
        out.extend(crate::nn::prefixed("head", self.head.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f32])> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(crate::nn::prefixed_mut(&format!("blocks.{i}"), b.tensors_mut()));
        }
        out.extend(crate::nn::prefixed_mut("head", self.head.tensors_mut()));
        out
    }
}

impl CnnParams {
    /// Block outputs (post-ReLU) for every block.
    fn features(&self, x: &ImageTensor) -> Result<Vec<Tensor<f32>>> {
        let mut acts = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for b in &self.blocks {
            h = relu(&b.forward(&h)?);
            acts.push(h.clone());
        }
        Ok(acts)
    }
}

/// Four conv-ReLU blocks, global average pooling and a linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceCnn {
    pub config: CnnConfig,
    params: Option<CnnParams>,
}

impl ReferenceCnn {
    pub fn new(config: CnnConfig) -> Self {
        Self {
            config,
            params: None,
        }
    }

    fn params(&self) -> Result<&CnnParams> {
        self.params
            .as_ref()
            .ok_or_else(|| Error::Untrained(self.name().to_string()))
    }

    /// Mean cross-entropy over a labeled set.
    pub fn loss(&self, images: &[ImageTensor], labels: &[usize]) -> Result<f64> {
        let p = self.params()?;
        let mut total = 0.0;
        for (x, &l) in images.iter().zip(labels) {
            let acts = p.features(x)?;
            let logits = p.head.forward(&global_avg_pool(acts.last().expect("blocks")))?;
            total += softmax_cross_entropy(&logits, l).0 as f64;
        }
        Ok(total / images.len().max(1) as f64)
    }
}

impl Backbone for ReferenceCnn {
    fn name(&self) -> &str {
        "reference-cnn"
    }

    fn fit(&mut self, images: &[ImageTensor], labels: &[usize], classes: usize) -> Result<()> {
        check_labels(labels, classes, images.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut in_c = images[0].channels();
        let blocks = self
            .config
            .widths
            .iter()
            .map(|&w| {
                let mut conv = Conv2d::new(in_c, w, 3, 2, 1);
                // He initialization for ReLU stacks
                conv.init_normal((2.0 / (in_c * 9) as f64).sqrt(), &mut rng);
                in_c = w;
                conv
            })
            .collect();
        let mut head = Linear::new(in_c, classes);
        head.init_normal((1.0 / in_c as f64).sqrt(), &mut rng);
        let mut p = CnnParams { blocks, head };
        let mut adam = Adam::new(AdamConfig { beta1: 0.9, ..AdamConfig::default() }, &p);
        let mut order: Vec<usize> = (0..images.len()).collect();
        for _ in 0..self.config.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                let x = &images[i];
                let acts = p.features(x)?;
                let last = acts.last().expect("blocks");
                let pooled = global_avg_pool(last);
                let logits = p.head.forward(&pooled)?;
                let (loss, dlogits) = softmax_cross_entropy(&logits, labels[i]);
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!(
                        "reference CNN diverged on sample {i}"
                    )));
                }
                let mut grads = zeros_like(&p);
                let dpool = p.head.backward(&pooled, &dlogits, &mut grads.head);
                let (c, h, w) = last.shape();
                let mut d = global_avg_pool_backward(&dpool, c, h, w);
                for b in (0..p.blocks.len()).rev() {
                    let dpre = relu_backward(&acts[b], &d);
                    let input = if b == 0 { x } else { &acts[b - 1] };
                    match p.blocks[b].backward(input, &dpre, Some(&mut grads.blocks[b]), b > 0)? {
                        Some(next) => d = next,
                        None => break,
                    }
                }
                adam.update(&mut p, &grads, self.config.lr)?;
            }
        }
        self.params = Some(p);
        Ok(())
    }

    fn embedding_dim(&self) -> usize {
        self.config.widths[3]
    }

    fn embed(&self, image: &ImageTensor) -> Result<Vec<f32>> {
        let p = self.params()?;
        let acts = p.features(image)?;
        Ok(global_avg_pool(acts.last().expect("blocks")))
    }

    fn classify(&self, image: &ImageTensor) -> Result<Vec<f32>> {
        let p = self.params()?;
        let logits = p.head.forward(&self.embed(image)?)?;
        Ok(softmax(&logits))
    }
}
