//! Generator and patch discriminator networks.
//!
//! Generator layer table (default widths `f = [64, 128, 256]`, 6 blocks):
//!
//! | stage    | op                                   | in -> out  | kernel | stride |
//! |----------|--------------------------------------|------------|--------|--------|
//! | stem     | reflect-pad 3, conv, IN, ReLU        | 3 -> f0    | 7      | 1      |
//! | down1    | conv, IN, ReLU                       | f0 -> f1   | 3      | 2      |
//! | down2    | conv, IN, ReLU                       | f1 -> f2   | 3      | 2      |
//! | block xN | conv, IN, ReLU, conv, IN, + skip     | f2 -> f2   | 3      | 1      |
//! | up1      | transposed conv, IN, ReLU            | f2 -> f1   | 3      | 1/2    |
//! | up2      | transposed conv, IN, ReLU            | f1 -> f0   | 3      | 1/2    |
//! | head     | reflect-pad 3, conv, tanh            | f0 -> 3    | 7      | 1      |
//!
//! Every conv carries a bias, so a layer holds `k*k*in*out + out` parameters:
//! 7,837,699 in total for the default generator.
//!
//! Discriminator (default `[64, 128, 256, 256]`): 4x4 stride-2 convs with
//! leaky ReLU (slope 0.2) and instance norm on all but the first, then a
//! 4x4 stride-2 conv to one map. 1,711,809 parameters; a 128x128 input yields
//! a 4x4 score grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    self, instance_norm, instance_norm_backward, leaky_relu, leaky_relu_backward,
    reflection_pad, reflection_pad_backward, relu, relu_backward, Conv2d, ConvTranspose2d,
    NormCache, Parameters,
};
use crate::tensor::{ImageTensor, Scalar, Tensor};

pub const INIT_STD: f64 = 0.02;
pub const LEAKY_SLOPE: f64 = 0.2;
const EDGE_PAD: usize = 3;

/// Real-valued discriminator output grid, one channel.
pub type PatchScores<T> = Tensor<T>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Feature maps of the stem and the two downsampling layers.
    pub filters: [usize; 3],
    pub residual_blocks: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            filters: [64, 128, 256],
            residual_blocks: 6,
        }
    }
}

impl GeneratorConfig {
    /// Uniform width at every stage.
    pub fn uniform(width: usize, residual_blocks: usize) -> Self {
        Self {
            filters: [width; 3],
            residual_blocks,
        }
    }

    /// The default layout scaled to a base width (`[w, 2w, 4w]`).
    pub fn scaled(base: usize, residual_blocks: usize) -> Self {
        Self {
            filters: [base, base * 2, base * 4],
            residual_blocks,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Feature maps of each hidden stride-2 layer.
    pub filters: Vec<usize>,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            filters: vec![64, 128, 256, 256],
        }
    }
}

impl DiscriminatorConfig {
    pub fn scaled(base: usize) -> Self {
        Self {
            filters: vec![base, base * 2, base * 4, base * 4],
        }
    }

    /// Input sides must be a multiple of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.filters.len() + 1)
    }

    pub fn output_side(&self, input_side: usize) -> usize {
        input_side / self.size_multiple()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock<T> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
}

/// Intermediate values of a conv -> instance norm (-> activation) unit.
#[derive(Clone, Debug)]
struct UnitTrace<T> {
    input: Tensor<T>,
    normed: Tensor<T>,
    cache: NormCache<T>,
    output: Tensor<T>,
}

#[derive(Clone, Debug)]
struct BlockTrace<T> {
    first: UnitTrace<T>,
    second_normed: Tensor<T>,
    second_cache: NormCache<T>,
}

/// Everything the generator backward pass needs from its forward pass.
#[derive(Clone, Debug)]
pub struct GeneratorTrace<T> {
    input_hw: (usize, usize),
    stem: UnitTrace<T>,
    down1: UnitTrace<T>,
    down2: UnitTrace<T>,
    blocks: Vec<BlockTrace<T>>,
    up1: UnitTrace<T>,
    up2: UnitTrace<T>,
    head_input: Tensor<T>,
    output: Tensor<T>,
}

impl<T: Scalar> GeneratorTrace<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }
}

/// Fully convolutional encoder / residual / decoder image translator.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    pub config: GeneratorConfig,
    pub stem: Conv2d<T>,
    pub down1: Conv2d<T>,
    pub down2: Conv2d<T>,
    pub blocks: Vec<ResidualBlock<T>>,
    pub up1: ConvTranspose2d<T>,
    pub up2: ConvTranspose2d<T>,
    pub head: Conv2d<T>,
}

fn unit_forward<T: Scalar>(
    input: Tensor<T>,
    pre: Tensor<T>,
    act: impl Fn(&Tensor<T>) -> Tensor<T>,
) -> UnitTrace<T> {
    let (normed, cache) = instance_norm(&pre);
    let output = act(&normed);
    UnitTrace {
        input,
        normed,
        cache,
        output,
    }
}

impl<T: Scalar> Generator<T> {
    /// All-zero parameters.
    pub fn zeros(config: &GeneratorConfig) -> Self {
        let [f0, f1, f2] = config.filters;
        Self {
            config: config.clone(),
            stem: Conv2d::new(3, f0, 7, 1, 0),
            down1: Conv2d::new(f0, f1, 3, 2, 1),
            down2: Conv2d::new(f1, f2, 3, 2, 1),
            blocks: (0..config.residual_blocks)
                .map(|_| ResidualBlock {
                    conv1: Conv2d::new(f2, f2, 3, 1, 1),
                    conv2: Conv2d::new(f2, f2, 3, 1, 1),
                })
                .collect(),
            up1: ConvTranspose2d::new(f2, f1, 3, 2, 1, 1),
            up2: ConvTranspose2d::new(f1, f0, 3, 2, 1, 1),
            head: Conv2d::new(f0, 3, 7, 1, 0),
        }
    }

    /// Seeded gaussian initialization (std 0.02, zero bias).
    pub fn init(config: &GeneratorConfig, seed: u64) -> Self {
        let mut g = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        g.stem.init_normal(INIT_STD, &mut rng);
        g.down1.init_normal(INIT_STD, &mut rng);
        g.down2.init_normal(INIT_STD, &mut rng);
        for b in &mut g.blocks {
            b.conv1.init_normal(INIT_STD, &mut rng);
            b.conv2.init_normal(INIT_STD, &mut rng);
        }
        g.up1.init_normal(INIT_STD, &mut rng);
        g.up2.init_normal(INIT_STD, &mut rng);
        g.head.init_normal(INIT_STD, &mut rng);
        g
    }

    pub fn check_input(x: &Tensor<T>) -> Result<()> {
        let (c, h, w) = x.shape();
        if c != 3 {
            return Err(Error::Shape(format!("generator expects 3 channels, got {c}")));
        }
        if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Shape(format!(
                "generator input {h}x{w} must be nonzero and divisible by 4"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_traced(x)?.output)
    }

    pub fn forward_traced(&self, x: &Tensor<T>) -> Result<GeneratorTrace<T>> {
        Self::check_input(x)?;
        let stem_input = reflection_pad(x, EDGE_PAD)?;
        let stem_pre = self.stem.forward(&stem_input)?;
        let stem = unit_forward(stem_input, stem_pre, relu);
        let down1 = {
            let pre = self.down1.forward(&stem.output)?;
            unit_forward(stem.output.clone(), pre, relu)
        };
        let down2 = {
            let pre = self.down2.forward(&down1.output)?;
            unit_forward(down1.output.clone(), pre, relu)
        };
        let mut h = down2.output.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let first = unit_forward(h.clone(), block.conv1.forward(&h)?, relu);
            let (second_normed, second_cache) = instance_norm(&block.conv2.forward(&first.output)?);
            let mut out = second_normed.clone();
            out.add_assign(&h);
            blocks.push(BlockTrace {
                first,
                second_normed,
                second_cache,
            });
            h = out;
        }
        let up1 = unit_forward(h.clone(), self.up1.forward(&h)?, relu);
        let up2 = {
            let pre = self.up2.forward(&up1.output)?;
            unit_forward(up1.output.clone(), pre, relu)
        };
        let head_input = reflection_pad(&up2.output, EDGE_PAD)?;
        let output = nn::tanh(&self.head.forward(&head_input)?);
        Ok(GeneratorTrace {
            input_hw: (x.height(), x.width()),
            stem,
            down1,
            down2,
            blocks,
            up1,
            up2,
            head_input,
            output,
        })
    }

    /// Backpropagates `d_output` through a traced forward pass.
    ///
    /// Parameter gradients accumulate into `grads` when given. Returns the
    /// gradient with respect to the generator input when requested.
    pub fn backward(
        &self,
        trace: &GeneratorTrace<T>,
        d_output: &Tensor<T>,
        mut grads: Option<&mut Generator<T>>,
        want_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        trace.output.same_shape(d_output)?;
        let d_pre = nn::tanh_backward(&trace.output, d_output);
        let d_head_in = self
            .head
            .backward(&trace.head_input, &d_pre, grads.as_deref_mut().map(|g| &mut g.head), true)?
            .expect("input grad requested");
        let (uh, uw) = (trace.up2.output.height(), trace.up2.output.width());
        let d = reflection_pad_backward(&d_head_in, EDGE_PAD, uh, uw);

        let d = unit_backward_t(&self.up2, &trace.up2, &d, grads.as_deref_mut().map(|g| &mut g.up2))?;
        let mut d =
            unit_backward_t(&self.up1, &trace.up1, &d, grads.as_deref_mut().map(|g| &mut g.up1))?;

        for (i, (block, bt)) in self.blocks.iter().zip(&trace.blocks).enumerate().rev() {
            let mut bgrad = grads.as_deref_mut().map(|g| &mut g.blocks[i]);
            let d_pre2 = instance_norm_backward(&bt.second_normed, &bt.second_cache, &d);
            let d_h = block
                .conv2
                .backward(&bt.first.output, &d_pre2, bgrad.as_deref_mut().map(|g| &mut g.conv2), true)?
                .expect("input grad requested");
            let d_inner = unit_backward(
                &block.conv1,
                &bt.first,
                &d_h,
                bgrad.map(|g| &mut g.conv1),
                true,
            )?
            .expect("input grad requested");
            d.add_assign(&d_inner);
        }

        let d = unit_backward(&self.down2, &trace.down2, &d, grads.as_deref_mut().map(|g| &mut g.down2), true)?
            .expect("input grad requested");
        let d = unit_backward(&self.down1, &trace.down1, &d, grads.as_deref_mut().map(|g| &mut g.down1), true)?
            .expect("input grad requested");
        let d_stem_in = unit_backward(
            &self.stem,
            &trace.stem,
            &d,
            grads.map(|g| &mut g.stem),
            want_input_grad,
        )?;
        Ok(d_stem_in.map(|d| reflection_pad_backward(&d, EDGE_PAD, trace.input_hw.0, trace.input_hw.1)))
    }
}

fn unit_backward<T: Scalar>(
    conv: &Conv2d<T>,
    trace: &UnitTrace<T>,
    d_output: &Tensor<T>,
    grad: Option<&mut Conv2d<T>>,
    want_input_grad: bool,
) -> Result<Option<Tensor<T>>> {
    let d_normed = relu_backward(&trace.output, d_output);
    let d_pre = instance_norm_backward(&trace.normed, &trace.cache, &d_normed);
    conv.backward(&trace.input, &d_pre, grad, want_input_grad)
}

fn unit_backward_t<T: Scalar>(
    conv: &ConvTranspose2d<T>,
    trace: &UnitTrace<T>,
    d_output: &Tensor<T>,
    grad: Option<&mut ConvTranspose2d<T>>,
) -> Result<Tensor<T>> {
    let d_normed = relu_backward(&trace.output, d_output);
    let d_pre = instance_norm_backward(&trace.normed, &trace.cache, &d_normed);
    Ok(conv
        .backward(&trace.input, &d_pre, grad, true)?
        .expect("input grad requested"))
}

impl<T: Scalar> Parameters<T> for Generator<T> {
    fn tensors(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        out.extend(nn::prefixed("stem", self.stem.tensors()));
        out.extend(nn::prefixed("down1", self.down1.tensors()));
        out.extend(nn::prefixed("down2", self.down2.tensors()));
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(nn::prefixed(&format!("blocks.{i}.conv1"), b.conv1.tensors()));
            out.extend(nn::prefixed(&format!("blocks.{i}.conv2"), b.conv2.tensors()));
        }
        out.extend(nn::prefixed("up1", self.up1.tensors()));
        out.extend(nn::prefixed("up2", self.up2.tensors()));
        out.extend(nn::prefixed("head", self.head.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut out = Vec::new();
        out.extend(nn::prefixed_mut("stem", self.stem.tensors_mut()));
        out.extend(nn::prefixed_mut("down1", self.down1.tensors_mut()));
        out.extend(nn::prefixed_mut("down2", self.down2.tensors_mut()));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(nn::prefixed_mut(&format!("blocks.{i}.conv1"), b.conv1.tensors_mut()));
            out.extend(nn::prefixed_mut(&format!("blocks.{i}.conv2"), b.conv2.tensors_mut()));
        }
        out.extend(nn::prefixed_mut("up1", self.up1.tensors_mut()));
        out.extend(nn::prefixed_mut("up2", self.up2.tensors_mut()));
        out.extend(nn::prefixed_mut("head", self.head.tensors_mut()));
        out
    }
}

#[derive(Clone, Debug)]
struct DiscLayerTrace<T> {
    input: Tensor<T>,
    normed: Option<(Tensor<T>, NormCache<T>)>,
    output: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct DiscriminatorTrace<T> {
    layers: Vec<DiscLayerTrace<T>>,
    final_input: Tensor<T>,
    scores: PatchScores<T>,
}

impl<T: Scalar> DiscriminatorTrace<T> {
    pub fn scores(&self) -> &PatchScores<T> {
        &self.scores
    }
}

/// Fully convolutional patch discriminator with unbounded outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    pub config: DiscriminatorConfig,
    pub layers: Vec<Conv2d<T>>,
    pub out: Conv2d<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn zeros(config: &DiscriminatorConfig) -> Self {
        let mut in_c = 3;
        let layers = config
            .filters
            .iter()
            .map(|&f| {
                let conv = Conv2d::new(in_c, f, 4, 2, 1);
                in_c = f;
                conv
            })
            .collect();
        Self {
            config: config.clone(),
            layers,
            out: Conv2d::new(in_c, 1, 4, 2, 1),
        }
    }

    pub fn init(config: &DiscriminatorConfig, seed: u64) -> Self {
        let mut d = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut d.layers {
            l.init_normal(INIT_STD, &mut rng);
        }
        d.out.init_normal(INIT_STD, &mut rng);
        d
    }

    pub fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (c, h, w) = x.shape();
        let m = self.config.size_multiple();
        if c != 3 {
            return Err(Error::Shape(format!("discriminator expects 3 channels, got {c}")));
        }
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!(
                "discriminator input {h}x{w} must be nonzero and divisible by {m}"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<PatchScores<T>> {
        Ok(self.forward_traced(x)?.scores)
    }

    pub fn forward_traced(&self, x: &Tensor<T>) -> Result<DiscriminatorTrace<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, conv) in self.layers.iter().enumerate() {
            let pre = conv.forward(&h)?;
            let (normed, act_in) = if i == 0 {
                (None, pre)
            } else {
                let (n, cache) = instance_norm(&pre);
                (Some((n.clone(), cache)), n)
            };
            let output = leaky_relu(&act_in, LEAKY_SLOPE);
            layers.push(DiscLayerTrace {
                input: h,
                normed,
                output: output.clone(),
            });
            h = output;
        }
        let scores = self.out.forward(&h)?;
        Ok(DiscriminatorTrace {
            layers,
            final_input: h,
            scores,
        })
    }

    pub fn backward(
        &self,
        trace: &DiscriminatorTrace<T>,
        d_scores: &PatchScores<T>,
        mut grads: Option<&mut Discriminator<T>>,
        want_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        trace.scores.same_shape(d_scores)?;
        let n = self.layers.len();
        let mut d = match self.out.backward(
            &trace.final_input,
            d_scores,
            grads.as_deref_mut().map(|g| &mut g.out),
            n > 0 || want_input_grad,
        )? {
            Some(d) => d,
            None => return Ok(None),
        };
        for i in (0..n).rev() {
            let lt = &trace.layers[i];
            let mut dp = leaky_relu_backward(&lt.output, &d, LEAKY_SLOPE);
            if let Some((normed, cache)) = &lt.normed {
                dp = instance_norm_backward(normed, cache, &dp);
            }
            let need = i > 0 || want_input_grad;
            match self.layers[i].backward(
                &lt.input,
                &dp,
                grads.as_deref_mut().map(|g| &mut g.layers[i]),
                need,
            )? {
                Some(next) => d = next,
                None => return Ok(None),
            }
        }
        Ok(Some(d))
    }
}

impl<T: Scalar> Parameters<T> for Discriminator<T> {
    fn tensors(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(nn::prefixed(&format!("layers.{i}"), l.tensors()));
        }
        out.extend(nn::prefixed("out", self.out.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.extend(nn::prefixed_mut(&format!("layers.{i}"), l.tensors_mut()));
        }
        out.extend(nn::prefixed_mut("out", self.out.tensors_mut()));
        out
    }
}

/// RGB-to-depth mapping used at inference time.
pub trait Hallucinator {
    fn hallucinate(&self, rgb: &ImageTensor) -> Result<ImageTensor>;
}

impl Hallucinator for Generator<f32> {
    fn hallucinate(&self, rgb: &ImageTensor) -> Result<ImageTensor> {
        self.forward(rgb)
    }
}

/// Debug mapping: the grayscale of the input replicated to three channels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GrayPassthrough;

impl Hallucinator for GrayPassthrough {
    fn hallucinate(&self, rgb: &ImageTensor) -> Result<ImageTensor> {
        let m = rgb.channel_mean();
        Ok(Tensor::from_fn(3, m.height(), m.width(), |_, y, x| m.get(0, y, x)))
    }
}

/// Debug mapping: depth := rgb.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IdentityMap;

impl Hallucinator for IdentityMap {
    fn hallucinate(&self, rgb: &ImageTensor) -> Result<ImageTensor> {
        Ok(rgb.clone())
    }
}
