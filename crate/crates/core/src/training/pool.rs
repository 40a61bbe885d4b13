use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Random draws consumed by [`ImagePool::query_with`].
pub trait PoolRng {
    /// Uniform in `[0, 1)`.
    fn unit(&mut self) -> f64;
    /// Uniform in `0..n`.
    fn index(&mut self, n: usize) -> usize;
}

impl<R: Rng + ?Sized> PoolRng for R {
    fn unit(&mut self) -> f64 {
        self.random::<f64>()
    }

    fn index(&mut self, n: usize) -> usize {
        self.random_range(0..n)
    }
}

/// Serializable position of a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::Checkpoint(format!("corrupt rng state {self:?}"));
        let bytes = hex::decode(&self.seed).map_err(|_| bad())?;
        let seed: [u8; 32] = bytes.try_into().map_err(|_| bad())?;
        let word_pos: u128 = self.word_pos.parse().map_err(|_| bad())?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}

/// History buffer of generated images shown to a discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePool {
    capacity: usize,
    images: Vec<ImageTensor>,
    rng: ChaCha8Rng,
}

impl ImagePool {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity,
            images: Vec::with_capacity(capacity),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn from_parts(capacity: usize, images: Vec<ImageTensor>, rng: ChaCha8Rng) -> Result<Self> {
        if images.len() > capacity {
            return Err(Error::Checkpoint(format!(
                "pool holds {} images but capacity is {capacity}",
                images.len()
            )));
        }
        Ok(Self {
            capacity,
            images,
            rng,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[ImageTensor] {
        &self.images
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    /// Query with the pool's own generator.
    pub fn query(&mut self, image: ImageTensor) -> ImageTensor {
        let mut rng = self.rng.clone();
        let out = self.query_with(image, &mut rng);
        self.rng = rng;
        out
    }

    /// Below capacity: store and return the input. At capacity: with
    /// probability 1/2 return the input, otherwise swap it with a uniformly
    /// chosen buffered image and return that one.
    pub fn query_with<R: PoolRng + ?Sized>(&mut self, image: ImageTensor, rng: &mut R) -> ImageTensor {
        if self.capacity == 0 {
            return image;
        }
        if self.images.len() < self.capacity {
            self.images.push(image.clone());
            return image;
        }
        if rng.unit() < 0.5 {
            return image;
        }
        let i = rng.index(self.capacity);
        std::mem::replace(&mut self.images[i], image)
    }
}
