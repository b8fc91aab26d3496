//! Seeded noise for the stochastic objectives.
//!
//! Every draw is tagged with the distribution it feeds so callers can check
//! which branches an objective sampled from.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::distributions::standard_normal_tensor;
use crate::error::{Error, Result};
use crate::model::DecoderVars;
use crate::tensor::Tensor;

/// Number of batched draws taken from each distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SampleCounts {
    /// Reparameterized draws from `q(z | x)`.
    pub encoder: usize,
    /// Draws from `p(x | z)`.
    pub decoder: usize,
    /// Draws from the latent anchor `P(z)`.
    pub prior: usize,
}

#[derive(Debug)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
    script: VecDeque<Tensor>,
    counts: SampleCounts,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            script: VecDeque::new(),
            counts: SampleCounts::default(),
        }
    }

    /// Replays the given standard-normal tensors in order before falling
    /// back to the seeded generator.
    pub fn scripted(tensors: Vec<Tensor>, seed: u64) -> Self {
        Self {
            script: tensors.into(),
            ..Self::new(seed)
        }
    }

    pub fn counts(&self) -> SampleCounts {
        self.counts
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn standard_normal(&mut self, rows: usize, cols: usize) -> Result<Tensor> {
        match self.script.pop_front() {
            Some(t) if t.shape() == [rows, cols] => Ok(t),
            Some(t) => Err(Error::ShapeMismatch {
                op: "scripted noise",
                left: vec![rows, cols],
                right: t.shape().to_vec(),
            }),
            None => Ok(standard_normal_tensor(&mut self.rng, rows, cols)),
        }
    }

    /// Standard-normal noise for reparameterized encoder samples.
    pub fn encoder_noise(&mut self, rows: usize, cols: usize) -> Result<Tensor> {
        self.counts.encoder += 1;
        self.standard_normal(rows, cols)
    }

    /// Draws from the standard normal latent anchor.
    pub fn prior(&mut self, rows: usize, cols: usize) -> Result<Tensor> {
        self.counts.prior += 1;
        self.standard_normal(rows, cols)
    }

    /// Draws `x ~ p(x | z)` for every row of the decoder output.
    pub fn decoder_sample(&mut self, g: &mut Graph, dec: &DecoderVars, rows: usize, cols: usize) -> Result<Var> {
        self.counts.decoder += 1;
        let noise = match dec {
            DecoderVars::Gaussian(_) => self.standard_normal(rows, cols)?,
            DecoderVars::Bernoulli { .. } => Tensor::zeros(&[rows, cols]),
        };
        dec.sample(g, &noise, &mut self.rng)
    }
}
