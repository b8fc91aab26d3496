//! Diagonal Gaussians, isotropic Gaussian mixtures and factorized Bernoullis.
//!
//! Each family has a plain `f64` form for evaluation code and a batched form
//! over [`Var`]s that records on the autodiff tape. Batched log-densities
//! return one value per row (`[n, 1]`).

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{softplus, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `0.5 * ln(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}

/// Gaussian with independent coordinates, parameterized by log standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalGaussian {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        check_dim(mean.len(), log_std.len())?;
        if let Some(s) = log_std.iter().find(|s| !s.is_finite()) {
            return Err(Error::InvalidDistribution(format!("log_std {s} is not finite")));
        }
        Ok(Self { mean, log_std })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_std: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|s| s.exp()).collect()
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.log_std)
            .zip(x)
            .map(|((m, s), x)| {
                let u = (x - m) * (-s).exp();
                -HALF_LN_2PI - s - 0.5 * u * u
            })
            .sum())
    }

    /// `mean + exp(log_std) ⊙ noise`.
    pub fn sample_with(&self, noise: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), noise.len())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.log_std)
            .zip(noise)
            .map(|((m, s), e)| m + s.exp() * e)
            .collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let noise: Vec<f64> = (0..self.dim()).map(|_| StandardNormal.sample(rng)).collect();
        self.sample_with(&noise).expect("noise has matching dimension")
    }

    /// Closed-form `KL(self ‖ other)`.
    pub fn kl(&self, other: &DiagonalGaussian) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        let mut kl = 0.0;
        for i in 0..self.dim() {
            let (ma, sa) = (self.mean[i], self.log_std[i]);
            let (mb, sb) = (other.mean[i], other.log_std[i]);
            let ratio = (2.0 * (sa - sb)).exp();
            let d = (ma - mb) * (-sb).exp();
            kl += sb - sa + 0.5 * (ratio + d * d - 1.0);
        }
        Ok(kl.max(0.0))
    }
}

/// Mixture of isotropic Gaussians sharing one standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub std: f64,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, std: f64) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} weights for {} components",
                weights.len(),
                means.len()
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidDistribution(format!("weights sum to {total}")));
        }
        if !(std > 0.0) {
            return Err(Error::InvalidDistribution(format!("std {std} must be positive")));
        }
        let d = means[0].len();
        if means.iter().any(|m| m.len() != d) {
            return Err(Error::InvalidDistribution("component means differ in dimension".into()));
        }
        Ok(Self { weights, means, std })
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    fn component_log_joint(&self, x: &[f64]) -> Vec<f64> {
        let log_std = self.std.ln();
        self.means
            .iter()
            .zip(&self.weights)
            .map(|(m, w)| {
                let lp: f64 = m
                    .iter()
                    .zip(x)
                    .map(|(m, x)| {
                        let u = (x - m) / self.std;
                        -HALF_LN_2PI - log_std - 0.5 * u * u
                    })
                    .sum();
                w.ln() + lp
            })
            .collect()
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(log_sum_exp(&self.component_log_joint(x)))
    }

    /// Posterior responsibilities of each component for `x`.
    pub fn posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let lj = self.component_log_joint(x);
        let lse = log_sum_exp(&lj);
        Ok(lj.iter().map(|l| (l - lse).exp()).collect())
    }

    /// Draws a point together with the index of the component it came from.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, usize) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut label = self.components() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                label = k;
                break;
            }
        }
        let x = self.means[label]
            .iter()
            .map(|m| {
                let e: f64 = StandardNormal.sample(rng);
                m + self.std * e
            })
            .collect();
        (x, label)
    }
}

/// Independent Bernoulli coordinates with the given logits.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedBernoulli {
    pub logits: Vec<f64>,
}

impl FactorizedBernoulli {
    pub fn new(logits: Vec<f64>) -> Result<Self> {
        if let Some(l) = logits.iter().find(|l| !l.is_finite()) {
            return Err(Error::InvalidDistribution(format!("logit {l} is not finite")));
        }
        Ok(Self { logits })
    }

    /// `Σ x·l − softplus(l)`, the stable form of the Bernoulli log-likelihood.
    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.logits.len(), x.len())?;
        check_binary(x)?;
        Ok(self
            .logits
            .iter()
            .zip(x)
            .map(|(l, x)| x * l - softplus(*l))
            .sum())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.logits
            .iter()
            .map(|l| {
                let u: f64 = rng.random();
                if u < crate::autodiff::sigmoid(*l) { 1.0 } else { 0.0 }
            })
            .collect()
    }
}

pub(crate) fn check_binary(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| *v != 0.0 && *v != 1.0) {
        Some(index) => Err(Error::NonBinary { index, value: x[index] }),
        None => Ok(()),
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Batch of diagonal Gaussians on the tape, one per row.
#[derive(Clone, Copy, Debug)]
pub struct GaussianVars {
    pub mean: Var,
    pub log_std: Var,
}

impl GaussianVars {
    /// Per-row log-density of `x`, shape `[n, 1]`.
    pub fn log_prob(&self, g: &mut Graph, x: Var) -> Result<Var> {
        gaussian_log_prob(g, self.mean, self.log_std, x)
    }

    /// Reparameterized sample `mean + exp(log_std) ⊙ noise`.
    pub fn sample(&self, g: &mut Graph, noise: &Tensor) -> Result<Var> {
        let eps = g.constant(noise.clone());
        let std = g.exp(self.log_std)?;
        let scaled = g.mul(std, eps)?;
        g.add(self.mean, scaled)
    }

    /// Per-row `KL(self ‖ N(0, I))`, shape `[n, 1]`.
    pub fn kl_to_standard(&self, g: &mut Graph) -> Result<Var> {
        // 0.5 * (mu^2 + exp(2s) - 1) - s
        let mu2 = g.square(self.mean)?;
        let two_s = g.scale(self.log_std, 2.0)?;
        let var = g.exp(two_s)?;
        let a = g.add(mu2, var)?;
        let a = g.add_scalar(a, -1.0)?;
        let a = g.scale(a, 0.5)?;
        let kl = g.sub(a, self.log_std)?;
        g.row_sum(kl)
    }

    pub fn to_plain(&self, g: &Graph) -> Vec<DiagonalGaussian> {
        let m = g.value(self.mean);
        let s = g.value(self.log_std);
        (0..m.rows())
            .map(|i| DiagonalGaussian {
                mean: m.row_slice(i).to_vec(),
                log_std: s.row_slice(i).to_vec(),
            })
            .collect()
    }
}

/// Per-row diagonal Gaussian log-density, differentiable in all arguments.
pub fn gaussian_log_prob(g: &mut Graph, mean: Var, log_std: Var, x: Var) -> Result<Var> {
    let diff = g.sub(x, mean)?;
    let neg_s = g.neg(log_std)?;
    let inv_std = g.exp(neg_s)?;
    let u = g.mul(diff, inv_std)?;
    let u2 = g.square(u)?;
    let half = g.scale(u2, -0.5)?;
    let lp = g.sub(half, log_std)?;
    let lp = g.add_scalar(lp, -HALF_LN_2PI)?;
    g.row_sum(lp)
}

/// Per-row standard normal log-density.
pub fn standard_normal_log_prob(g: &mut Graph, x: Var) -> Result<Var> {
    let x2 = g.square(x)?;
    let lp = g.scale(x2, -0.5)?;
    let lp = g.add_scalar(lp, -HALF_LN_2PI)?;
    g.row_sum(lp)
}

/// Per-row factorized Bernoulli log-likelihood of binary `x` given logits.
pub fn bernoulli_log_prob(g: &mut Graph, logits: Var, x: Var) -> Result<Var> {
    check_binary(g.value(x).data())?;
    let xl = g.mul(x, logits)?;
    let sp = g.softplus(logits)?;
    let lp = g.sub(xl, sp)?;
    g.row_sum(lp)
}

/// `[rows, cols]` matrix of independent standard normal draws.
pub fn standard_normal_tensor<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}
