//! Encoder/decoder MLPs and the single-sample estimators of `log q(x)`.
//!
//! Both networks are `input -> [affine, tanh] x hidden_layers -> heads`.
//! Gaussian heads emit a mean and a log standard deviation; the log standard
//! deviation is clamped to `[-LOG_STD_LIMIT, LOG_STD_LIMIT]` here, not in the
//! distribution types. The latent prior `p(z)` is fixed to the standard
//! normal anchor.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{Graph, Var};
use crate::container::{Container, CHECKPOINT_MAGIC};
use crate::distributions::{
    bernoulli_log_prob, standard_normal_log_prob, DiagonalGaussian, FactorizedBernoulli,
    GaussianVars,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LOG_STD_LIMIT: f64 = 7.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderFamily {
    Gaussian,
    Bernoulli,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Vae,
    Mim,
    Amim,
}

impl std::fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ObjectiveKind::Vae => "vae",
            ObjectiveKind::Mim => "mim",
            ObjectiveKind::Amim => "amim",
        })
    }
}

impl std::str::FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vae" => Ok(ObjectiveKind::Vae),
            "mim" => Ok(ObjectiveKind::Mim),
            "amim" => Ok(ObjectiveKind::Amim),
            _ => Err(Error::Config(format!("unknown objective `{s}` (expected vae, mim or amim)"))),
        }
    }
}

fn default_hidden_layers() -> usize {
    1
}

fn default_family() -> DecoderFamily {
    DecoderFamily::Gaussian
}

fn default_objective() -> ObjectiveKind {
    ObjectiveKind::Mim
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub x_dim: usize,
    pub z_dim: usize,
    pub hidden_units: usize,
    /// Number of tanh hidden layers in each network.
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: usize,
    #[serde(default = "default_family")]
    pub decoder_family: DecoderFamily,
    #[serde(default = "default_objective")]
    pub objective: ObjectiveKind,
}

impl ModelConfig {
    pub fn new(x_dim: usize, z_dim: usize, hidden_units: usize) -> Self {
        Self {
            x_dim,
            z_dim,
            hidden_units,
            hidden_layers: 1,
            decoder_family: DecoderFamily::Gaussian,
            objective: ObjectiveKind::Mim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_dim == 0 || self.z_dim == 0 || self.hidden_units == 0 || self.hidden_layers == 0 {
            return Err(Error::Config(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// A named weight or bias with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    fn new(name: String, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { name, value, grad }
    }
}

/// `(network, input width, [(head, width)])`.
type NetLayout = (&'static str, usize, Vec<(&'static str, usize)>);

/// Encoder and decoder weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    params: Vec<Parameter>,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("shape matches")
}

impl ModelParams {
    /// Glorot-uniform weights and zero biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for (net, input, heads) in Self::layout(config) {
            let mut fan_in = input;
            for l in 1..=config.hidden_layers {
                let h = config.hidden_units;
                params.push(Parameter::new(format!("{net}.layer{l}.weight"), glorot(&mut rng, fan_in, h)));
                params.push(Parameter::new(format!("{net}.layer{l}.bias"), Tensor::zeros(&[1, h])));
                fan_in = h;
            }
            for (head, out) in heads {
                params.push(Parameter::new(format!("{net}.{head}.weight"), glorot(&mut rng, fan_in, out)));
                params.push(Parameter::new(format!("{net}.{head}.bias"), Tensor::zeros(&[1, out])));
            }
        }
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    fn layout(config: &ModelConfig) -> [NetLayout; 2] {
        let dec_heads = match config.decoder_family {
            DecoderFamily::Gaussian => vec![("mean", config.x_dim), ("log_std", config.x_dim)],
            DecoderFamily::Bernoulli => vec![("logits", config.x_dim)],
        };
        [
            ("encoder", config.x_dim, vec![("mean", config.z_dim), ("log_std", config.z_dim)]),
            ("decoder", config.z_dim, dec_heads),
        ]
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Sets every weight and bias to zero.
    pub fn zeroed(mut self) -> Self {
        for p in &mut self.params {
            p.value = Tensor::zeros(p.value.shape());
        }
        self
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Tensor::zeros(p.value.shape());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }

    /// Registers every parameter as a tracked leaf on `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound<'_> {
        let vars = self.params.iter().map(|p| g.param(p.value.clone())).collect();
        Bound { model: self, vars }
    }

    /// Registers every parameter as a constant (evaluation only).
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound<'_> {
        let vars = self.params.iter().map(|p| g.constant(p.value.clone())).collect();
        Bound { model: self, vars }
    }

    /// Encodes one observation.
    pub fn encode(&self, x: &[f64]) -> Result<DiagonalGaussian> {
        let (mean, log_std) = self.encode_batch(&Tensor::row(x.to_vec()))?;
        DiagonalGaussian::new(mean.into_data(), log_std.into_data())
    }

    /// Encoder means and log standard deviations for every row of `x`.
    pub fn encode_batch(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let b = self.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let q = b.encode(&mut g, xv)?;
        Ok((g.value(q.mean).clone(), g.value(q.log_std).clone()))
    }

    /// Decodes one latent point.
    pub fn decode(&self, z: &[f64]) -> Result<Decoded> {
        let mut g = Graph::new();
        let b = self.bind_frozen(&mut g);
        let zv = g.constant(Tensor::row(z.to_vec()));
        Ok(match b.decode(&mut g, zv)? {
            DecoderVars::Gaussian(p) => Decoded::Gaussian(DiagonalGaussian::new(
                g.value(p.mean).data().to_vec(),
                g.value(p.log_std).data().to_vec(),
            )?),
            DecoderVars::Bernoulli { logits } => {
                Decoded::Bernoulli(FactorizedBernoulli::new(g.value(logits).data().to_vec())?)
            }
        })
    }

    pub fn save(&self, path: &Path, seed: u64, epoch: usize) -> Result<()> {
        let names: Vec<&str> = self.params.iter().map(|p| p.name.as_str()).collect();
        let shapes: Vec<&[usize]> = self.params.iter().map(|p| p.value.shape()).collect();
        Container {
            metadata: json!({
                "format_version": 1,
                "names": names,
                "shapes": shapes,
                "objective": self.config.objective,
                "config": self.config,
                "seed": seed,
                "epoch": epoch,
            }),
            arrays: self
                .params
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
        }
        .write(path, CHECKPOINT_MAGIC)
    }

    /// Loads a checkpoint, returning the params with the stored seed and epoch.
    pub fn load(path: &Path) -> Result<(Self, u64, usize)> {
        let c = Container::read(path, CHECKPOINT_MAGIC)?;
        let config: ModelConfig = serde_json::from_value(c.metadata["config"].clone())?;
        let seed = c.metadata["seed"].as_u64().unwrap_or(0);
        let epoch = c.metadata["epoch"].as_u64().unwrap_or(0) as usize;
        let mut model = Self::init(&config, 0)?;
        for p in &mut model.params {
            let t = c
                .array(&p.name)
                .ok_or_else(|| Error::Container(format!("missing array `{}`", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint",
                    left: p.value.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            p.value = t.clone();
        }
        Ok((model, seed, epoch))
    }
}

/// Plain-value decoder output for a single latent point.
#[derive(Clone, Debug, PartialEq)]
pub enum Decoded {
    Gaussian(DiagonalGaussian),
    Bernoulli(FactorizedBernoulli),
}

impl Decoded {
    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        match self {
            Decoded::Gaussian(g) => g.log_prob(x),
            Decoded::Bernoulli(b) => b.log_prob(x),
        }
    }
}

/// Decoder output on the tape.
#[derive(Clone, Copy, Debug)]
pub enum DecoderVars {
    Gaussian(GaussianVars),
    Bernoulli { logits: Var },
}

impl DecoderVars {
    /// Per-row `log p(x | z)`.
    pub fn log_prob(&self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            DecoderVars::Gaussian(p) => p.log_prob(g, x),
            DecoderVars::Bernoulli { logits } => bernoulli_log_prob(g, *logits, x),
        }
    }

    /// Draws `x ~ p(x | z)`.
    ///
    /// Gaussian draws are reparameterized. Bernoulli draws are discrete, so
    /// the sample enters the tape as a constant.
    pub fn sample<R: Rng + ?Sized>(&self, g: &mut Graph, noise: &Tensor, rng: &mut R) -> Result<Var> {
        match self {
            DecoderVars::Gaussian(p) => p.sample(g, noise),
            DecoderVars::Bernoulli { logits } => {
                let l = g.value(*logits);
                let x = l.map(|l| {
                    let u: f64 = rng.random();
                    if u < crate::autodiff::sigmoid(l) { 1.0 } else { 0.0 }
                });
                Ok(g.constant(x))
            }
        }
    }

    /// Mean of `p(x | z)` (the success probabilities for Bernoulli).
    pub fn mean(&self, g: &Graph) -> Tensor {
        match self {
            DecoderVars::Gaussian(p) => g.value(p.mean).clone(),
            DecoderVars::Bernoulli { logits } => g.value(*logits).map(crate::autodiff::sigmoid),
        }
    }
}

/// Parameters registered on one graph.
pub struct Bound<'a> {
    model: &'a ModelParams,
    vars: Vec<Var>,
}

impl<'a> Bound<'a> {
    /// Uses caller-provided nodes, in [`ModelParams::params`] order, as the weights.
    pub fn from_vars(model: &'a ModelParams, vars: Vec<Var>) -> Self {
        debug_assert_eq!(vars.len(), model.params.len());
        Self { model, vars }
    }

    /// `(x_dim, z_dim)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.model.config.x_dim, self.model.config.z_dim)
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn var(&self, name: &str) -> Option<Var> {
        self.model
            .params
            .iter()
            .position(|p| p.name == name)
            .map(|i| self.vars[i])
    }

    /// Copies the gradients for every bound parameter into `params`.
    pub fn gradients(&self, g: &Graph, loss: Var) -> Result<Vec<Tensor>> {
        let grads = g.backward(loss)?;
        Ok(self.vars.iter().map(|v| grads.wrt(*v)).collect())
    }

    fn trunk(&self, g: &mut Graph, mut h: Var, offset: usize) -> Result<(Var, usize)> {
        let mut i = offset;
        for _ in 0..self.model.config.hidden_layers {
            let a = g.affine(h, self.vars[i], self.vars[i + 1])?;
            h = g.tanh(a)?;
            i += 2;
        }
        Ok((h, i))
    }

    fn check_cols(g: &Graph, v: Var, expected: usize) -> Result<()> {
        let got = g.value(v).cols();
        if got != expected {
            return Err(Error::Dimension { expected, got });
        }
        Ok(())
    }

    fn decoder_offset(&self) -> usize {
        2 * self.model.config.hidden_layers + 4
    }

    /// `q(z | x)` for each row of `x`.
    pub fn encode(&self, g: &mut Graph, x: Var) -> Result<GaussianVars> {
        Self::check_cols(g, x, self.model.config.x_dim)?;
        let (h, i) = self.trunk(g, x, 0)?;
        let mean = g.affine(h, self.vars[i], self.vars[i + 1])?;
        let raw = g.affine(h, self.vars[i + 2], self.vars[i + 3])?;
        let log_std = g.clamp(raw, -LOG_STD_LIMIT, LOG_STD_LIMIT)?;
        Ok(GaussianVars { mean, log_std })
    }

    /// `p(x | z)` for each row of `z`.
    pub fn decode(&self, g: &mut Graph, z: Var) -> Result<DecoderVars> {
        Self::check_cols(g, z, self.model.config.z_dim)?;
        let (h, i) = self.trunk(g, z, self.decoder_offset())?;
        let head = g.affine(h, self.vars[i], self.vars[i + 1])?;
        Ok(match self.model.config.decoder_family {
            DecoderFamily::Gaussian => {
                let raw = g.affine(h, self.vars[i + 2], self.vars[i + 3])?;
                let log_std = g.clamp(raw, -LOG_STD_LIMIT, LOG_STD_LIMIT)?;
                DecoderVars::Gaussian(GaussianVars { mean: head, log_std })
            }
            DecoderFamily::Bernoulli => DecoderVars::Bernoulli { logits: head },
        })
    }

    /// Importance-sampled single-sample estimate of `log q(x)` per row:
    /// `log p(x|z) + log P(z) - log q(z|x)` with `z ~ q(z|x)`.
    pub fn log_qx_importance(&self, g: &mut Graph, x: Var, z_enc: Var, log_q_z_given_x: Var) -> Result<Var> {
        let dec = self.decode(g, z_enc)?;
        let lpx = dec.log_prob(g, x)?;
        let lpz = standard_normal_log_prob(g, z_enc)?;
        let joint = g.add(lpx, lpz)?;
        g.sub(joint, log_q_z_given_x)
    }

    /// Plug-in estimate of `log q(x)` per row: `log p(x | z)` with `z ~ P(z)`.
    pub fn log_qx_marginal(&self, g: &mut Graph, x: Var, z_prior: Var) -> Result<Var> {
        let dec = self.decode(g, z_prior)?;
        dec.log_prob(g, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradients;
    use crate::distributions::{gaussian_log_prob, standard_normal_tensor};

    fn cfg(x: usize, z: usize, h: usize) -> ModelConfig {
        ModelConfig::new(x, z, h)
    }

    #[test]
    fn zero_network_gives_standard_normal() {
        let m = ModelParams::init(&cfg(2, 2, 20), 0).unwrap().zeroed();
        let q = m.encode(&[0.7, -1.1]).unwrap();
        assert_eq!(q.mean, vec![0.0, 0.0]);
        assert_eq!(q.log_std, vec![0.0, 0.0]);
        match m.decode(&[0.3, 0.2]).unwrap() {
            Decoded::Gaussian(p) => {
                assert_eq!(p.mean, vec![0.0, 0.0]);
                assert_eq!(p.log_std, vec![0.0, 0.0]);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn shapes_follow_config() {
        let m = ModelParams::init(&cfg(2, 2, 20), 1).unwrap();
        assert_eq!(m.encode(&[0.1, 0.2]).unwrap().dim(), 2);
        let m = ModelParams::init(&cfg(5, 3, 7), 1).unwrap();
        assert_eq!(m.encode(&[0.0; 5]).unwrap().dim(), 3);
        match m.decode(&[0.0; 3]).unwrap() {
            Decoded::Gaussian(p) => assert_eq!(p.dim(), 5),
            _ => unreachable!(),
        }
        assert!(matches!(m.encode(&[0.0; 4]), Err(Error::Dimension { expected: 5, got: 4 })));
        assert!(m.decode(&[0.0; 2]).is_err());
    }

    #[test]
    fn parameter_names_are_unique() {
        let mut c = cfg(3, 2, 4);
        c.hidden_layers = 2;
        let m = ModelParams::init(&c, 0).unwrap();
        let mut names: Vec<_> = m.params().iter().map(|p| p.name.clone()).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
        assert!(m.get("encoder.layer2.weight").is_some());
        assert!(m.get("decoder.log_std.bias").is_some());
    }

    #[test]
    fn glorot_range() {
        let m = ModelParams::init(&cfg(2, 2, 500), 4).unwrap();
        let w = &m.get("encoder.layer1.weight").unwrap().value;
        let limit = (6.0 / 502.0f64).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= limit));
        assert!(m.get("encoder.layer1.bias").unwrap().value.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn encode_decode_are_pure() {
        let m = ModelParams::init(&cfg(2, 2, 16), 9).unwrap();
        let a = m.encode(&[0.4, 0.5]).unwrap();
        let b = m.encode(&[0.4, 0.5]).unwrap();
        assert_eq!(a, b);
        assert_eq!(m.decode(&[0.1, 0.1]).unwrap(), m.decode(&[0.1, 0.1]).unwrap());
    }

    #[test]
    fn log_std_clamped() {
        let mut m = ModelParams::init(&cfg(1, 1, 2), 0).unwrap().zeroed();
        m.get_mut("encoder.log_std.bias").unwrap().value = Tensor::row(vec![-50.0]);
        assert_eq!(m.encode(&[0.0]).unwrap().log_std, vec![-LOG_STD_LIMIT]);
    }

    fn head_gradient_error(net: &str, input_dim: usize) -> f64 {
        let m = ModelParams::init(&cfg(3, 2, 5), 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = standard_normal_tensor(&mut rng, 4, input_dim);
        let name = format!("{net}.mean.weight");
        let idx = m.params.iter().position(|q| q.name == name).unwrap();
        check_gradients(
            |g, p| {
                // everything frozen except the head weight
                let mut vars = m.bind_frozen(g).vars;
                vars[idx] = p[0];
                let b = Bound::from_vars(&m, vars);
                let x = g.constant(input.clone());
                let out = if net == "encoder" {
                    b.encode(g, x)?.mean
                } else {
                    match b.decode(g, x)? {
                        DecoderVars::Gaussian(p) => p.mean,
                        DecoderVars::Bernoulli { logits } => logits,
                    }
                };
                let t = g.tanh(out)?;
                g.sum(t)
            },
            &[m.get(&name).unwrap().value.clone()],
            1e-5,
        )
        .unwrap()
    }

    #[test]
    fn head_gradients_match_fd() {
        assert!(head_gradient_error("encoder", 3) < 1e-4);
        assert!(head_gradient_error("decoder", 2) < 1e-4);
    }

    #[test]
    fn bernoulli_decoder_shapes() {
        let mut c = cfg(6, 2, 4);
        c.decoder_family = DecoderFamily::Bernoulli;
        let m = ModelParams::init(&c, 0).unwrap();
        assert!(m.get("decoder.logits.weight").is_some());
        assert!(m.get("decoder.mean.weight").is_none());
        match m.decode(&[0.0, 0.0]).unwrap() {
            Decoded::Bernoulli(b) => assert_eq!(b.logits.len(), 6),
            _ => unreachable!(),
        }
    }

    /// Encoder equal to the prior and a decoder that ignores z.
    fn decoupled_model(x_dim: usize) -> ModelParams {
        let mut m = ModelParams::init(&cfg(x_dim, 2, 3), 5).unwrap().zeroed();
        m.get_mut("decoder.mean.bias").unwrap().value = Tensor::row(vec![0.5; x_dim]);
        m.get_mut("decoder.log_std.bias").unwrap().value = Tensor::row(vec![-0.2; x_dim]);
        m
    }

    #[test]
    fn importance_estimate_exact_when_posterior_is_prior() {
        let m = decoupled_model(2);
        let x = Tensor::matrix(3, 2, vec![0.1, 0.9, -1.0, 0.4, 2.0, 2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::new();
        let b = m.bind(&mut g);
        let xv = g.constant(x.clone());
        let q = b.encode(&mut g, xv).unwrap();
        let z = q.sample(&mut g, &standard_normal_tensor(&mut rng, 3, 2)).unwrap();
        let lq = q.log_prob(&mut g, z).unwrap();
        let est = b.log_qx_importance(&mut g, xv, z, lq).unwrap();
        let px = DiagonalGaussian::new(vec![0.5, 0.5], vec![-0.2, -0.2]).unwrap();
        for i in 0..3 {
            let exact = px.log_prob(x.row_slice(i)).unwrap();
            assert!((g.value(est).data()[i] - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_estimate_definitions() {
        let m = decoupled_model(2);
        let mut g = Graph::new();
        let b = m.bind(&mut g);
        let x = g.constant(Tensor::row(vec![0.3, -0.3]));
        let z = g.constant(Tensor::row(vec![1.5, -2.0]));
        let est = b.log_qx_marginal(&mut g, x, z).unwrap();
        let px = DiagonalGaussian::new(vec![0.5, 0.5], vec![-0.2, -0.2]).unwrap();
        assert!((g.scalar(est) - px.log_prob(&[0.3, -0.3]).unwrap()).abs() < 1e-12);

        let m = ModelParams::init(&cfg(2, 2, 4), 3).unwrap();
        let mut g = Graph::new();
        let b = m.bind(&mut g);
        let x = g.constant(Tensor::row(vec![0.3, -0.3]));
        let z = g.constant(Tensor::row(vec![0.2, 0.1]));
        let est = b.log_qx_marginal(&mut g, x, z).unwrap();
        let dec = match b.decode(&mut g, z).unwrap() {
            DecoderVars::Gaussian(p) => p,
            _ => unreachable!(),
        };
        let direct = gaussian_log_prob(&mut g, dec.mean, dec.log_std, x).unwrap();
        assert_eq!(g.scalar(est).to_bits(), g.scalar(direct).to_bits());
    }

    #[test]
    fn importance_estimate_finite_for_random_models() {
        let m = ModelParams::init(&cfg(4, 2, 8), 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut g = Graph::new();
        let b = m.bind(&mut g);
        let xv = g.constant(standard_normal_tensor(&mut rng, 10, 4));
        let q = b.encode(&mut g, xv).unwrap();
        let z = q.sample(&mut g, &standard_normal_tensor(&mut rng, 10, 2)).unwrap();
        let lq = q.log_prob(&mut g, z).unwrap();
        let est = b.log_qx_importance(&mut g, xv, z, lq).unwrap();
        assert!(g.value(est).all_finite());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.mimckpt");
        let mut c = cfg(3, 2, 6);
        c.objective = ObjectiveKind::Amim;
        let m = ModelParams::init(&c, 12).unwrap();
        m.save(&path, 12, 7).unwrap();
        let (back, seed, epoch) = ModelParams::load(&path).unwrap();
        assert_eq!((seed, epoch), (12, 7));
        assert_eq!(back.config, m.config);
        for (a, b) in back.params().iter().zip(m.params()) {
            assert_eq!(a.value, b.value);
        }
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"MIMCKPT1");
    }

    /// `exp` of per-row estimates: mean and standard error.
    fn exp_mean_se(v: &[f64]) -> (f64, f64) {
        let w: Vec<f64> = v.iter().map(|e| e.exp()).collect();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn importance_estimate_matches_quadrature() {
        let m = crate::testutil::linear_gaussian(1.2, 0.6, 0.5, 0.8);
        let x0 = 0.7;
        let exact = crate::testutil::quadrature_log_marginal(&m, x0).exp();
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut g = Graph::new();
        let b = m.bind_frozen(&mut g);
        let x = g.constant(Tensor::full(&[n, 1], x0));
        let q = b.encode(&mut g, x).unwrap();
        let z = q.sample(&mut g, &standard_normal_tensor(&mut rng, n, 1)).unwrap();
        let lq = q.log_prob(&mut g, z).unwrap();
        let est = b.log_qx_importance(&mut g, x, z, lq).unwrap();
        let (mean, se) = exp_mean_se(g.value(est).data());
        assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
    }

    #[test]
    fn marginal_estimate_matches_quadrature() {
        let m = crate::testutil::linear_gaussian(1.2, 0.6, 0.5, 0.8);
        let x0 = -0.4;
        let exact = crate::testutil::quadrature_log_marginal(&m, x0).exp();
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mut g = Graph::new();
        let b = m.bind_frozen(&mut g);
        let x = g.constant(Tensor::full(&[n, 1], x0));
        let z = g.constant(standard_normal_tensor(&mut rng, n, 1));
        let est = b.log_qx_marginal(&mut g, x, z).unwrap();
        let (mean, se) = exp_mean_se(g.value(est).data());
        assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
    }
}
