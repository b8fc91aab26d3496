//! Training losses: VAE negative ELBO, the two-branch MIM loss and A-MIM.
//!
//! All losses are batch means and use a single latent sample per datum.
//! The MIM total is the sum of an encoding-branch average over `x ~ P(x)`,
//! `z ~ q(z|x)` and a decoding-branch average over `z ~ P(z)`, `x ~ p(x|z)`.
//! The encoding branch substitutes the importance-sampled `log q(x)`; the
//! decoding branch substitutes the marginal plug-in `log p(x|z)`.

use crate::autodiff::{Graph, Var};
use crate::distributions::standard_normal_log_prob;
use crate::error::{Error, Result};
use crate::model::{Bound, ObjectiveKind};
use crate::noise::NoiseSource;
use crate::tensor::Tensor;

/// Weights on `(log q(z|x), log p(x|z), log P(z))` in the decoding branch.
pub const DEC_BRANCH_WEIGHTS: [f64; 3] = [-0.5, -1.0, -0.5];

/// Weights on `(log p(x|z), log P(z))` in the encoding branch.
pub const ENC_BRANCH_WEIGHTS: [f64; 2] = [-1.0, -1.0];

/// One named batch-mean term of a loss and its weight in the total.
#[derive(Clone, Debug, PartialEq)]
pub struct LossPart {
    pub name: &'static str,
    pub weight: f64,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct LossValue {
    /// Scalar loss on the tape.
    pub total: Var,
    pub value: f64,
    pub parts: Vec<LossPart>,
}

impl LossValue {
    /// `Σ weight · value` over the parts.
    pub fn recombined(&self) -> f64 {
        self.parts.iter().map(|p| p.weight * p.value).sum()
    }

    pub fn part(&self, name: &str) -> Option<f64> {
        self.parts.iter().find(|p| p.name == name).map(|p| p.value)
    }
}

/// Sums weighted per-row terms into a scalar batch-mean loss.
fn weighted_mean(g: &mut Graph, terms: &[(&'static str, f64, Var)], n: usize) -> Result<LossValue> {
    let inv_n = 1.0 / n as f64;
    let mut parts = Vec::with_capacity(terms.len());
    let mut total: Option<Var> = None;
    for &(name, weight, rows) in terms {
        let s = g.sum(rows)?;
        let mean = g.scale(s, inv_n)?;
        parts.push(LossPart {
            name,
            weight,
            value: g.scalar(mean),
        });
        let w = g.scale(mean, weight)?;
        total = Some(match total {
            Some(t) => g.add(t, w)?,
            None => w,
        });
    }
    let total = total.expect("at least one term");
    Ok(LossValue {
        total,
        value: g.scalar(total),
        parts,
    })
}

fn batch_rows(x: &Tensor) -> Result<usize> {
    match x.rows() {
        0 => Err(Error::InvalidArgument("empty batch".into())),
        n => Ok(n),
    }
}

/// Negative ELBO: `−mean(log p(x|z) − KL(q(z|x) ‖ P(z)))` with one
/// reparameterized `z ~ q(z|x)` per row. Parts: `recon`, `kl`.
pub fn elbo_batch(g: &mut Graph, model: &Bound, x: &Tensor, noise: &mut NoiseSource) -> Result<LossValue> {
    let n = batch_rows(x)?;
    let xv = g.constant(x.clone());
    let q = model.encode(g, xv)?;
    let eps = noise.encoder_noise(n, g.value(q.mean).cols())?;
    let z = q.sample(g, &eps)?;
    let dec = model.decode(g, z)?;
    let recon = dec.log_prob(g, xv)?;
    let kl = q.kl_to_standard(g)?;
    weighted_mean(g, &[("recon", -1.0, recon), ("kl", 1.0, kl)], n)
}

/// Encoding branch: `−mean(log p(x|z) + log P(z))`, `z ~ q(z|x)`.
pub fn mim_enc_branch(g: &mut Graph, model: &Bound, x: &Tensor, noise: &mut NoiseSource) -> Result<LossValue> {
    let n = batch_rows(x)?;
    let xv = g.constant(x.clone());
    let q = model.encode(g, xv)?;
    let eps = noise.encoder_noise(n, g.value(q.mean).cols())?;
    let z = q.sample(g, &eps)?;
    let dec = model.decode(g, z)?;
    let lpx = dec.log_prob(g, xv)?;
    let lpz = standard_normal_log_prob(g, z)?;
    let [wx, wz] = ENC_BRANCH_WEIGHTS;
    weighted_mean(g, &[("log_p_x_given_z", wx, lpx), ("log_p_z", wz, lpz)], n)
}

/// Decoding branch over `n` fresh prior samples:
/// `−(1/2n) Σ (log q(z|x) + 2 log p(x|z) + log P(z))`, `z ~ P(z)`, `x ~ p(x|z)`.
pub fn mim_dec_branch(g: &mut Graph, model: &Bound, n: usize, noise: &mut NoiseSource) -> Result<LossValue> {
    if n == 0 {
        return Err(Error::InvalidArgument("decoding branch needs n >= 1".into()));
    }
    let (x_dim, z_dim) = model.dims();
    let z = g.constant(noise.prior(n, z_dim)?);
    let dec = model.decode(g, z)?;
    let x = noise.decoder_sample(g, &dec, n, x_dim)?;
    let q = model.encode(g, x)?;
    let lqz = q.log_prob(g, z)?;
    // log q(x) ≈ log p(x|z); same node as the reconstruction term.
    let lpx = model.log_qx_marginal(g, x, z)?;
    let lpz = standard_normal_log_prob(g, z)?;
    let [wq, wx, wz] = DEC_BRANCH_WEIGHTS;
    weighted_mean(
        g,
        &[("log_q_z_given_x", wq, lqz), ("log_p_x_given_z", wx, lpx), ("log_p_z", wz, lpz)],
        n,
    )
}

/// Full MIM loss: encoding branch plus a decoding branch of matching size.
/// Parts: `enc_branch`, `dec_branch`.
pub fn mim_step_loss(g: &mut Graph, model: &Bound, x: &Tensor, noise: &mut NoiseSource) -> Result<LossValue> {
    let enc = mim_enc_branch(g, model, x, noise)?;
    let dec = mim_dec_branch(g, model, x.rows(), noise)?;
    let total = g.add(enc.total, dec.total)?;
    Ok(LossValue {
        total,
        value: g.scalar(total),
        parts: vec![
            LossPart {
                name: "enc_branch",
                weight: 1.0,
                value: enc.value,
            },
            LossPart {
                name: "dec_branch",
                weight: 1.0,
                value: dec.value,
            },
        ],
    })
}

/// A-MIM: the MIM cross-entropy pair on encoding samples only,
/// `−mean(½[(log q(z|x) + log q̂(x)) + (log p(x|z) + log P(z))])` with the
/// importance-sampled `q̂`. Never samples the decoder.
pub fn amim_step_loss(g: &mut Graph, model: &Bound, x: &Tensor, noise: &mut NoiseSource) -> Result<LossValue> {
    let n = batch_rows(x)?;
    let xv = g.constant(x.clone());
    let q = model.encode(g, xv)?;
    let eps = noise.encoder_noise(n, g.value(q.mean).cols())?;
    let z = q.sample(g, &eps)?;
    let lqz = q.log_prob(g, z)?;
    let lqx = model.log_qx_importance(g, xv, z, lqz)?;
    let enc_joint = g.add(lqz, lqx)?;
    let dec = model.decode(g, z)?;
    let lpx = dec.log_prob(g, xv)?;
    let lpz = standard_normal_log_prob(g, z)?;
    let dec_joint = g.add(lpx, lpz)?;
    weighted_mean(g, &[("log_q_joint", -0.5, enc_joint), ("log_p_joint", -0.5, dec_joint)], n)
}

/// A loss the trainer can minimize.
pub trait Objective: Sync {
    fn loss(&self, g: &mut Graph, model: &Bound, x: &Tensor, noise: &mut NoiseSource) -> Result<LossValue>;
}

impl Objective for ObjectiveKind {
    fn loss(&self, g: &mut Graph, model: &Bound, x: &Tensor, noise: &mut NoiseSource) -> Result<LossValue> {
        match self {
            ObjectiveKind::Vae => elbo_batch(g, model, x, noise),
            ObjectiveKind::Mim => mim_step_loss(g, model, x, noise),
            ObjectiveKind::Amim => amim_step_loss(g, model, x, noise),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradients;
    use crate::distributions::{standard_normal_tensor, HALF_LN_2PI};
    use crate::model::{ModelConfig, ModelParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(x: usize, z: usize, h: usize, seed: u64) -> ModelParams {
        ModelParams::init(&ModelConfig::new(x, z, h), seed).unwrap()
    }

    fn eval<F>(m: &ModelParams, f: F) -> LossValue
    where
        F: FnOnce(&mut Graph, &Bound) -> Result<LossValue>,
    {
        let mut g = Graph::new();
        let b = m.bind(&mut g);
        f(&mut g, &b).unwrap()
    }

    fn data(n: usize, d: usize, seed: u64) -> Tensor {
        standard_normal_tensor(&mut ChaCha8Rng::seed_from_u64(seed), n, d)
    }

    #[test]
    fn zero_network_elbo() {
        let m = model(3, 2, 4, 0).zeroed();
        let x = Tensor::zeros(&[5, 3]);
        let mut noise = NoiseSource::scripted(vec![Tensor::zeros(&[5, 2])], 0);
        let l = eval(&m, |g, b| elbo_batch(g, b, &x, &mut noise));
        let elbo = -l.value;
        assert!((elbo - (-HALF_LN_2PI * 3.0)).abs() < 1e-12);
        assert_eq!(l.part("kl"), Some(0.0));
    }

    #[test]
    fn kl_part_nonnegative_and_parts_recombine() {
        for seed in 0..10 {
            let m = model(2, 2, 6, seed);
            let x = data(16, 2, seed + 100);
            let mut noise = NoiseSource::new(seed);
            let l = eval(&m, |g, b| elbo_batch(g, b, &x, &mut noise));
            assert!(l.part("kl").unwrap() >= 0.0);
            assert!((l.recombined() - l.value).abs() < 1e-10);
        }
    }

    #[test]
    fn amim_equals_enc_branch() {
        for seed in 0..20 {
            let m = model(2, 2, 8, seed);
            let x = data(32, 2, seed + 1);
            let mut n1 = NoiseSource::new(seed);
            let mut n2 = NoiseSource::new(seed);
            let a = eval(&m, |g, b| amim_step_loss(g, b, &x, &mut n1));
            let e = eval(&m, |g, b| mim_enc_branch(g, b, &x, &mut n2));
            assert!((a.value - e.value).abs() < 1e-12, "{} vs {}", a.value, e.value);
            assert_eq!(n1.counts().decoder, 0);
            assert_eq!(n1.counts().prior, 0);
        }
    }

    #[test]
    fn enc_branch_is_the_cross_entropy_pair_after_substitution() {
        let m = model(3, 2, 5, 4);
        let x = data(20, 3, 9);
        let mut noise = NoiseSource::new(2);
        let mut g = Graph::new();
        let b = m.bind(&mut g);
        let xv = g.constant(x.clone());
        let q = b.encode(&mut g, xv).unwrap();
        let eps = noise.encoder_noise(20, 2).unwrap();
        let z = q.sample(&mut g, &eps).unwrap();
        let lqz = q.log_prob(&mut g, z).unwrap();
        let lqx = b.log_qx_importance(&mut g, xv, z, lqz).unwrap();
        let dec = b.decode(&mut g, z).unwrap();
        let lpx = dec.log_prob(&mut g, xv).unwrap();
        let lpz = standard_normal_log_prob(&mut g, z).unwrap();
        let long_form: f64 = (0..20)
            .map(|i| {
                let v = |t: Var| g.value(t).data()[i];
                -0.5 * ((v(lqz) + v(lqx)) + (v(lpx) + v(lpz)))
            })
            .sum::<f64>()
            / 20.0;
        let e = eval(&m, |g, b| mim_enc_branch(g, b, &x, &mut NoiseSource::new(2)));
        assert!((long_form - e.value).abs() < 1e-10);
    }

    /// Encoder equal to the prior, decoder N(x; 0, I) ignoring z.
    fn decoupled(x_dim: usize) -> ModelParams {
        model(x_dim, 2, 3, 0).zeroed()
    }

    #[test]
    fn decoupled_model_branches() {
        let m = decoupled(2);
        let x = data(10, 2, 3);
        let eps = data(10, 2, 4);
        let mut noise = NoiseSource::scripted(vec![eps.clone()], 0);
        let e = eval(&m, |g, b| mim_enc_branch(g, b, &x, &mut noise));
        let lp = |t: &Tensor| -> f64 {
            (0..t.rows())
                .map(|i| t.row_slice(i).iter().map(|v| -HALF_LN_2PI - 0.5 * v * v).sum::<f64>())
                .sum::<f64>()
                / t.rows() as f64
        };
        // z = eps since q(z|x) = N(0, I)
        assert!((e.value - (-lp(&x) - lp(&eps))).abs() < 1e-12);

        let zp = data(10, 2, 5);
        let ex = data(10, 2, 6);
        let mut noise = NoiseSource::scripted(vec![zp.clone(), ex.clone()], 0);
        let d = eval(&m, |g, b| mim_dec_branch(g, b, 10, &mut noise));
        // x = ex, log q(z|x) = log N(z), log p(x|z) = log N(x)
        let expect = -0.5 * lp(&zp) - lp(&ex) - 0.5 * lp(&zp);
        assert!((d.value - expect).abs() < 1e-12);
    }

    #[test]
    fn dec_branch_weights() {
        let m = model(2, 2, 6, 8);
        let mut noise = NoiseSource::new(1);
        let d = eval(&m, |g, b| mim_dec_branch(g, b, 12, &mut noise));
        let w: Vec<f64> = d.parts.iter().map(|p| p.weight).collect();
        assert_eq!(w, vec![-0.5, -1.0, -0.5]);
        assert!((d.recombined() - d.value).abs() < 1e-12);
    }

    #[test]
    fn step_is_sum_of_branches_and_reproducible() {
        let m = model(2, 2, 6, 3);
        let x = data(16, 2, 7);
        let s1 = eval(&m, |g, b| mim_step_loss(g, b, &x, &mut NoiseSource::new(5)));
        let s2 = eval(&m, |g, b| mim_step_loss(g, b, &x, &mut NoiseSource::new(5)));
        assert_eq!(s1.value.to_bits(), s2.value.to_bits());
        let mut noise = NoiseSource::new(5);
        let (e, d) = {
            let mut g = Graph::new();
            let b = m.bind(&mut g);
            let e = mim_enc_branch(&mut g, &b, &x, &mut noise).unwrap();
            let d = mim_dec_branch(&mut g, &b, 16, &mut noise).unwrap();
            (e.value, d.value)
        };
        assert!((s1.value - (e + d)).abs() < 1e-12);
    }

    #[test]
    fn duplicating_batch_leaves_loss_unchanged() {
        let m = model(2, 2, 5, 11);
        let x = data(8, 2, 1);
        let x2 = Tensor::matrix(16, 2, [x.data(), x.data()].concat()).unwrap();
        let eps = data(8, 2, 2);
        let eps2 = Tensor::matrix(16, 2, [eps.data(), eps.data()].concat()).unwrap();
        let zp = data(8, 2, 3);
        let zp2 = Tensor::matrix(16, 2, [zp.data(), zp.data()].concat()).unwrap();
        let ex = data(8, 2, 4);
        let ex2 = Tensor::matrix(16, 2, [ex.data(), ex.data()].concat()).unwrap();

        type LossFn = fn(&mut Graph, &Bound, &Tensor, &mut NoiseSource) -> Result<LossValue>;
        let losses: [(LossFn, bool); 3] = [(elbo_batch, false), (mim_step_loss, true), (amim_step_loss, false)];
        for (f, dec) in losses {
            let single = if dec { vec![eps.clone(), zp.clone(), ex.clone()] } else { vec![eps.clone()] };
            let double = if dec { vec![eps2.clone(), zp2.clone(), ex2.clone()] } else { vec![eps2.clone()] };
            let a = eval(&m, |g, b| f(g, b, &x, &mut NoiseSource::scripted(single, 0)));
            let b = eval(&m, |g, b| f(g, b, &x2, &mut NoiseSource::scripted(double, 0)));
            assert!((a.value - b.value).abs() < 1e-12);
        }
    }

    fn objective_gradient_error(kind: ObjectiveKind, seed: u64) -> f64 {
        let m = model(2, 2, 4, seed);
        let x = data(6, 2, seed + 50);
        let values: Vec<Tensor> = m.params().iter().map(|p| p.value.clone()).collect();
        check_gradients(
            |g, vars| {
                let b = Bound::from_vars(&m, vars.to_vec());
                let mut noise = NoiseSource::new(seed);
                Ok(kind.loss(g, &b, &x, &mut noise)?.total)
            },
            &values,
            1e-5,
        )
        .unwrap()
    }

    #[test]
    fn objective_gradients_match_fd() {
        for kind in [ObjectiveKind::Vae, ObjectiveKind::Mim, ObjectiveKind::Amim] {
            let err = objective_gradient_error(kind, 3);
            assert!(err < 1e-4, "{kind}: {err}");
        }
    }

    #[test]
    fn elbo_gap_is_posterior_kl() {
        let (a, s, c, t) = (1.2, 0.6, 0.5, 0.8);
        let m = crate::testutil::linear_gaussian(a, s, c, t);
        let x0 = 0.7;
        let log_px = crate::testutil::quadrature_log_marginal(&m, x0);
        let v = a * a + s * s;
        let posterior = crate::distributions::DiagonalGaussian::new(vec![a * x0 / v], vec![0.5 * (s * s / v).ln()]).unwrap();
        let q = crate::distributions::DiagonalGaussian::new(vec![c * x0], vec![t.ln()]).unwrap();
        let kl = q.kl(&posterior).unwrap();

        let mut noise = NoiseSource::new(3);
        let x = Tensor::full(&[100, 1], x0);
        let elbos: Vec<f64> = (0..100)
            .map(|_| -eval(&m, |g, b| elbo_batch(g, b, &x, &mut noise)).value)
            .collect();
        let mean = elbos.iter().sum::<f64>() / 100.0;
        let se = (elbos.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 99.0 / 100.0).sqrt();
        assert!(mean < log_px + 3.0 * se);
        assert!(((log_px - mean) - kl).abs() < 3.0 * se, "gap {} vs kl {kl} (se {se})", log_px - mean);
    }
}
