//! Post-hoc evaluation of trained models: KSG mutual information, a k-NN
//! latent probe, reconstruction RMSE and importance-sampled test NLL.

pub mod kdtree;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::function::gamma::digamma;

use crate::autodiff::Graph;
use crate::distributions::{log_sum_exp, standard_normal_tensor};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::Tensor;

pub use kdtree::{KdTree, Metric};

/// Rows per forward pass in the batched estimators.
const EVAL_CHUNK_ROWS: usize = 4096;
const KSG_JITTER: f64 = 1e-10;

/// Row-aligned observations, latents and optional labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSamples {
    pub xs: Tensor,
    pub zs: Tensor,
    pub labels: Option<Vec<usize>>,
}

impl PairedSamples {
    pub fn new(xs: Tensor, zs: Tensor, labels: Option<Vec<usize>>) -> Result<Self> {
        let n = xs.rows();
        if zs.rows() != n || labels.as_ref().is_some_and(|l| l.len() != n) {
            return Err(Error::InvalidArgument(format!(
                "paired samples disagree on row count: xs {n}, zs {}, labels {:?}",
                zs.rows(),
                labels.as_ref().map(Vec::len)
            )));
        }
        Ok(Self { xs, zs, labels })
    }

    pub fn len(&self) -> usize {
        self.xs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Copy of `t` with seeded noise of relative scale `KSG_JITTER` per column.
fn jittered(t: &Tensor, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (n, d) = (t.rows(), t.cols());
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let mean = (0..n).map(|i| t.data()[i * d + j]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (t.data()[i * d + j] - mean).powi(2)).sum::<f64>() / n as f64;
            if var == 0.0 {
                log::warn!("KSG: column {j} has zero variance; estimate is dominated by ties");
                1.0
            } else {
                var.sqrt()
            }
        })
        .collect();
    t.data()
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let e: f64 = StandardNormal.sample(rng);
            v + KSG_JITTER * scale[k % d] * e
        })
        .collect()
}

/// KSG estimator (first variant) in nats, without clamping.
pub fn ksg_mi_raw(samples: &PairedSamples, k: usize, seed: u64) -> Result<f64> {
    let n = samples.len();
    if k == 0 || n <= k {
        return Err(Error::InvalidArgument(format!("KSG needs N > k >= 1, got N = {n}, k = {k}")));
    }
    let (dx, dz) = (samples.xs.cols(), samples.zs.cols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = jittered(&samples.xs, &mut rng);
    let zs = jittered(&samples.zs, &mut rng);
    let joint: Vec<f64> = (0..n)
        .flat_map(|i| xs[i * dx..(i + 1) * dx].iter().chain(&zs[i * dz..(i + 1) * dz]).copied())
        .collect();

    let joint_tree = KdTree::new(&joint, dx + dz, Metric::Chebyshev);
    let x_tree = KdTree::new(&xs, dx, Metric::Chebyshev);
    let z_tree = KdTree::new(&zs, dz, Metric::Chebyshev);
    let terms: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let eps = joint_tree.nearest(joint_tree.point(i), k, Some(i))[k - 1].0;
            // counts include the point itself
            let nx = x_tree.count_within(x_tree.point(i), eps) - 1;
            let nz = z_tree.count_within(z_tree.point(i), eps) - 1;
            digamma(nx as f64 + 1.0) + digamma(nz as f64 + 1.0)
        })
        .collect();
    let mean = terms.iter().sum::<f64>() / n as f64;
    Ok(digamma(k as f64) + digamma(n as f64) - mean)
}

/// KSG estimate clamped at zero, as reported.
pub fn ksg_mi(samples: &PairedSamples, k: usize, seed: u64) -> Result<f64> {
    Ok(ksg_mi_raw(samples, k, seed)?.max(0.0))
}

/// Majority vote among the `k` Euclidean nearest training rows.
///
/// Ties between labels go to the smaller summed neighbor distance, then the
/// lower label.
pub fn knn_predict(train: &Tensor, labels: &[usize], query: &Tensor, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > train.rows() {
        return Err(Error::InvalidArgument(format!("k = {k} with {} training rows", train.rows())));
    }
    if labels.len() != train.rows() || query.cols() != train.cols() {
        return Err(Error::InvalidArgument("k-NN inputs disagree on shape".into()));
    }
    let tree = KdTree::new(train.data(), train.cols(), Metric::Euclidean);
    Ok((0..query.rows())
        .into_par_iter()
        .map(|i| {
            let mut votes: Vec<(usize, usize, f64)> = Vec::new();
            for (d, j) in tree.nearest(query.row_slice(i), k, None) {
                let l = labels[j];
                match votes.iter_mut().find(|v| v.0 == l) {
                    Some(v) => {
                        v.1 += 1;
                        v.2 += d;
                    }
                    None => votes.push((l, 1, d)),
                }
            }
            votes
                .into_iter()
                .min_by(|a, b| b.1.cmp(&a.1).then(a.2.total_cmp(&b.2)).then(a.0.cmp(&b.0)))
                .expect("k >= 1")
                .0
        })
        .collect())
}

/// k-NN accuracy of `test` embeddings against `train` embeddings.
pub fn knn_classify(train: &PairedSamples, test: &PairedSamples, k: usize) -> Result<f64> {
    let (Some(train_labels), Some(test_labels)) = (&train.labels, &test.labels) else {
        return Err(Error::InvalidArgument("k-NN probe needs labels on both splits".into()));
    };
    if test.is_empty() {
        return Err(Error::InvalidArgument("k-NN probe needs a non-empty test split".into()));
    }
    if !test_labels.iter().any(|l| train_labels.contains(l)) {
        log::warn!("k-NN probe: train and test label sets are disjoint");
    }
    let pred = knn_predict(&train.zs, train_labels, &test.zs, k)?;
    let hits = pred.iter().zip(test_labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / test.len() as f64)
}

/// Encoder means as the latent embedding of `xs`.
pub fn embed(model: &ModelParams, xs: &Tensor) -> Result<Tensor> {
    let idx: Vec<usize> = (0..xs.rows()).collect();
    let mut data = Vec::with_capacity(xs.rows() * model.config.z_dim);
    for chunk in idx.chunks(EVAL_CHUNK_ROWS) {
        let (mean, _) = model.encode_batch(&xs.select_rows(chunk))?;
        data.extend_from_slice(mean.data());
    }
    Tensor::matrix(xs.rows(), model.config.z_dim, data)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmseReport {
    /// `z ~ q(z|x)`, `x̂ ~ p(x|z)`.
    pub sampled: f64,
    /// Encoder mean then decoder mean.
    pub deterministic: f64,
}

/// Reconstructions of `x`, sampled or from means.
pub fn reconstruct<R: Rng + ?Sized>(model: &ModelParams, x: &Tensor, sample: bool, rng: &mut R) -> Result<Tensor> {
    let (n, dz) = (x.rows(), model.config.z_dim);
    let mut g = Graph::new();
    let b = model.bind_frozen(&mut g);
    let xv = g.constant(x.clone());
    let q = b.encode(&mut g, xv)?;
    let z = if sample {
        let eps = standard_normal_tensor(rng, n, dz);
        q.sample(&mut g, &eps)?
    } else {
        q.mean
    };
    let dec = b.decode(&mut g, z)?;
    if sample {
        let eps = standard_normal_tensor(rng, n, model.config.x_dim);
        let xh = dec.sample(&mut g, &eps, rng)?;
        Ok(g.value(xh).clone())
    } else {
        Ok(dec.mean(&g))
    }
}

/// `√(mean_i ‖x_i − x̂_i‖²)` for sampled and mean reconstructions.
pub fn reconstruction_rmse<R: Rng + ?Sized>(model: &ModelParams, xs: &Tensor, rng: &mut R) -> Result<RmseReport> {
    if xs.rows() == 0 {
        return Err(Error::InvalidArgument("reconstruction RMSE of an empty set".into()));
    }
    let idx: Vec<usize> = (0..xs.rows()).collect();
    let (mut sampled, mut det) = (0.0, 0.0);
    for chunk in idx.chunks(EVAL_CHUNK_ROWS) {
        let x = xs.select_rows(chunk);
        let sq = |xh: &Tensor| x.data().iter().zip(xh.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        sampled += sq(&reconstruct(model, &x, true, rng)?);
        det += sq(&reconstruct(model, &x, false, rng)?);
    }
    let n = xs.rows() as f64;
    Ok(RmseReport {
        sampled: (sampled / n).sqrt(),
        deterministic: (det / n).sqrt(),
    })
}

/// Per-row `−log q̂(x)` with `n_is` encoder samples each.
pub fn nll_per_point<R: Rng + ?Sized>(model: &ModelParams, xs: &Tensor, n_is: usize, rng: &mut R) -> Result<Vec<f64>> {
    if n_is == 0 {
        return Err(Error::InvalidArgument("n_is must be >= 1".into()));
    }
    let per_chunk = (EVAL_CHUNK_ROWS / n_is).max(1);
    let idx: Vec<usize> = (0..xs.rows()).collect();
    let ln_n = (n_is as f64).ln();
    let mut out = Vec::with_capacity(xs.rows());
    for chunk in idx.chunks(per_chunk) {
        let rep: Vec<usize> = chunk.iter().flat_map(|&i| std::iter::repeat_n(i, n_is)).collect();
        let mut g = Graph::new();
        let b = model.bind_frozen(&mut g);
        let x = g.constant(xs.select_rows(&rep));
        let q = b.encode(&mut g, x)?;
        let z = q.sample(&mut g, &standard_normal_tensor(rng, rep.len(), model.config.z_dim))?;
        let lq = q.log_prob(&mut g, z)?;
        let est = b.log_qx_importance(&mut g, x, z, lq)?;
        for w in g.value(est).data().chunks(n_is) {
            out.push(ln_n - log_sum_exp(w));
        }
    }
    Ok(out)
}

/// Mean importance-sampled negative log-likelihood in nats.
pub fn test_nll<R: Rng + ?Sized>(model: &ModelParams, xs: &Tensor, n_is: usize, rng: &mut R) -> Result<f64> {
    if xs.rows() == 0 {
        return Err(Error::InvalidArgument("NLL of an empty set".into()));
    }
    let v = nll_per_point(model, xs, n_is, rng)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}
