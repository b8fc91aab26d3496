//! Experiment orchestration: configs in, per-run directories and summary
//! tables out.
//!
//! Each run directory holds `metrics.csv`, `model.mimckpt`, `posterior.csv`,
//! `reconstructions.csv` and `run.json`. Every file is written atomically.

pub mod config;
pub mod metrics;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::container::write_atomic;
use crate::data::{self, DatasetSplits};
use crate::error::{Error, Result};
use crate::estimators::{self, PairedSamples};
use crate::model::{ModelConfig, ModelParams, ObjectiveKind};
use crate::noise::NoiseSource;
use crate::oracle::{CheckKind, DiscreteModel};
use crate::training::{self, evaluate_loss, StopReason, TrainConfig};

pub use config::{DataSection, DatasetKind, EvalSection, ExperimentConfig, OUTPUT_DIR_ENV};
pub use metrics::{MetricRecord, SummaryRow, METRICS_HEADER, SUMMARY_HEADER};

const EVAL_STREAM: u64 = 0x4556_414c;
const KSG_STREAM: u64 = 0x4b53_4721;
const TEST_LOSS_STREAM: u64 = 0x5445_5354;
const RECON_DUMP_ROWS: usize = 1000;
const IMAGE_RECON_DUMP_ROWS: usize = 100;

/// Everything that determines a run's results.
#[derive(Serialize)]
struct RunKey<'a> {
    dataset: DatasetKind,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    eval: &'a EvalSection,
    data: (Option<usize>, Option<usize>, Option<usize>, u64),
}

/// One fully resolved (configuration, seed) pair.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub dataset: DatasetKind,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub data: DataSection,
    pub output_dir: PathBuf,
}

impl RunSpec {
    pub fn from_config(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            dataset: cfg.dataset,
            model: cfg.model_config()?,
            train: cfg.train_config(seed),
            eval: cfg.eval.clone(),
            data: cfg.data.clone(),
            output_dir: cfg.output_dir.clone(),
        })
    }

    fn split_sizes(&self) -> (Option<usize>, Option<usize>, Option<usize>) {
        ExperimentConfig {
            dataset: self.dataset,
            objective: self.model.objective,
            model: Default::default(),
            train: Default::default(),
            eval: self.eval.clone(),
            data: self.data.clone(),
            seeds: None,
            output_dir: PathBuf::new(),
        }
        .split_sizes()
    }

    fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(0)
    }

    /// Hash of the result-determining settings, hex encoded.
    pub fn run_id(&self) -> String {
        let key = RunKey {
            dataset: self.dataset,
            model: &self.model,
            train: &self.train,
            eval: &self.eval,
            data: {
                let (a, b, c) = self.split_sizes();
                (a, b, c, self.data_seed())
            },
        };
        let bytes = serde_json::to_vec(&key).expect("serializable");
        let digest = hex::encode(Sha256::digest(&bytes));
        format!(
            "{}-{}-h{}-s{}-{}",
            self.dataset.name(),
            self.model.objective,
            self.model.hidden_units,
            self.train.seed,
            &digest[..10]
        )
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join("runs").join(self.run_id())
    }

    pub fn load_data(&self) -> Result<DatasetSplits> {
        let (n_train, n_val, n_test) = self.split_sizes();
        let seed = self.data_seed();
        if !self.dataset.is_image() {
            return data::gmm2d_dataset(
                n_train.expect("resolved"),
                n_val.expect("resolved"),
                n_test.expect("resolved"),
                seed,
            );
        }
        let dir = self
            .data
            .dir
            .clone()
            .ok_or_else(|| Error::Config("data.dir is required for image datasets".into()))?;
        let binarized = self.model.decoder_family == crate::model::DecoderFamily::Bernoulli;
        let key = format!("{}|{:?}|{n_train:?}|{n_val:?}|{n_test:?}|{binarized}|{seed}", self.dataset.name(), dir);
        let tag = &hex::encode(Sha256::digest(key.as_bytes()))[..12];
        let cache = self.output_dir.join("cache").join(format!("{}-{tag}.mimdata", self.dataset.name()));
        data::cached(&cache, || {
            data::image_dataset(self.dataset.name(), &dir, n_train, n_val, n_test, binarized, seed)
        })
    }
}

/// Test-split evaluation of a trained model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub loss_total: f64,
    pub loss_parts: Vec<(String, f64)>,
    /// Only for low-dimensional data.
    pub mi_ksg: Option<f64>,
    pub nll: f64,
    /// Sampled encoder and decoder.
    pub recon_rmse: f64,
    /// Means only.
    pub recon_rmse_mean: f64,
    pub knn_acc: f64,
}

/// Scores `model` on `data.test`, with train embeddings as the k-NN reference.
pub fn evaluate(
    model: &ModelParams,
    data: &DatasetSplits,
    eval: &EvalSection,
    objective: ObjectiveKind,
    batch_size: usize,
    seed: u64,
) -> Result<EvalMetrics> {
    let test = &data.test;
    let mut noise = NoiseSource::new(seed ^ TEST_LOSS_STREAM);
    let (loss_total, parts) = evaluate_loss(model, &objective, &test.x, batch_size, &mut noise)?;
    let z_test = estimators::embed(model, &test.x)?;
    let z_train = estimators::embed(model, &data.train.x)?;
    let mi_ksg = if model.config.x_dim <= 16 {
        let s = PairedSamples::new(test.x.clone(), z_test.clone(), None)?;
        Some(estimators::ksg_mi(&s, eval.ksg_k, seed ^ KSG_STREAM)?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_STREAM);
    let nll = estimators::test_nll(model, &test.x, eval.n_is, &mut rng)?;
    let rmse = estimators::reconstruction_rmse(model, &test.x, &mut rng)?;
    let train_s = PairedSamples::new(data.train.x.clone(), z_train, Some(data.train.labels.clone()))?;
    let test_s = PairedSamples::new(test.x.clone(), z_test, Some(test.labels.clone()))?;
    let knn_acc = estimators::knn_classify(&train_s, &test_s, eval.knn_k)?;
    Ok(EvalMetrics {
        loss_total,
        loss_parts: parts.into_iter().map(|p| (p.name.to_string(), p.value)).collect(),
        mi_ksg,
        nll,
        recon_rmse: rmse.sampled,
        recon_rmse_mean: rmse.deterministic,
        knn_acc,
    })
}

/// Outcome of one run as reported to callers.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub dir: PathBuf,
    pub dataset: DatasetKind,
    pub objective: ObjectiveKind,
    pub hidden_units: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs: usize,
    pub stop: String,
    /// False when training hit a non-finite loss or gradient.
    pub ok: bool,
    pub metrics: Option<EvalMetrics>,
}

fn stop_name(s: &StopReason) -> String {
    match s {
        StopReason::Patience => "patience".into(),
        StopReason::MaxEpochs => "max_epochs".into(),
        StopReason::NonFinite(m) => format!("non_finite: {m}"),
    }
}

fn write_posterior(path: &Path, model: &ModelParams, data: &DatasetSplits, include_x: bool) -> Result<()> {
    let test = &data.test;
    let (mean, log_std) = model.encode_batch(&test.x)?;
    let (dx, dz) = (test.x.cols(), mean.cols());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["index".to_string(), "label".to_string()];
    if include_x {
        header.extend((0..dx).map(|j| format!("x{j}")));
    }
    header.extend((0..dz).map(|j| format!("z_mean{j}")));
    header.extend((0..dz).map(|j| format!("z_std{j}")));
    w.write_record(&header)?;
    for i in 0..test.len() {
        let mut row = vec![i.to_string(), test.labels[i].to_string()];
        if include_x {
            row.extend(test.x.row_slice(i).iter().map(f64::to_string));
        }
        row.extend(mean.row_slice(i).iter().map(f64::to_string));
        row.extend(log_std.row_slice(i).iter().map(|v| v.exp().to_string()));
        w.write_record(&row)?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?)
}

fn write_reconstructions(path: &Path, model: &ModelParams, data: &DatasetSplits, rows: usize, seed: u64) -> Result<()> {
    let test = &data.test;
    let idx: Vec<usize> = (0..test.len().min(rows)).collect();
    let x = test.x.select_rows(&idx);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_STREAM ^ 1);
    let xh = estimators::reconstruct(model, &x, true, &mut rng)?;
    let d = x.cols();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["index".to_string(), "label".to_string()];
    header.extend((0..d).map(|j| format!("x{j}")));
    header.extend((0..d).map(|j| format!("x_hat{j}")));
    w.write_record(&header)?;
    for &i in &idx {
        let mut row = vec![i.to_string(), test.labels[i].to_string()];
        row.extend(x.row_slice(i).iter().map(f64::to_string));
        row.extend(xh.row_slice(i).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?)
}

/// Trains, evaluates and writes all artifacts for one spec.
pub fn execute(spec: &RunSpec, force: bool) -> Result<RunSummary> {
    let run_id = spec.run_id();
    let dir = spec.run_dir();
    let metrics_path = dir.join("metrics.csv");
    if metrics_path.exists() && !force {
        return Err(Error::OutputExists(dir));
    }
    log::info!("run {run_id}: start");
    let started = Instant::now();
    let data = spec.load_data()?;
    let objective = spec.model.objective;
    let outcome = training::train(&spec.model, &spec.train, &objective, &data.train.x, &data.val.x)?;
    let seed = spec.train.seed;

    let mut rows: Vec<MetricRecord> = outcome
        .history
        .iter()
        .map(|r| {
            let parts = r
                .val_parts
                .iter()
                .map(|p| (p.name, p.value))
                .chain(std::iter::once(("train_total", r.train_loss)));
            MetricRecord {
                run_id: run_id.clone(),
                seed,
                epoch: r.epoch,
                split: "val".into(),
                loss_total: r.val_loss,
                loss_parts: metrics::format_parts(parts),
                mi_ksg: None,
                nll: None,
                recon_rmse: None,
                knn_acc: None,
                wall_ms: r.wall_ms as u64,
            }
        })
        .collect();

    let ok = !matches!(outcome.stop, StopReason::NonFinite(_));
    let metrics = if outcome.best_epoch > 0 {
        let eval_start = Instant::now();
        let m = evaluate(&outcome.best, &data, &spec.eval, objective, spec.train.batch_size, seed)?;
        rows.push(MetricRecord {
            run_id: run_id.clone(),
            seed,
            epoch: outcome.best_epoch,
            split: "test".into(),
            loss_total: m.loss_total,
            loss_parts: metrics::format_parts(m.loss_parts.iter().map(|(n, v)| (n.as_str(), *v))),
            mi_ksg: m.mi_ksg,
            nll: Some(m.nll),
            recon_rmse: Some(m.recon_rmse),
            knn_acc: Some(m.knn_acc),
            wall_ms: eval_start.elapsed().as_millis() as u64,
        });
        Some(m)
    } else {
        None
    };

    outcome.best.save(&dir.join("model.mimckpt"), seed, outcome.best_epoch)?;
    write_posterior(&dir.join("posterior.csv"), &outcome.best, &data, !spec.dataset.is_image())?;
    let dump_rows = if spec.dataset.is_image() { IMAGE_RECON_DUMP_ROWS } else { RECON_DUMP_ROWS };
    write_reconstructions(&dir.join("reconstructions.csv"), &outcome.best, &data, dump_rows, seed)?;

    let summary = RunSummary {
        run_id: run_id.clone(),
        dir: dir.clone(),
        dataset: spec.dataset,
        objective,
        hidden_units: spec.model.hidden_units,
        seed,
        best_epoch: outcome.best_epoch,
        epochs: outcome.history.len(),
        stop: stop_name(&outcome.stop),
        ok,
        metrics,
    };
    let info = json!({
        "metrics_schema": metrics::METRICS_SCHEMA_VERSION,
        "summary": summary,
        "model": spec.model,
        "train": spec.train,
        "eval": spec.eval,
        "data": data.meta,
    });
    write_atomic(&dir.join("run.json"), &serde_json::to_vec_pretty(&info)?)?;
    // metrics.csv last: its presence marks a completed run
    metrics::write_csv(&metrics_path, &rows, &METRICS_HEADER)?;
    log::info!(
        "run {run_id}: {} epochs, stop {}, {:.1}s",
        summary.epochs,
        summary.stop,
        started.elapsed().as_secs_f64()
    );
    Ok(summary)
}

/// Runs every spec on a pool of `jobs` workers, preserving input order.
pub fn execute_all(specs: &[RunSpec], jobs: usize, force: bool) -> Result<Vec<Result<RunSummary>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(|| specs.par_iter().map(|s| execute(s, force)).collect()))
}

/// Every seed of one configuration.
pub fn run(cfg: &ExperimentConfig, jobs: usize, force: bool) -> Result<Vec<Result<RunSummary>>> {
    let specs = cfg
        .seeds()
        .into_iter()
        .map(|s| RunSpec::from_config(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    execute_all(&specs, jobs, force)
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub hidden: Vec<usize>,
    pub objectives: Vec<ObjectiveKind>,
    /// Seeds `0..seeds`.
    pub seeds: u64,
    pub jobs: usize,
    pub force: bool,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub runs: Vec<Result<RunSummary>>,
    pub summary: Vec<SummaryRow>,
    pub summary_path: PathBuf,
}

/// Cross product of hidden sizes, objectives and seeds; writes `summary.csv`
/// (one row per hidden size and objective) and `runs.csv`.
pub fn sweep(cfg: &ExperimentConfig, opts: &SweepOptions) -> Result<SweepOutcome> {
    if opts.hidden.is_empty() || opts.objectives.is_empty() || opts.seeds == 0 {
        return Err(Error::InvalidArgument("sweep needs hidden sizes, objectives and at least one seed".into()));
    }
    let mut specs = Vec::new();
    for &h in &opts.hidden {
        for &o in &opts.objectives {
            for seed in 0..opts.seeds {
                let mut c = cfg.clone();
                c.objective = o;
                c.model.hidden_units = Some(h);
                c.validate()?;
                specs.push(RunSpec::from_config(&c, seed)?);
            }
        }
    }
    let runs = execute_all(&specs, opts.jobs, opts.force)?;

    let mut cells: BTreeMap<(usize, usize), Vec<&RunSummary>> = BTreeMap::new();
    for r in runs.iter().flatten() {
        let oi = opts.objectives.iter().position(|o| *o == r.objective).expect("swept objective");
        let hi = opts.hidden.iter().position(|h| *h == r.hidden_units).expect("swept size");
        cells.entry((hi, oi)).or_default().push(r);
    }
    let summary: Vec<SummaryRow> = cells
        .values()
        .map(|rs| {
            let pick = |f: fn(&EvalMetrics) -> Option<f64>| {
                metrics::mean_std(rs.iter().map(|r| r.metrics.as_ref().and_then(f)))
            };
            let (mi_m, mi_s) = pick(|m| m.mi_ksg);
            let (nll_m, nll_s) = pick(|m| Some(m.nll));
            let (rm_m, rm_s) = pick(|m| Some(m.recon_rmse));
            let (kn_m, kn_s) = pick(|m| Some(m.knn_acc));
            SummaryRow {
                dataset: cfg.dataset.name().into(),
                objective: rs[0].objective.to_string(),
                hidden_units: rs[0].hidden_units,
                n_runs: rs.len(),
                mi_ksg_mean: mi_m,
                mi_ksg_std: mi_s,
                nll_mean: nll_m,
                nll_std: nll_s,
                recon_rmse_mean: rm_m,
                recon_rmse_std: rm_s,
                knn_acc_mean: kn_m,
                knn_acc_std: kn_s,
            }
        })
        .collect();
    let summary_path = cfg.output_dir.join("summary.csv");
    metrics::write_csv(&summary_path, &summary, &SUMMARY_HEADER)?;

    #[derive(Serialize)]
    struct RunRow<'a> {
        run_id: &'a str,
        objective: String,
        hidden_units: usize,
        seed: u64,
        best_epoch: usize,
        epochs: usize,
        stop: &'a str,
        mi_ksg: Option<f64>,
        nll: Option<f64>,
        recon_rmse: Option<f64>,
        knn_acc: Option<f64>,
    }
    let run_rows: Vec<RunRow> = runs
        .iter()
        .flatten()
        .map(|r| RunRow {
            run_id: &r.run_id,
            objective: r.objective.to_string(),
            hidden_units: r.hidden_units,
            seed: r.seed,
            best_epoch: r.best_epoch,
            epochs: r.epochs,
            stop: &r.stop,
            mi_ksg: r.metrics.as_ref().and_then(|m| m.mi_ksg),
            nll: r.metrics.as_ref().map(|m| m.nll),
            recon_rmse: r.metrics.as_ref().map(|m| m.recon_rmse),
            knn_acc: r.metrics.as_ref().map(|m| m.knn_acc),
        })
        .collect();
    let runs_header = [
        "run_id",
        "objective",
        "hidden_units",
        "seed",
        "best_epoch",
        "epochs",
        "stop",
        "mi_ksg",
        "nll",
        "recon_rmse",
        "knn_acc",
    ];
    metrics::write_csv(&cfg.output_dir.join("runs.csv"), &run_rows, &runs_header)?;
    Ok(SweepOutcome {
        runs,
        summary,
        summary_path,
    })
}

/// Worst residual of one named check across all trials.
#[derive(Clone, Debug, Serialize)]
pub struct CheckSummary {
    pub name: &'static str,
    pub kind: CheckKind,
    /// Largest `|lhs − rhs|` for equalities, smallest slack for inequalities.
    pub worst: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleSummary {
    pub trials: usize,
    pub seed: u64,
    pub checks: Vec<CheckSummary>,
    /// `(JSD, SKL, R_MIM)` of a hand-built consistent model.
    pub consistent: (f64, f64, f64),
    pub elapsed_ms: u128,
}

impl OracleSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed) && self.consistent == (0.0, 0.0, 0.0)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "oracle verify: {} random models (seed {})", self.trials, self.seed);
        for c in &self.checks {
            let what = match c.kind {
                CheckKind::Equality => "max residual",
                CheckKind::Inequality => "min slack",
            };
            let verdict = if c.passed { "ok" } else { "FAIL" };
            let _ = writeln!(s, "  {verdict:4} {:58} {what} {:.3e}", c.name, c.worst);
        }
        let (jsd, skl, r) = self.consistent;
        let _ = writeln!(s, "  consistent model: JSD = {jsd}, SKL = {skl}, R_MIM = {r}");
        let _ = writeln!(
            s,
            "{} in {} ms",
            if self.passed() { "PASS" } else { "FAIL" },
            self.elapsed_ms
        );
        s
    }
}

/// Consistent 3×2 model: both anchored joints and both model joints coincide.
fn consistent_model() -> DiscreteModel {
    let joint = [[0.2, 0.1], [0.05, 0.25], [0.3, 0.1]];
    let px: Vec<f64> = joint.iter().map(|r| r[0] + r[1]).collect();
    let pz: Vec<f64> = (0..2).map(|z| joint.iter().map(|r| r[z]).sum()).collect();
    DiscreteModel {
        enc_cond: (0..2).map(|z| (0..3).map(|x| joint[x][z] / px[x]).collect()).collect(),
        dec_cond: (0..3).map(|x| (0..2).map(|z| joint[x][z] / pz[z]).collect()).collect(),
        model_prior_x: px.clone(),
        model_prior_z: pz.clone(),
        anchor_x: px,
        anchor_z: pz,
    }
}

/// Verifies every identity on `trials` Dirichlet-random models with
/// `|X|, |Z| ∈ [1, 6]`.
pub fn oracle_verify(trials: usize, seed: u64) -> Result<OracleSummary> {
    use rand::Rng;
    if trials == 0 {
        return Err(Error::InvalidArgument("--trials must be >= 1".into()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks: Vec<CheckSummary> = Vec::new();
    for _ in 0..trials {
        let nx = rng.random_range(1..=6);
        let nz = rng.random_range(1..=6);
        let rep = DiscreteModel::random(&mut rng, nx, nz).verify_identities()?;
        if checks.is_empty() {
            checks = rep
                .checks
                .iter()
                .map(|c| CheckSummary {
                    name: c.name,
                    kind: c.kind,
                    worst: c.residual,
                    passed: true,
                })
                .collect();
        }
        for (acc, c) in checks.iter_mut().zip(&rep.checks) {
            acc.worst = match c.kind {
                CheckKind::Equality => acc.worst.max(c.residual),
                CheckKind::Inequality => acc.worst.min(c.residual),
            };
            acc.passed &= c.passed();
        }
    }
    let r = consistent_model().divergence_suite()?;
    Ok(OracleSummary {
        trials,
        seed,
        checks,
        consistent: (r.jsd, r.skl, r.r_mim),
        elapsed_ms: start.elapsed().as_millis(),
    })
}

/// Loads a checkpoint and scores it on the test split described by `spec_cfg`.
pub fn eval_checkpoint(path: &Path, spec_cfg: &ExperimentConfig) -> Result<(EvalMetrics, u64, usize)> {
    let (model, seed, epoch) = ModelParams::load(path)?;
    let mut cfg = spec_cfg.clone();
    cfg.objective = model.config.objective;
    let spec = RunSpec {
        model: model.config.clone(),
        ..RunSpec::from_config(&cfg, seed)?
    };
    if spec.dataset.x_dim() != model.config.x_dim {
        return Err(Error::Dimension {
            expected: model.config.x_dim,
            got: spec.dataset.x_dim(),
        });
    }
    let data = spec.load_data()?;
    let m = evaluate(&model, &data, &spec.eval, model.config.objective, spec.train.batch_size, seed)?;
    Ok((m, seed, epoch))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke_config(dir: &Path) -> ExperimentConfig {
        let text = format!(
            r#"{{
                "dataset": "gmm2d", "objective": "mim",
                "model": {{"hidden_units": 20}},
                "train": {{"max_epochs": 2}},
                "data": {{"n_train": 300, "n_val": 100, "n_test": 100}},
                "seeds": [0],
                "output_dir": {:?}
            }}"#,
            dir
        );
        ExperimentConfig::from_json(&text).unwrap()
    }

    #[test]
    fn run_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = smoke_config(dir.path());
        let out = run(&cfg, 1, false).unwrap();
        let s = out[0].as_ref().unwrap();
        assert!(s.ok);
        let rows = metrics::read_metrics(&s.dir.join("metrics.csv")).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows.iter().filter(|r| r.split == "val").count(), 2);
        assert_eq!(rows[2].split, "test");
        assert!(rows[2].mi_ksg.is_some() && rows[2].knn_acc.is_some());
        for f in ["model.mimckpt", "posterior.csv", "reconstructions.csv", "run.json"] {
            assert!(s.dir.join(f).exists(), "{f}");
        }
        // refuses to overwrite without force
        assert!(matches!(run(&cfg, 1, false).unwrap()[0], Err(Error::OutputExists(_))));
        assert!(run(&cfg, 1, true).unwrap()[0].is_ok());
    }

    #[test]
    fn run_id_tracks_settings() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = smoke_config(dir.path());
        let a = RunSpec::from_config(&cfg, 0).unwrap();
        let b = RunSpec::from_config(&cfg, 1).unwrap();
        assert_ne!(a.run_id(), b.run_id());
        assert_eq!(a.run_id(), RunSpec::from_config(&cfg, 0).unwrap().run_id());
        let mut moved = cfg.clone();
        moved.output_dir = PathBuf::from("/elsewhere");
        assert_eq!(RunSpec::from_config(&moved, 0).unwrap().run_id(), a.run_id());
    }

    #[test]
    fn oracle_lists_every_identity() {
        let s = oracle_verify(1, 0).unwrap();
        let text = s.render();
        for tag in ["a1:", "a2:", "b:", "c:", "d:", "e:", "f:", "g:"] {
            assert!(text.contains(tag), "{tag} missing from\n{text}");
        }
        assert_eq!(s.consistent, (0.0, 0.0, 0.0));
        assert!(s.passed());
    }

    #[test]
    fn sweep_counts_cells() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = smoke_config(dir.path());
        cfg.train.max_epochs = Some(1);
        let opts = SweepOptions {
            hidden: vec![5, 20, 50],
            objectives: vec![ObjectiveKind::Vae, ObjectiveKind::Mim],
            seeds: 2,
            jobs: 2,
            force: false,
        };
        let out = sweep(&cfg, &opts).unwrap();
        assert_eq!(out.runs.len(), 12);
        assert!(out.runs.iter().all(Result::is_ok));
        assert_eq!(out.summary.len(), 6);
        assert!(out.summary.iter().all(|r| r.n_runs == 2));
        let back = metrics::read_summary(&out.summary_path).unwrap();
        assert_eq!(back, out.summary);
        let header = std::fs::read_to_string(&out.summary_path).unwrap();
        assert!(header.starts_with(&SUMMARY_HEADER.join(",")));
    }

    #[test]
    fn eval_reproduces_test_row() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = smoke_config(dir.path());
        let s = run(&cfg, 1, false).unwrap().remove(0).unwrap();
        let (m, seed, _) = eval_checkpoint(&s.dir.join("model.mimckpt"), &cfg).unwrap();
        assert_eq!(seed, 0);
        assert_eq!(Some(m), s.metrics);
    }
}
