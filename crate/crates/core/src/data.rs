//! Datasets: the 2D Gaussian mixture and IDX image files.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::container::{Container, DATASET_MAGIC};
use crate::distributions::GaussianMixture;
use crate::error::{io_err, Error, Result};
use crate::tensor::Tensor;

pub const GMM_COMPONENTS: usize = 5;
pub const GMM_STD: f64 = 0.25;
pub const GMM_RADIUS: f64 = 1.5;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Rows of observations with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub x: Tensor,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Split {
        Split {
            x: self.x.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: String,
    pub seed: u64,
    /// `[train, val, test]`.
    pub sizes: [usize; 3],
    pub normalization: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplits {
    pub train: Split,
    pub val: Split,
    pub test: Split,
    pub meta: DatasetMeta,
}

/// The fixed five-component mixture on a ring.
pub fn gmm2d() -> GaussianMixture {
    let means = (0..GMM_COMPONENTS)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / GMM_COMPONENTS as f64;
            vec![GMM_RADIUS * a.cos(), GMM_RADIUS * a.sin()]
        })
        .collect();
    GaussianMixture::new(vec![1.0 / GMM_COMPONENTS as f64; GMM_COMPONENTS], means, GMM_STD).expect("valid mixture")
}

fn gmm_split(gmm: &GaussianMixture, n: usize, rng: &mut ChaCha8Rng) -> Split {
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, k) = gmm.sample(rng);
        data.extend(x);
        labels.push(k);
    }
    Split {
        x: Tensor::matrix(n, 2, data).expect("n × 2"),
        labels,
    }
}

/// Independent draws for each split; labels are component indices.
pub fn gmm2d_dataset(n_train: usize, n_val: usize, n_test: usize, seed: u64) -> Result<DatasetSplits> {
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::InvalidArgument("gmm2d split sizes must be >= 1".into()));
    }
    let gmm = gmm2d();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(DatasetSplits {
        train: gmm_split(&gmm, n_train, &mut rng),
        val: gmm_split(&gmm, n_val, &mut rng),
        test: gmm_split(&gmm, n_test, &mut rng),
        meta: DatasetMeta {
            source: "gmm2d".into(),
            seed,
            sizes: [n_train, n_val, n_test],
            normalization: "none".into(),
        },
    })
}

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::IdxTruncated {
            path: path.to_path_buf(),
            needed: at + 4,
            have: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = read_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::IdxMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], needed: usize, path: &Path) -> Result<()> {
    if bytes.len() < needed {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            needed,
            have: bytes.len(),
        });
    }
    Ok(())
}

/// Images as `N × (rows·cols)` scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Tensor> {
    check_magic(bytes, IDX_IMAGE_MAGIC, path)?;
    let n = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let d = rows * cols;
    check_len(bytes, 16 + n * d, path)?;
    let data = bytes[16..16 + n * d].iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::matrix(n, d, data)
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    check_magic(bytes, IDX_LABEL_MAGIC, path)?;
    let n = read_u32(bytes, 4, path)? as usize;
    check_len(bytes, 8 + n, path)?;
    Ok(bytes[8..8 + n].iter().map(|&b| b as usize).collect())
}

/// Reads a big-endian IDX image/label pair.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Split> {
    let read = |p: &Path| fs::read(p).map_err(io_err(format!("reading {}", p.display())));
    let x = parse_idx_images(&read(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read(labels_path)?, labels_path)?;
    if x.rows() != labels.len() {
        return Err(Error::IdxCountMismatch {
            images: x.rows(),
            labels: labels.len(),
        });
    }
    Ok(Split { x, labels })
}

/// Encodes images (values in `[0, 1]`) and labels as IDX bytes.
pub fn encode_idx(images: &Tensor, rows: usize, cols: usize, labels: &[usize]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + images.len());
    for v in [IDX_IMAGE_MAGIC, images.rows() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(images.data().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    let mut lab = Vec::with_capacity(8 + labels.len());
    for v in [IDX_LABEL_MAGIC, labels.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend(labels.iter().map(|&l| l as u8));
    (img, lab)
}

pub fn binarize(x: &Tensor) -> Tensor {
    x.map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
}

/// Train/val carved from the IDX training files by a seeded shuffle, test
/// from the leading rows of the t10k files.
///
/// `n_val` defaults to a tenth of the training file, capped at 5000; `None`
/// train and test sizes take everything left.
pub fn image_dataset(
    source: &str,
    dir: &Path,
    n_train: Option<usize>,
    n_val: Option<usize>,
    n_test: Option<usize>,
    binarized: bool,
    seed: u64,
) -> Result<DatasetSplits> {
    let full = load_idx(&dir.join(TRAIN_IMAGES), &dir.join(TRAIN_LABELS))?;
    let test_full = load_idx(&dir.join(TEST_IMAGES), &dir.join(TEST_LABELS))?;
    let n_val = n_val.unwrap_or((full.len() / 10).min(5000));
    let available = full.len().saturating_sub(n_val);
    let n_train = n_train.unwrap_or(available);
    if n_val == 0 || n_train == 0 || n_train > available {
        return Err(Error::InvalidArgument(format!(
            "{}: {} training images cannot supply {n_train} train + {n_val} val",
            dir.display(),
            full.len()
        )));
    }
    let n_test = n_test.unwrap_or(test_full.len());
    if n_test == 0 || n_test > test_full.len() {
        return Err(Error::InvalidArgument(format!(
            "{}: {} test images cannot supply {n_test}",
            dir.display(),
            test_full.len()
        )));
    }
    let mut idx: Vec<usize> = (0..full.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = full.subset(&idx[..n_train]);
    let mut val = full.subset(&idx[n_train..n_train + n_val]);
    let mut test = test_full.subset(&(0..n_test).collect::<Vec<_>>());
    if binarized {
        for s in [&mut train, &mut val, &mut test] {
            s.x = binarize(&s.x);
        }
    }
    Ok(DatasetSplits {
        train,
        val,
        test,
        meta: DatasetMeta {
            source: source.into(),
            seed,
            sizes: [n_train, n_val, n_test],
            normalization: if binarized { "scale_1_255_binarize_0.5" } else { "scale_1_255" }.into(),
        },
    })
}

fn labels_tensor(labels: &[usize]) -> Tensor {
    Tensor::new(vec![labels.len()], labels.iter().map(|&l| l as f64).collect()).expect("1-d")
}

impl DatasetSplits {
    pub fn to_container(&self) -> Container {
        let mut arrays = Vec::new();
        for (name, s) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            arrays.push((format!("{name}.x"), s.x.clone()));
            arrays.push((format!("{name}.labels"), labels_tensor(&s.labels)));
        }
        Container {
            metadata: json!({ "format_version": 1, "meta": self.meta }),
            arrays,
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_value(c.metadata.get("meta").cloned().unwrap_or_default())?;
        let split = |name: &str| -> Result<Split> {
            let get = |suffix: &str| {
                c.array(&format!("{name}.{suffix}"))
                    .ok_or_else(|| Error::Container(format!("missing array {name}.{suffix}")))
            };
            let x = get("x")?.clone();
            let labels: Vec<usize> = get("labels")?.data().iter().map(|&v| v as usize).collect();
            if labels.len() != x.rows() {
                return Err(Error::Container(format!("{name}: label count differs from rows")));
            }
            Ok(Split { x, labels })
        };
        Ok(Self {
            train: split("train")?,
            val: split("val")?,
            test: split("test")?,
            meta,
        })
    }

    pub fn save_cache(&self, path: &Path) -> Result<()> {
        self.to_container().write(path, DATASET_MAGIC)
    }

    pub fn load_cache(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path, DATASET_MAGIC)?)
    }
}

/// Returns the cached splits at `cache` if present, else builds and caches them.
pub fn cached<F: FnOnce() -> Result<DatasetSplits>>(cache: &Path, build: F) -> Result<DatasetSplits> {
    if cache.exists() {
        return DatasetSplits::load_cache(cache);
    }
    let d = build()?;
    d.save_cache(cache)?;
    Ok(d)
}
