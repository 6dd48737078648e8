//! Datasets: a MADELON-style synthetic generator, MNIST IDX ingestion,
//! standardization and seeded minibatching.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Role of a synthetic feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRole {
    Useful,
    Redundant,
    Noise,
}

impl FeatureRole {
    pub fn name(self) -> &'static str {
        match self {
            FeatureRole::Useful => "useful",
            FeatureRole::Redundant => "redundant",
            FeatureRole::Noise => "noise",
        }
    }
}

/// Per-feature centering and scaling fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    /// Population standard deviation; `0` marks a constant feature.
    pub std: Vec<f64>,
}

/// Inputs plus targets. Binary targets are a single column of `±1`;
/// multiclass targets are one-hot rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
    pub feature_roles: Option<Vec<FeatureRole>>,
    pub standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::dims(
                "dataset",
                format!("{} inputs vs {} targets", x.rows(), y.rows()),
            ));
        }
        Ok(Self {
            x,
            y,
            feature_roles: None,
            standardization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn n_outputs(&self) -> usize {
        self.y.cols()
    }

    pub fn is_binary(&self) -> bool {
        self.y.cols() == 1
    }

    /// Class index per row (`0 ↔ −1`, `1 ↔ +1` for binary targets).
    pub fn class_labels(&self) -> Vec<usize> {
        crate::metrics::class_indices(&self.y)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            y: self.y.select_rows(indices),
            feature_roles: self.feature_roles.clone(),
            standardization: self.standardization.clone(),
        }
    }

    /// First `k` rows (all rows if `k ≥ len`).
    pub fn head(&self, k: usize) -> Dataset {
        let idx: Vec<usize> = (0..k.min(self.len())).collect();
        self.subset(&idx)
    }
}

/// Parameters of the synthetic two-class problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MadelonConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub d_total: usize,
    pub d_useful: usize,
    pub d_redundant: usize,
    /// Distance between the two class means along the useful direction.
    #[serde(default = "default_class_sep")]
    pub class_sep: f64,
    #[serde(default = "default_label_flip")]
    pub label_flip: f64,
    pub seed: u64,
}

fn default_class_sep() -> f64 {
    2.0
}

fn default_label_flip() -> f64 {
    0.01
}

/// Class separation of the benchmark preset.
pub const BENCHMARK_CLASS_SEP: f64 = 2.5;

impl MadelonConfig {
    /// 1000 features, 100 useful, `d_redundant` redundant, 100 train / 10 000
    /// test, class separation [`BENCHMARK_CLASS_SEP`].
    pub fn benchmark(d_redundant: usize, seed: u64) -> Self {
        Self {
            n_train: 100,
            n_test: 10_000,
            d_total: 1000,
            d_useful: 100,
            d_redundant,
            class_sep: BENCHMARK_CLASS_SEP,
            label_flip: default_label_flip(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d_useful == 0 {
            return bad("d_useful must be ≥ 1".into());
        }
        if self.d_useful + self.d_redundant > self.d_total {
            return bad(format!(
                "d_useful + d_redundant = {} exceeds d_total = {}",
                self.d_useful + self.d_redundant,
                self.d_total
            ));
        }
        if self.n_train < 2 || self.n_test < 2 {
            return bad("need at least 2 samples per split".into());
        }
        if !(self.class_sep >= 0.0 && self.class_sep.is_finite()) {
            return bad(format!("class_sep must be finite and ≥ 0, got {}", self.class_sep));
        }
        if !(0.0..1.0).contains(&self.label_flip) {
            return bad(format!("label_flip must lie in [0, 1), got {}", self.label_flip));
        }
        Ok(())
    }

    pub fn feature_roles(&self) -> Vec<FeatureRole> {
        let mut roles = vec![FeatureRole::Useful; self.d_useful];
        roles.extend(std::iter::repeat_n(FeatureRole::Redundant, self.d_redundant));
        roles.extend(std::iter::repeat_n(
            FeatureRole::Noise,
            self.d_total - self.d_useful - self.d_redundant,
        ));
        roles
    }
}

/// Hidden generator state, exposed for oracles.
#[derive(Clone, Debug)]
pub struct MadelonTruth {
    /// Unit vector separating the class means in the useful block.
    pub direction: Vec<f64>,
    /// `d_useful × d_redundant` mixing matrix with unit-norm columns.
    pub mixing: Matrix,
}

/// Two Gaussian clusters at `±(class_sep/2)·u` with identity covariance in
/// the useful block, redundant features as fixed linear mixtures of the
/// useful block, standard-normal probes elsewhere. Features are ordered
/// useful, redundant, noise; rows are shuffled.
pub fn gen_madelon(config: &MadelonConfig, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
    gen_madelon_with_truth(config, rng).map(|(train, test, _)| (train, test))
}

pub fn gen_madelon_with_truth(
    config: &MadelonConfig,
    rng: &mut Rng,
) -> Result<(Dataset, Dataset, MadelonTruth)> {
    config.validate()?;
    let du = config.d_useful;
    let dr = config.d_redundant;

    let mut direction: Vec<f64> = (0..du).map(|_| rng.standard_normal()).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    direction.iter_mut().for_each(|v| *v /= norm);

    let mut mixing = Matrix::zeros(du, dr);
    for v in mixing.as_mut_slice() {
        *v = rng.uniform_range(-1.0, 1.0);
    }
    for j in 0..dr {
        let norm = (0..du).map(|i| mixing[(i, j)].powi(2)).sum::<f64>().sqrt();
        for i in 0..du {
            mixing[(i, j)] /= norm;
        }
    }

    let truth = MadelonTruth { direction, mixing };
    let train = madelon_split(config, config.n_train, &truth, rng)?;
    let test = madelon_split(config, config.n_test, &truth, rng)?;
    Ok((train, test, truth))
}

fn madelon_split(config: &MadelonConfig, n: usize, truth: &MadelonTruth, rng: &mut Rng) -> Result<Dataset> {
    let du = config.d_useful;
    let dr = config.d_redundant;
    let d = config.d_total;
    let half_sep = config.class_sep / 2.0;

    // Balanced classes: ⌈n/2⌉ positives.
    let mut labels: Vec<f64> = (0..n).map(|i| if i < n.div_ceil(2) { 1.0 } else { -1.0 }).collect();

    let mut useful = Matrix::zeros(n, du);
    for i in 0..n {
        for (j, v) in useful.row_mut(i).iter_mut().enumerate() {
            *v = labels[i] * half_sep * truth.direction[j] + rng.standard_normal();
        }
    }
    let redundant = useful.matmul(&truth.mixing)?;

    let mut x = Matrix::zeros(n, d);
    for i in 0..n {
        let row = x.row_mut(i);
        row[..du].copy_from_slice(useful.row(i));
        row[du..du + dr].copy_from_slice(redundant.row(i));
        for v in &mut row[du + dr..] {
            *v = rng.standard_normal();
        }
    }

    // Flip the same number of labels in each class so the split stays balanced.
    if config.label_flip > 0.0 {
        let positives: Vec<usize> = (0..n).filter(|&i| labels[i] > 0.0).collect();
        let negatives: Vec<usize> = (0..n).filter(|&i| labels[i] < 0.0).collect();
        let flips = positives.iter().filter(|_| rng.uniform() < config.label_flip).count();
        let flips = flips.min(negatives.len());
        for group in [positives, negatives] {
            let mut group = group;
            rng.shuffle(&mut group);
            for &i in group.iter().take(flips) {
                labels[i] = -labels[i];
            }
        }
    }

    let order = rng.permutation(n);
    let x = x.select_rows(&order);
    let y = Matrix::column_vector(&order.iter().map(|&i| labels[i]).collect::<Vec<_>>());
    let mut ds = Dataset::new(x, y)?;
    ds.feature_roles = Some(config.feature_roles());
    Ok(ds)
}

/// Centers and scales both splits with statistics fitted on `train`.
/// Constant training features map to zero in both splits.
pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset)> {
    if train.n_features() != test.n_features() {
        return Err(Error::dims(
            "standardize",
            format!("{} vs {} features", train.n_features(), test.n_features()),
        ));
    }
    let n = train.len().max(1) as f64;
    let mean = train.x.col_means();
    let mut var = vec![0.0; mean.len()];
    for row in train.x.row_iter() {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s < 1e-12 {
                0.0
            } else {
                s
            }
        })
        .collect();
    let stats = Standardization { mean, std };
    let apply = |ds: &Dataset| -> Dataset {
        let mut x = ds.x.clone();
        for i in 0..x.rows() {
            for ((v, m), s) in x.row_mut(i).iter_mut().zip(&stats.mean).zip(&stats.std) {
                *v = if *s == 0.0 { 0.0 } else { (*v - m) / s };
            }
        }
        Dataset {
            x,
            y: ds.y.clone(),
            feature_roles: ds.feature_roles.clone(),
            standardization: Some(stats.clone()),
        }
    };
    Ok((apply(train), apply(test)))
}

pub const MNIST_IMAGE_MAGIC: u32 = 2051;
pub const MNIST_LABEL_MAGIC: u32 = 2049;
pub const MNIST_CLASSES: usize = 10;

fn be_u32(bytes: &[u8], offset: usize) -> Option<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Loads an IDX image/label file pair: pixels scaled to `[0, 1]`, one-hot
/// labels over 10 classes.
pub fn load_mnist_idx(image_path: &Path, label_path: &Path) -> Result<Dataset> {
    let images = fs::read(image_path).map_err(|e| Error::io(image_path, e))?;
    let labels = fs::read(label_path).map_err(|e| Error::io(label_path, e))?;
    let idx_err = |path: &Path, reason: String| Error::Idx {
        path: path.to_path_buf(),
        reason,
    };

    let header = |bytes: &[u8], path: &Path, magic: u32, dims: usize| -> Result<Vec<usize>> {
        let found = be_u32(bytes, 0).ok_or_else(|| idx_err(path, "truncated header".into()))?;
        if found != magic {
            return Err(idx_err(path, format!("bad magic number {found}, expected {magic}")));
        }
        (0..dims)
            .map(|k| {
                be_u32(bytes, 4 + 4 * k)
                    .map(|v| v as usize)
                    .ok_or_else(|| idx_err(path, "truncated header".into()))
            })
            .collect()
    };

    let img_dims = header(&images, image_path, MNIST_IMAGE_MAGIC, 3)?;
    let (count, rows, cols) = (img_dims[0], img_dims[1], img_dims[2]);
    let pixels = rows * cols;
    let img_body = &images[16..];
    if img_body.len() != count * pixels {
        return Err(idx_err(
            image_path,
            format!("expected {} pixel bytes, found {}", count * pixels, img_body.len()),
        ));
    }

    let lbl_dims = header(&labels, label_path, MNIST_LABEL_MAGIC, 1)?;
    let lbl_body = &labels[8..];
    if lbl_body.len() != lbl_dims[0] {
        return Err(idx_err(
            label_path,
            format!("expected {} label bytes, found {}", lbl_dims[0], lbl_body.len()),
        ));
    }
    if lbl_dims[0] != count {
        return Err(idx_err(
            label_path,
            format!("{} labels for {count} images", lbl_dims[0]),
        ));
    }

    let x = Matrix::from_vec(
        count,
        pixels,
        img_body.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )?;
    let mut y = Matrix::zeros(count, MNIST_CLASSES);
    for (i, &label) in lbl_body.iter().enumerate() {
        let label = usize::from(label);
        if label >= MNIST_CLASSES {
            return Err(idx_err(label_path, format!("label {label} at index {i} out of range")));
        }
        y[(i, label)] = 1.0;
    }
    Dataset::new(x, y)
}

/// Standard MNIST file names inside `dir`, with or without `.idx`-style dots
/// (`train-images-idx3-ubyte` or `train-images.idx3-ubyte`).
pub fn mnist_paths(dir: &Path, train: bool) -> (PathBuf, PathBuf) {
    let prefix = if train { "train" } else { "t10k" };
    let pick = |a: String, b: String| {
        let pa = dir.join(&a);
        if pa.exists() {
            pa
        } else {
            let pb = dir.join(&b);
            if pb.exists() {
                pb
            } else {
                pa
            }
        }
    };
    (
        pick(format!("{prefix}-images-idx3-ubyte"), format!("{prefix}-images.idx3-ubyte")),
        pick(format!("{prefix}-labels-idx1-ubyte"), format!("{prefix}-labels.idx1-ubyte")),
    )
}

/// `(train, test)` from a directory holding the four standard MNIST files.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let (ti, tl) = mnist_paths(dir, true);
    let (vi, vl) = mnist_paths(dir, false);
    Ok((load_mnist_idx(&ti, &tl)?, load_mnist_idx(&vi, &vl)?))
}

/// One minibatch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Matrix,
    pub y: Matrix,
    pub indices: Vec<usize>,
}

/// Iterator over one shuffled epoch. A final batch with fewer than two rows
/// is dropped.
pub struct Batches<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let end = (self.pos + self.batch_size).min(self.order.len());
        if end - self.pos < 2 {
            return None;
        }
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(Batch {
            x: self.data.x.select_rows(&indices),
            y: self.data.y.select_rows(&indices),
            indices,
        })
    }
}

pub fn batches<'a>(data: &'a Dataset, batch_size: usize, rng: &mut Rng) -> Result<Batches<'a>> {
    if batch_size < 2 || batch_size > data.len() {
        return Err(Error::Contract(format!(
            "batch size must lie in [2, {}], got {batch_size}",
            data.len()
        )));
    }
    Ok(Batches {
        data,
        order: rng.permutation(data.len()),
        batch_size,
        pos: 0,
    })
}

/// Writes `f0,…,f{d−1},label`. Binary labels are `±1`, multiclass labels the class index.
pub fn write_csv<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..data.n_features()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    let classes = data.class_labels();
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.x.row(i).iter().map(|v| format!("{v}")).collect();
        rec.push(if data.is_binary() {
            format!("{}", data.y[(i, 0)])
        } else {
            classes[i].to_string()
        });
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(data, std::io::BufWriter::new(file))
}

/// Reads the format written by [`write_csv`]. Labels that are all `±1` give a
/// binary dataset; otherwise labels are class indices and become one-hot.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for row in reader.records() {
        let row = row?;
        let parsed: Vec<f64> = row
            .iter()
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let (label, feats) = parsed.split_last().ok_or_else(|| {
            Error::InvalidConfig(format!("{}: empty row", path.display()))
        })?;
        if *width.get_or_insert(feats.len()) != feats.len() {
            return Err(Error::InvalidConfig(format!("{}: ragged rows", path.display())));
        }
        features.extend_from_slice(feats);
        labels.push(*label);
    }
    let n = labels.len();
    let x = Matrix::from_vec(n, width.unwrap_or(0), features)?;
    let binary = labels.iter().all(|&l| l == 1.0 || l == -1.0);
    let y = if binary {
        Matrix::column_vector(&labels)
    } else {
        if labels.iter().any(|&l| l < 0.0 || l.fract() != 0.0) {
            return Err(Error::InvalidConfig(format!(
                "{}: labels must be ±1 or non-negative class indices",
                path.display()
            )));
        }
        let classes = labels.iter().fold(0.0f64, |m, &l| m.max(l)) as usize + 1;
        let mut y = Matrix::zeros(n, classes);
        for (i, &l) in labels.iter().enumerate() {
            y[(i, l as usize)] = 1.0;
        }
        y
    };
    Dataset::new(x, y)
}
