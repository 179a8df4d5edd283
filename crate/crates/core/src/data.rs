//! Datasets: LIBSVM text I/O, min/max feature scaling, seeded train/test splits
//! and the JSON dataset manifest.
//!
//! Sparse input is densified on load. Labels are stored as class indices in
//! `0..class_count`; the raw label of each class is kept in `raw_labels` so a
//! dataset can be written back out. Binary files labelled `+1`/`-1` always map
//! `+1 -> 0` and `-1 -> 1`, whatever order the labels first appear in; any
//! other labelling maps raw labels to classes in order of first appearance.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{source_name}line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("empty file")]
    Empty,
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("dimension mismatch: expected {expected} features, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("split needs {needed} samples but the dataset has {available}")]
    SplitTooLarge { needed: usize, available: usize },
    #[error("repetition index {index} out of range for {repetitions} repetitions")]
    RepetitionOutOfRange { index: usize, repetitions: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    class_count: usize,
    raw_labels: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset whose raw labels are the class indices themselves.
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let raw_labels = (0..class_count).map(|c| c as f64).collect();
        Dataset::with_raw_labels(features, labels, raw_labels)
    }

    /// Builds a dataset with an explicit raw label per class.
    pub fn with_raw_labels(features: Matrix, labels: Vec<usize>, raw_labels: Vec<f64>) -> Result<Self> {
        let class_count = raw_labels.len();
        if class_count < 2 {
            return Err(DataError::Invalid(format!(
                "need at least 2 classes, got {class_count}"
            )));
        }
        if features.rows() == 0 || features.cols() == 0 {
            return Err(DataError::Invalid(format!(
                "need at least one sample and one feature, got {}x{}",
                features.rows(),
                features.cols()
            )));
        }
        if labels.len() != features.rows() {
            return Err(DataError::Invalid(format!(
                "{} labels for {} samples",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(DataError::Invalid(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if !features.is_finite() {
            return Err(DataError::Invalid("features contain NaN or infinity".into()));
        }
        Ok(Dataset {
            features,
            labels,
            class_count,
            raw_labels,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Raw label of each class, indexed by class.
    pub fn raw_labels(&self) -> &[f64] {
        &self.raw_labels
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Signed binary targets: class 0 is `+1`, class 1 is `-1`.
    pub fn binary_targets(&self) -> Result<Vec<f64>> {
        if self.class_count != 2 {
            return Err(DataError::Invalid(format!(
                "binary targets need 2 classes, dataset has {}",
                self.class_count
            )));
        }
        Ok(self.labels.iter().map(|&l| class_to_sign(l)).collect())
    }

    /// Rows `indices`, keeping the class mapping of the parent dataset.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            raw_labels: self.raw_labels.clone(),
        }
    }

    /// Same samples with different labels (used to audit that test labels are never read).
    pub fn relabelled(&self, labels: Vec<usize>) -> Result<Dataset> {
        Dataset::with_raw_labels(self.features.clone(), labels, self.raw_labels.clone())
    }

    /// Zero-pads the feature matrix to `dim` columns.
    pub fn pad_to_dimension(self, dim: usize) -> Result<Dataset> {
        if dim < self.dim() {
            return Err(DataError::DimensionMismatch {
                expected: dim,
                actual: self.dim(),
            });
        }
        if dim == self.dim() {
            return Ok(self);
        }
        let old = &self.features;
        let features = Matrix::from_fn(old.rows(), dim, |i, j| if j < old.cols() { old.get(i, j) } else { 0.0 });
        Ok(Dataset { features, ..self })
    }
}

/// Class 0 ↔ `+1`, anything else ↔ `-1`.
#[inline]
pub fn class_to_sign(class: usize) -> f64 {
    if class == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Inverse of [`class_to_sign`]; `0.0` counts as `+1`.
#[inline]
pub fn sign_to_class(value: f64) -> usize {
    if value >= 0.0 {
        0
    } else {
        1
    }
}

struct RawRow {
    label: f64,
    entries: Vec<(usize, f64)>,
}

fn parse_rows(text: &str, source_name: &str, rows: &mut Vec<RawRow>) -> Result<()> {
    let err = |line: usize, message: String| DataError::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let content = match line.find('#') {
            Some(pos) => &line[..pos],
            None => line,
        };
        let mut tokens = content.split_whitespace();
        let Some(first) = tokens.next() else {
            continue;
        };
        if first.contains(':') {
            return Err(err(lineno, format!("missing label before '{first}'")));
        }
        let label: f64 = first
            .parse()
            .map_err(|_| err(lineno, format!("malformed label '{first}'")))?;
        if !label.is_finite() {
            return Err(err(lineno, format!("non-finite label '{first}'")));
        }
        let mut entries = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(lineno, format!("malformed token '{tok}'")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(lineno, format!("malformed index in '{tok}'")))?;
            if idx < 1 {
                return Err(err(lineno, format!("index must be >= 1 in '{tok}'")));
            }
            if idx <= last {
                return Err(err(
                    lineno,
                    format!("non-increasing index {idx} after {last}"),
                ));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| err(lineno, format!("malformed value in '{tok}'")))?;
            if !val.is_finite() {
                return Err(err(lineno, format!("non-finite value in '{tok}'")));
            }
            last = idx;
            entries.push((idx, val));
        }
        rows.push(RawRow { label, entries });
    }
    Ok(())
}

fn build_dataset(rows: Vec<RawRow>) -> Result<Dataset> {
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    let dim = rows
        .iter()
        .filter_map(|r| r.entries.last().map(|&(i, _)| i))
        .max()
        .unwrap_or(0);
    if dim == 0 {
        return Err(DataError::Invalid("no features in any line".into()));
    }

    let mut seen: Vec<f64> = Vec::new();
    for r in &rows {
        if !seen.contains(&r.label) {
            seen.push(r.label);
        }
    }
    let raw_labels = if seen.iter().all(|&l| l == 1.0 || l == -1.0) {
        vec![1.0, -1.0]
    } else {
        seen
    };

    let mut features = Matrix::zeros(rows.len(), dim);
    let mut labels = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let row = features.row_mut(i);
        for &(idx, val) in &r.entries {
            row[idx - 1] = val;
        }
        labels.push(raw_labels.iter().position(|&l| l == r.label).unwrap());
    }
    Dataset::with_raw_labels(features, labels, raw_labels)
}

/// Parses LIBSVM text into a dense dataset.
pub fn parse_libsvm(text: &str) -> Result<Dataset> {
    let mut rows = Vec::new();
    parse_rows(text, "", &mut rows)?;
    build_dataset(rows)
}

/// Reads and concatenates one or more LIBSVM files into a single dataset.
pub fn load_libsvm_files<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let mut rows = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let text = std::fs::read_to_string(p).map_err(|source| DataError::Io {
            path: p.to_path_buf(),
            source,
        })?;
        parse_rows(&text, &format!("{}: ", p.display()), &mut rows)?;
    }
    build_dataset(rows)
}

/// Writes canonical LIBSVM lines: nonzero entries in index order, plus the last
/// feature on every line so the dimension survives a round trip.
pub fn to_libsvm(data: &Dataset) -> String {
    let mut out = String::new();
    let d = data.dim();
    for (row, &label) in data.features.row_iter().zip(&data.labels) {
        write!(out, "{}", data.raw_labels[label]).unwrap();
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 || j + 1 == d {
                write!(out, " {}:{}", j + 1, v).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Per-feature min/max over the given (training) rows.
pub fn fit_scaling(train: &Dataset) -> ScalingParams {
    let d = train.dim();
    let mut min = vec![f64::INFINITY; d];
    let mut max = vec![f64::NEG_INFINITY; d];
    for row in train.features.row_iter() {
        for j in 0..d {
            min[j] = min[j].min(row[j]);
            max[j] = max[j].max(row[j]);
        }
    }
    ScalingParams { min, max }
}

/// Maps training min to -1 and training max to +1 per feature; constant features go to 0.
pub fn apply_scaling(params: &ScalingParams, data: &Dataset) -> Result<Dataset> {
    if params.min.len() != data.dim() {
        return Err(DataError::DimensionMismatch {
            expected: params.min.len(),
            actual: data.dim(),
        });
    }
    let f = &data.features;
    let features = Matrix::from_fn(f.rows(), f.cols(), |i, j| {
        scale_value(f.get(i, j), params.min[j], params.max[j])
    });
    Ok(Dataset {
        features,
        labels: data.labels.clone(),
        class_count: data.class_count,
        raw_labels: data.raw_labels.clone(),
    })
}

#[inline]
fn scale_value(x: f64, min: f64, max: f64) -> f64 {
    if max > min {
        2.0 * (x - min) / (max - min) - 1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_size: usize,
    pub test_size: usize,
    pub repetitions: usize,
    pub base_seed: u64,
}

/// Seeded random split. Repetition `r` shuffles with ChaCha8 seeded by
/// `base_seed + r`, then takes the first `train_size` rows for training and
/// the next `test_size` for testing.
pub fn make_split(data: &Dataset, plan: &SplitPlan, rep_index: usize) -> Result<(Dataset, Dataset)> {
    if rep_index >= plan.repetitions {
        return Err(DataError::RepetitionOutOfRange {
            index: rep_index,
            repetitions: plan.repetitions,
        });
    }
    let needed = plan.train_size + plan.test_size;
    if needed > data.len() {
        return Err(DataError::SplitTooLarge {
            needed,
            available: data.len(),
        });
    }
    let perm = split_permutation(data.len(), plan.base_seed.wrapping_add(rep_index as u64));
    let train = data.subset(&perm[..plan.train_size]);
    let test = data.subset(&perm[plan.train_size..needed]);
    Ok((train, test))
}

pub(crate) fn split_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    perm
}

/// One or several files making up a dataset; several files are concatenated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataPaths {
    One(PathBuf),
    Many(Vec<PathBuf>),
}

impl DataPaths {
    pub fn paths(&self) -> Vec<PathBuf> {
        match self {
            DataPaths::One(p) => vec![p.clone()],
            DataPaths::Many(ps) => ps.clone(),
        }
    }
}

fn default_repetitions() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    pub path: DataPaths,
    pub train_size: usize,
    pub test_size: usize,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Feature dimension to pad to, for files whose last columns are all zero.
    #[serde(default)]
    pub dimension: Option<usize>,
}

impl DatasetEntry {
    pub fn plan(&self, repetitions: Option<usize>, base_seed: u64) -> SplitPlan {
        SplitPlan {
            train_size: self.train_size,
            test_size: self.test_size,
            repetitions: repetitions.unwrap_or(self.repetitions),
            base_seed,
        }
    }

    /// Loads the files relative to `base_dir` (absolute paths are used as-is).
    pub fn load(&self, base_dir: &Path) -> Result<Dataset> {
        let paths: Vec<PathBuf> = self.path.paths().iter().map(|p| base_dir.join(p)).collect();
        let data = load_libsvm_files(&paths)?;
        match self.dimension {
            Some(d) => data.pad_to_dimension(d),
            None => Ok(data),
        }
    }

    /// True when every file of the entry exists under `base_dir`.
    pub fn is_available(&self, base_dir: &Path) -> bool {
        self.path.paths().iter().all(|p| base_dir.join(p).is_file())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub datasets: Vec<DatasetEntry>,
    /// Directory the entry paths are relative to; set by [`Manifest::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut manifest: Manifest = serde_json::from_str(&text).map_err(|source| DataError::Manifest {
            path: path.to_path_buf(),
            source,
        })?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn get(&self, name: &str) -> Option<&DatasetEntry> {
        self.datasets.iter().find(|d| d.name == name)
    }
}
