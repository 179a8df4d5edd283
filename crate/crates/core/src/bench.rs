//! Repeated-split benchmark harness.
//!
//! An experiment runs every (dataset, method, repetition) cell independently:
//! split, scale on the training part, build the kernel bank, select kernels,
//! train, and score the test part. Cells run on a rayon pool whose size comes
//! from `NGMKL_WORKERS` (default: all cores). A failing cell is recorded with
//! its reason and does not stop the sweep.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{apply_scaling, class_to_sign, fit_scaling, make_split, DataError, Dataset, Manifest, ScalingParams};
use crate::kernels::{base_kernel_bank, gram, GramMatrix, KernelError, KernelSpec};
use crate::matrix::Matrix;
use crate::mkl::{mkl_predict, mkl_train, MklConfig, MklError, MklSolution};
use crate::ngmkl::{self, curve_csv, NgmklError, SelectedKernel, TrainConfig, TrainedModel};
use crate::selection::{
    select_all, select_l1, select_mkboost_d1, SelectionError, SelectionResult, DEFAULT_BOOST_ROUNDS,
    DEFAULT_L1_THRESHOLD,
};
use crate::svm::DEFAULT_C;

pub const WORKERS_ENV: &str = "NGMKL_WORKERS";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{method} supports binary problems only, dataset has {classes} classes")]
    BinaryOnly { method: Method, classes: usize },
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Mkl(#[from] MklError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Network(#[from] NgmklError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(alias = "mkl")]
    MklBaseline,
    Ngmkl1,
    Ngmkl2,
    Ngmkl3,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::MklBaseline, Method::Ngmkl1, Method::Ngmkl2, Method::Ngmkl3];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::MklBaseline => "MKL",
            Method::Ngmkl1 => "NGMKL1",
            Method::Ngmkl2 => "NGMKL2",
            Method::Ngmkl3 => "NGMKL3",
        })
    }
}

impl FromStr for Method {
    type Err = BenchError;

    /// Case-insensitive; `-` and `_` are ignored (`mkl`, `mkl_baseline`, `NGMKL3`, ...).
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| *c != '_' && *c != '-')
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "mkl" | "mklbaseline" => Ok(Method::MklBaseline),
            "ngmkl1" => Ok(Method::Ngmkl1),
            "ngmkl2" => Ok(Method::Ngmkl2),
            "ngmkl3" => Ok(Method::Ngmkl3),
            _ => Err(BenchError::UnknownMethod(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(BenchError::Config(format!("unknown format {s:?}"))),
        }
    }
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_c() -> f64 {
    DEFAULT_C
}

fn default_threshold() -> f64 {
    DEFAULT_L1_THRESHOLD
}

fn default_rounds() -> usize {
    DEFAULT_BOOST_ROUNDS
}

/// Experiment description, read from JSON.
///
/// ```json
/// {
///   "manifest": "datasets.json",
///   "datasets": ["sonar", "ionosphere"],
///   "methods": ["mkl_baseline", "ngmkl1", "ngmkl2", "ngmkl3"],
///   "train": { "epochs": 200, "hidden_widths": [64] },
///   "c_reg": 1.0,
///   "l1_threshold": 0.001,
///   "boost_rounds": 20,
///   "repetitions": 10,
///   "base_seed": 0,
///   "output": "results",
///   "format": "csv"
/// }
/// ```
///
/// Only `manifest` is required. An empty `datasets` list means every entry of
/// the manifest. Relative paths are resolved against the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    #[serde(default)]
    pub datasets: Vec<String>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_c")]
    pub c_reg: f64,
    #[serde(default = "default_threshold")]
    pub l1_threshold: f64,
    #[serde(default = "default_rounds")]
    pub boost_rounds: usize,
    /// Overrides the manifest's per-dataset repetition count.
    #[serde(default)]
    pub repetitions: Option<usize>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: ReportFormat,
}

impl ExperimentConfig {
    /// Defaults for everything except the manifest.
    pub fn new(manifest: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            manifest: manifest.into(),
            datasets: Vec::new(),
            methods: default_methods(),
            train: TrainConfig::default(),
            c_reg: DEFAULT_C,
            l1_threshold: DEFAULT_L1_THRESHOLD,
            boost_rounds: DEFAULT_BOOST_ROUNDS,
            repetitions: None,
            base_seed: 0,
            output: None,
            format: ReportFormat::Csv,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: ExperimentConfig = serde_json::from_str(&text).map_err(|source| BenchError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.manifest = base.join(&config.manifest);
        if let Some(out) = &config.output {
            config.output = Some(base.join(out));
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(BenchError::Config("at least one method is required".into()));
        }
        if !(self.c_reg > 0.0 && self.c_reg.is_finite()) {
            return Err(BenchError::Config("c_reg must be positive".into()));
        }
        if !(self.l1_threshold >= 0.0) {
            return Err(BenchError::Config("l1_threshold must be >= 0".into()));
        }
        if self.boost_rounds == 0 {
            return Err(BenchError::Config("boost_rounds must be positive".into()));
        }
        if self.repetitions == Some(0) {
            return Err(BenchError::Config("repetitions must be positive".into()));
        }
        if !self.manifest.is_file() {
            return Err(BenchError::Config(format!("manifest {} not found", self.manifest.display())));
        }
        Ok(())
    }

    fn mkl_config(&self) -> MklConfig {
        MklConfig {
            c_reg: self.c_reg,
            ..MklConfig::default()
        }
    }
}

/// Signed targets used by the SVM-based steps: class 0 is `+1`, every other
/// class `−1` (one-vs-rest on class 0 for multiclass selection).
pub fn selection_targets(data: &Dataset) -> Vec<f64> {
    data.labels().iter().map(|&l| class_to_sign(l)).collect()
}

/// A method fitted on one training split.
#[derive(Clone, Debug, PartialEq)]
pub enum FittedModel {
    Mkl {
        scaling: ScalingParams,
        anchors: Matrix,
        solution: MklSolution,
    },
    Network {
        scaling: ScalingParams,
        selection: SelectionResult,
        trained: TrainedModel,
    },
}

impl FittedModel {
    pub fn scaling(&self) -> &ScalingParams {
        match self {
            FittedModel::Mkl { scaling, .. } | FittedModel::Network { scaling, .. } => scaling,
        }
    }

    /// Predicted class per test row.
    pub fn predict(&self, test: &Dataset) -> Result<Vec<usize>> {
        let scaled = apply_scaling(self.scaling(), test)?;
        match self {
            FittedModel::Mkl { anchors, solution, .. } => {
                let rows = solution
                    .kernel_specs
                    .iter()
                    .map(|spec| gram(spec, scaled.features(), anchors))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                let signs = mkl_predict(solution, &rows)?;
                Ok(signs.iter().map(|&s| if s >= 0.0 { 0 } else { 1 }).collect())
            }
            FittedModel::Network { trained, .. } => Ok(ngmkl::predict(&trained.model, scaled.features())?),
        }
    }
}

/// Training self-Grams for every bank kernel.
fn bank_grams(bank: &[KernelSpec], x: &Matrix) -> Result<Vec<GramMatrix>> {
    Ok(bank
        .iter()
        .map(|spec| gram(spec, x, x))
        .collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Fits `method` on `train` only. `seed` drives the network initialisation and batch order.
pub fn fit_method(method: Method, train: &Dataset, config: &ExperimentConfig, seed: u64) -> Result<FittedModel> {
    if method == Method::MklBaseline && train.class_count() != 2 {
        return Err(BenchError::BinaryOnly {
            method,
            classes: train.class_count(),
        });
    }
    let scaling = fit_scaling(train);
    let scaled = apply_scaling(&scaling, train)?;
    let bank = base_kernel_bank();
    let grams = bank_grams(&bank, scaled.features())?;
    let targets = selection_targets(&scaled);

    let selection = match method {
        Method::MklBaseline => {
            let solution = mkl_train(&grams, &targets, &config.mkl_config())?;
            return Ok(FittedModel::Mkl {
                scaling,
                anchors: scaled.features().clone(),
                solution,
            });
        }
        Method::Ngmkl1 => select_all(bank.len())?,
        Method::Ngmkl2 => select_l1(&grams, &targets, &config.mkl_config(), config.l1_threshold)?,
        Method::Ngmkl3 => select_mkboost_d1(&grams, &targets, config.boost_rounds, config.c_reg)?,
    };

    let kernels: Vec<SelectedKernel> = selection
        .dedup_selected
        .iter()
        .map(|&i| SelectedKernel {
            bank_index: i,
            spec: bank[i],
        })
        .collect();
    let chosen: Vec<&Matrix> = selection.dedup_selected.iter().map(|&i| &grams[i].values).collect();
    let train_config = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let trained = ngmkl::train_with_grams(&scaled, &kernels, &chosen, &train_config)?;
    Ok(FittedModel::Network {
        scaling,
        selection,
        trained,
    })
}

/// Percentage of misclassified rows.
pub fn error_percent(predicted: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(predicted.len(), truth.len());
    if truth.is_empty() {
        return 0.0;
    }
    let wrong = predicted.iter().zip(truth).filter(|(p, t)| p != t).count();
    100.0 * wrong as f64 / truth.len() as f64
}

/// Result of one cell, with its side artifacts.
#[derive(Clone, Debug, PartialEq)]
pub struct CellOutcome {
    pub error_percent: f64,
    pub curve_csv: Option<String>,
    pub selection_csv: Option<String>,
}

/// Train on `train`, score on `test`; returns the test error in percent plus artifacts.
pub fn run_method(
    method: Method,
    train: &Dataset,
    test: &Dataset,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<CellOutcome> {
    run_method_detailed(method, train, test, config, seed).map(|(_, out)| out)
}

/// [`run_method`], also returning the fitted model.
pub fn run_method_detailed(
    method: Method,
    train: &Dataset,
    test: &Dataset,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(FittedModel, CellOutcome)> {
    let fitted = fit_method(method, train, config, seed)?;
    let predicted = fitted.predict(test)?;
    let (curve, selection) = match &fitted {
        FittedModel::Mkl { .. } => (None, None),
        FittedModel::Network { selection, trained, .. } => {
            (Some(curve_csv(&trained.curve)), Some(selection.diagnostics_csv()))
        }
    };
    let outcome = CellOutcome {
        error_percent: error_percent(&predicted, test.labels()),
        curve_csv: curve,
        selection_csv: selection,
    };
    Ok((fitted, outcome))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    /// `None` when the whole row failed before any split (e.g. missing files).
    pub repetition: Option<usize>,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub method: Method,
    /// `None` when no repetition succeeded.
    pub mean_error_percent: Option<f64>,
    pub std_error_percent: Option<f64>,
    /// Test error of every successful repetition, in repetition order.
    pub per_rep_errors: Vec<f64>,
    pub failures: Vec<CellFailure>,
    pub wall_time_secs: f64,
}

impl ReportRow {
    fn from_cells(dataset: &str, method: Method, cells: Vec<(usize, Result<f64>)>, wall_time_secs: f64) -> Self {
        let mut per_rep_errors = Vec::new();
        let mut failures = Vec::new();
        for (rep, cell) in cells {
            match cell {
                Ok(e) => per_rep_errors.push(e),
                Err(err) => failures.push(CellFailure {
                    repetition: Some(rep),
                    reason: err.to_string(),
                }),
            }
        }
        let (mean, std) = match mean_std(&per_rep_errors) {
            Some((m, s)) => (Some(m), Some(s)),
            None => (None, None),
        };
        ReportRow {
            dataset: dataset.to_string(),
            method,
            mean_error_percent: mean,
            std_error_percent: std,
            per_rep_errors,
            failures,
            wall_time_secs,
        }
    }

    fn failed(dataset: &str, method: Method, reason: String) -> Self {
        ReportRow {
            dataset: dataset.to_string(),
            method,
            mean_error_percent: None,
            std_error_percent: None,
            per_rep_errors: Vec::new(),
            failures: vec![CellFailure {
                repetition: None,
                reason,
            }],
            wall_time_secs: 0.0,
        }
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn row(&self, dataset: &str, method: Method) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.dataset == dataset && r.method == method)
    }

    /// True when there was at least one cell and none succeeded.
    pub fn all_failed(&self) -> bool {
        self.rows.iter().all(|r| r.per_rep_errors.is_empty())
    }
}

/// Artifacts of a run besides the report itself, keyed by relative file name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunArtifacts {
    pub files: Vec<(PathBuf, String)>,
}

fn artifact_stem(dataset: &str, method: Method, rep: usize) -> String {
    format!("{dataset}_{}_rep{rep}.csv", method.to_string().to_ascii_lowercase())
}

/// Builds a worker pool sized by `NGMKL_WORKERS`, or by the core count when unset.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| BenchError::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(BenchError::Config(format!("{WORKERS_ENV} must be positive")));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| BenchError::Config(format!("worker pool: {e}")))
}

/// Runs every cell and returns the report plus per-cell curves and selection diagnostics.
pub fn run_experiment_with_artifacts(config: &ExperimentConfig) -> Result<(ExperimentReport, RunArtifacts)> {
    config.validate()?;
    let manifest = Manifest::load(&config.manifest)?;
    let entries = if config.datasets.is_empty() {
        manifest.datasets.clone()
    } else {
        config
            .datasets
            .iter()
            .map(|name| {
                manifest
                    .get(name)
                    .cloned()
                    .ok_or_else(|| BenchError::UnknownDataset(name.clone()))
            })
            .collect::<Result<Vec<_>>>()?
    };

    let pool = worker_pool()?;
    let mut report = ExperimentReport::default();
    let mut artifacts = RunArtifacts::default();
    for entry in &entries {
        let data = match entry.load(&manifest.base_dir) {
            Ok(d) => d,
            Err(e) => {
                for &method in &config.methods {
                    report.rows.push(ReportRow::failed(&entry.name, method, e.to_string()));
                }
                continue;
            }
        };
        let plan = entry.plan(config.repetitions, config.base_seed);
        let cells: Vec<(Method, usize)> = config
            .methods
            .iter()
            .flat_map(|&m| (0..plan.repetitions).map(move |r| (m, r)))
            .collect();
        let outcomes: Vec<(Result<CellOutcome>, f64)> = pool.install(|| {
            cells
                .par_iter()
                .map(|&(method, rep)| {
                    let start = Instant::now();
                    let seed = config.train.seed.wrapping_add(plan.base_seed).wrapping_add(rep as u64);
                    let outcome = make_split(&data, &plan, rep)
                        .map_err(BenchError::from)
                        .and_then(|(train, test)| run_method(method, &train, &test, config, seed));
                    (outcome, start.elapsed().as_secs_f64())
                })
                .collect()
        });

        for &method in &config.methods {
            let mut row_cells = Vec::new();
            let mut wall = 0.0;
            for (&(m, rep), (outcome, secs)) in cells.iter().zip(&outcomes) {
                if m != method {
                    continue;
                }
                wall += secs;
                match outcome {
                    Ok(cell) => {
                        let stem = artifact_stem(&entry.name, method, rep);
                        if let Some(c) = &cell.curve_csv {
                            artifacts.files.push((Path::new("curves").join(&stem), c.clone()));
                        }
                        if let Some(s) = &cell.selection_csv {
                            artifacts.files.push((Path::new("selection").join(&stem), s.clone()));
                        }
                        row_cells.push((rep, Ok(cell.error_percent)));
                    }
                    Err(e) => row_cells.push((rep, Err(BenchError::Config(e.to_string())))),
                }
            }
            report.rows.push(ReportRow::from_cells(&entry.name, method, row_cells, wall));
        }
    }
    Ok((report, artifacts))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with_artifacts(config).map(|(r, _)| r)
}

/// Writes the rendered report plus `curves/` and `selection/` into `dir`.
pub fn write_outputs(dir: &Path, report: &ExperimentReport, artifacts: &RunArtifacts, format: ReportFormat) -> Result<PathBuf> {
    let io = |path: &Path, source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    };
    for sub in ["curves", "selection"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| io(&p, e))?;
    }
    for (rel, text) in &artifacts.files {
        let p = dir.join(rel);
        std::fs::write(&p, text).map_err(|e| io(&p, e))?;
    }
    let name = match format {
        ReportFormat::Csv => "report.csv",
        ReportFormat::Markdown => "report.md",
    };
    let p = dir.join(name);
    std::fs::write(&p, render_report(report, format)).map_err(|e| io(&p, e))?;
    Ok(p)
}

/// Rounds the shortest decimal representation of `x` to `places` digits,
/// ties to even: `0.005 → "0.00"`, `0.015 → "0.02"`, `2.5 → "2"` at 0 places.
pub fn format_half_even(x: f64, places: usize) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let repr = format!("{}", x.abs());
    let (int_part, frac_part) = repr.split_once('.').unwrap_or((&repr, ""));
    let mut digits: Vec<u8> = int_part.bytes().map(|b| b - b'0').collect();
    let int_len = digits.len();
    let frac: Vec<u8> = frac_part.bytes().map(|b| b - b'0').collect();
    digits.extend(frac.iter().take(places));
    digits.resize(int_len + places, 0);
    let rest = if frac.len() > places { &frac[places..] } else { &[][..] };

    let round_up = match rest.first() {
        None => false,
        Some(&d) if d > 5 => true,
        Some(&d) if d < 5 => false,
        Some(_) => {
            let exact_tie = rest[1..].iter().all(|&d| d == 0);
            !exact_tie || digits.last().is_some_and(|d| d % 2 == 1)
        }
    };
    let mut int_len = int_len;
    if round_up {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                int_len += 1;
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let mut out = String::new();
    let negative = x < 0.0 && digits.iter().any(|&d| d != 0);
    if negative {
        out.push('-');
    }
    out.extend(digits[..int_len].iter().map(|d| (b'0' + d) as char));
    if places > 0 {
        out.push('.');
        out.extend(digits[int_len..].iter().map(|d| (b'0' + d) as char));
    }
    out
}

/// `"mean±std"` to two decimals.
pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{}±{}", format_half_even(mean, 2), format_half_even(std, 2))
}

/// CSV: `dataset,method,mean_error,std_error,reps,failed`, one line per row,
/// full precision, no timings (so identical runs give identical bytes).
/// Markdown: one line per dataset, one column per method, `mean±std` cells.
pub fn render_report(report: &ExperimentReport, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str("dataset,method,mean_error,std_error,reps,failed\n");
            for row in &report.rows {
                let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    row.dataset,
                    row.method,
                    opt(row.mean_error_percent),
                    opt(row.std_error_percent),
                    row.per_rep_errors.len(),
                    row.failures.len()
                )
                .unwrap();
            }
        }
        ReportFormat::Markdown => {
            let mut methods: Vec<Method> = Vec::new();
            let mut datasets: Vec<&str> = Vec::new();
            for row in &report.rows {
                if !methods.contains(&row.method) {
                    methods.push(row.method);
                }
                if !datasets.contains(&row.dataset.as_str()) {
                    datasets.push(&row.dataset);
                }
            }
            out.push_str("| Dataset |");
            for m in &methods {
                write!(out, " {m} |").unwrap();
            }
            out.push_str("\n|---|");
            out.push_str(&"---|".repeat(methods.len()));
            out.push('\n');
            for d in datasets {
                write!(out, "| {d} |").unwrap();
                for &m in &methods {
                    let cell = match report.row(d, m) {
                        Some(ReportRow {
                            mean_error_percent: Some(mean),
                            std_error_percent: Some(std),
                            ..
                        }) => format_cell(*mean, *std),
                        _ => "n/a".to_string(),
                    };
                    write!(out, " {cell} |").unwrap();
                }
                out.push('\n');
            }
        }
    }
    out
}
