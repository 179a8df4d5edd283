//! Input-kernel selection for the three network variants.
//!
//! - [`select_all`]: every kernel in the bank.
//! - [`select_l1`]: kernels whose L1-MKL weight exceeds a threshold, by decreasing weight.
//! - [`select_mkboost_d1`]: boosting over the bank; each round trains one
//!   sample-weighted SVM per kernel and keeps the kernel with the smallest
//!   weighted training error. Kernels may be picked more than once.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::GramMatrix;
use crate::mkl::{self, MklConfig, MklError};
use crate::svm::{self, SvmError, SvmModel, SvmProblem};

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("kernel bank is empty")]
    EmptyBank,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("boosting weights degenerated (sum {0})")]
    DegenerateWeights(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Mkl(#[from] MklError),
    #[error(transparent)]
    Svm(#[from] SvmError),
}

pub type Result<T> = std::result::Result<T, SelectionError>;

pub const DEFAULT_L1_THRESHOLD: f64 = 1e-3;
pub const DEFAULT_BOOST_ROUNDS: usize = 20;

const ERROR_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionVariant {
    All,
    L1Sparse,
    BoostD1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostRoundRecord {
    pub round: usize,
    pub chosen: usize,
    pub weighted_error: f64,
    pub learner_weight: f64,
    /// Weighted error of every kernel's weak learner this round.
    pub kernel_errors: Vec<f64>,
    /// Sum of the sample weights the round was trained on.
    pub weights_sum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SelectionDiagnostics {
    None,
    Beta(Vec<f64>),
    Rounds(Vec<BoostRoundRecord>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub variant: SelectionVariant,
    pub selected: Vec<usize>,
    pub dedup_selected: Vec<usize>,
    pub diagnostics: SelectionDiagnostics,
}

impl SelectionResult {
    fn new(variant: SelectionVariant, selected: Vec<usize>, diagnostics: SelectionDiagnostics) -> Self {
        let mut dedup_selected = Vec::with_capacity(selected.len());
        for &k in &selected {
            if !dedup_selected.contains(&k) {
                dedup_selected.push(k);
            }
        }
        SelectionResult {
            variant,
            selected,
            dedup_selected,
            diagnostics,
        }
    }

    /// `round,kernel,weighted_error,learner_weight` for boosting, or
    /// `kernel,beta` for L1 selection. Empty body otherwise.
    pub fn diagnostics_csv(&self) -> String {
        let mut out = String::new();
        match &self.diagnostics {
            SelectionDiagnostics::Rounds(rounds) => {
                out.push_str("round,kernel,weighted_error,learner_weight\n");
                for r in rounds {
                    writeln!(out, "{},{},{},{}", r.round, r.chosen, r.weighted_error, r.learner_weight).unwrap();
                }
            }
            SelectionDiagnostics::Beta(beta) => {
                out.push_str("kernel,beta\n");
                for (k, b) in beta.iter().enumerate() {
                    writeln!(out, "{k},{b}").unwrap();
                }
            }
            SelectionDiagnostics::None => out.push_str("kernel\n"),
        }
        out
    }
}

pub fn select_all(bank_size: usize) -> Result<SelectionResult> {
    if bank_size == 0 {
        return Err(SelectionError::EmptyBank);
    }
    Ok(SelectionResult::new(
        SelectionVariant::All,
        (0..bank_size).collect(),
        SelectionDiagnostics::None,
    ))
}

/// Kernels with `β_j > threshold`, ordered by decreasing β (ties by index).
/// Falls back to the single largest-β kernel when nothing passes.
pub fn select_from_beta(beta: &[f64], threshold: f64) -> Result<SelectionResult> {
    if beta.is_empty() {
        return Err(SelectionError::EmptyBank);
    }
    let mut order: Vec<usize> = (0..beta.len()).collect();
    order.sort_by(|&a, &b| beta[b].total_cmp(&beta[a]));
    let mut selected: Vec<usize> = order.iter().copied().filter(|&j| beta[j] > threshold).collect();
    if selected.is_empty() {
        selected.push(order[0]);
    }
    Ok(SelectionResult::new(
        SelectionVariant::L1Sparse,
        selected,
        SelectionDiagnostics::Beta(beta.to_vec()),
    ))
}

/// Runs L1-MKL on the training Grams and thresholds its kernel weights.
pub fn select_l1(grams: &[GramMatrix], labels: &[f64], config: &MklConfig, threshold: f64) -> Result<SelectionResult> {
    if !(threshold > 0.0) {
        return Err(SelectionError::InvalidParameter(format!(
            "threshold must be positive, got {threshold}"
        )));
    }
    if grams.is_empty() {
        return Err(SelectionError::EmptyBank);
    }
    let solution = mkl::mkl_train(grams, labels, config)?;
    select_from_beta(&solution.beta, threshold)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoostState {
    pub sample_weights: Vec<f64>,
    pub round: usize,
}

impl BoostState {
    pub fn uniform(n: usize) -> Self {
        BoostState {
            sample_weights: vec![1.0 / n as f64; n],
            round: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoostRound {
    pub chosen: usize,
    pub model: SvmModel,
    pub weighted_error: f64,
    pub learner_weight: f64,
    /// `±1` training predictions of the chosen weak learner.
    pub predictions: Vec<f64>,
    pub kernel_errors: Vec<f64>,
}

/// `½ ln((1−ε)/ε)` with ε clamped to `[1e-10, 0.5 − 1e-10]`.
pub fn learner_weight(weighted_error: f64) -> f64 {
    let e = weighted_error.clamp(ERROR_FLOOR, 0.5 - ERROR_FLOOR);
    0.5 * ((1.0 - e) / e).ln()
}

/// Trains one weighted SVM per kernel and keeps the lowest weighted error
/// (lowest index on ties).
pub fn boost_round(grams: &[GramMatrix], labels: &[f64], state: &BoostState, c_reg: f64) -> Result<BoostRound> {
    if grams.is_empty() {
        return Err(SelectionError::EmptyBank);
    }
    let n = labels.len();
    if state.sample_weights.len() != n {
        return Err(SelectionError::LengthMismatch {
            expected: n,
            actual: state.sample_weights.len(),
        });
    }
    let weights = &state.sample_weights;
    let learners: Vec<(SvmModel, Vec<f64>, f64)> = grams
        .par_iter()
        .map(|g| {
            let problem = SvmProblem::weighted(&g.values, labels, c_reg, weights)?;
            let model = svm::smo_train(&problem, svm::DEFAULT_TOL, svm::DEFAULT_MAX_PASSES)?;
            let predictions: Vec<f64> = (0..n)
                .map(|i| svm::decision_label(svm::decision_unchecked(&model, g.row(i))))
                .collect();
            let err: f64 = predictions
                .iter()
                .zip(labels)
                .zip(weights)
                .filter(|((p, y), _)| p != y)
                .fold(0.0, |acc, (_, w)| acc + w);
            Ok((model, predictions, err))
        })
        .collect::<Result<_>>()?;

    let kernel_errors: Vec<f64> = learners.iter().map(|l| l.2).collect();
    let mut chosen = 0;
    for (j, &e) in kernel_errors.iter().enumerate() {
        if e < kernel_errors[chosen] {
            chosen = j;
        }
    }
    let (model, predictions, weighted_error) = learners.into_iter().nth(chosen).unwrap();
    Ok(BoostRound {
        chosen,
        model,
        weighted_error,
        learner_weight: learner_weight(weighted_error),
        predictions,
        kernel_errors,
    })
}

/// AdaBoost reweighting `w_i ← w_i · exp(−a · y_i · h_i)`, renormalised.
pub fn boost_update(state: &BoostState, predictions: &[f64], labels: &[f64], learner_weight: f64) -> Result<BoostState> {
    let n = state.sample_weights.len();
    for len in [predictions.len(), labels.len()] {
        if len != n {
            return Err(SelectionError::LengthMismatch { expected: n, actual: len });
        }
    }
    let mut w: Vec<f64> = state
        .sample_weights
        .iter()
        .zip(predictions.iter().zip(labels))
        .map(|(&w, (&h, &y))| w * (-learner_weight * y * h).exp())
        .collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(SelectionError::DegenerateWeights(total));
    }
    w.iter_mut().for_each(|v| *v /= total);
    Ok(BoostState {
        sample_weights: w,
        round: state.round + 1,
    })
}

/// `rounds` boosting rounds from uniform weights; the chosen kernel of every
/// round is recorded, duplicates included.
pub fn select_mkboost_d1(grams: &[GramMatrix], labels: &[f64], rounds: usize, c_reg: f64) -> Result<SelectionResult> {
    if rounds == 0 {
        return Err(SelectionError::InvalidParameter("rounds must be >= 1".into()));
    }
    let mut state = BoostState::uniform(labels.len());
    let mut selected = Vec::with_capacity(rounds);
    let mut records = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let r = boost_round(grams, labels, &state, c_reg)?;
        records.push(BoostRoundRecord {
            round,
            chosen: r.chosen,
            weighted_error: r.weighted_error,
            learner_weight: r.learner_weight,
            kernel_errors: r.kernel_errors,
            weights_sum: state.sample_weights.iter().sum(),
        });
        selected.push(r.chosen);
        state = boost_update(&state, &r.predictions, labels, r.learner_weight)?;
    }
    Ok(SelectionResult::new(
        SelectionVariant::BoostD1,
        selected,
        SelectionDiagnostics::Rounds(records),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{gram, KernelSpec};
    use crate::matrix::Matrix;
    use crate::synthetic::signal_noise_bank;

    #[test]
    fn select_all_examples() {
        let r = select_all(17).unwrap();
        assert_eq!(r.selected, (0..17).collect::<Vec<_>>());
        assert_eq!(r.dedup_selected, r.selected);
        assert_eq!(select_all(1).unwrap().selected, vec![0]);
        assert_eq!(select_all(0).unwrap_err(), SelectionError::EmptyBank);
    }

    #[test]
    fn beta_thresholding() {
        let mut beta = vec![0.0; 17];
        beta[0] = 0.7;
        beta[1] = 0.3;
        assert_eq!(select_from_beta(&beta, 1e-3).unwrap().selected, vec![0, 1]);

        let mut one_hot = vec![0.0; 5];
        one_hot[3] = 1.0;
        assert_eq!(select_from_beta(&one_hot, 1e-3).unwrap().selected, vec![3]);

        // dense β with a tiny threshold keeps everything, largest first
        let dense = [0.1, 0.4, 0.2, 0.3];
        assert_eq!(select_from_beta(&dense, 1e-300).unwrap().selected, vec![1, 3, 2, 0]);

        // nothing above threshold: fall back to the largest
        assert_eq!(select_from_beta(&[0.3, 0.35, 0.35], 0.5).unwrap().selected, vec![1]);
    }

    #[test]
    fn l1_selection_finds_signal_kernel() {
        let (grams, y) = signal_noise_bank(60, 3);
        let r = select_l1(&grams, &y, &MklConfig::default(), DEFAULT_L1_THRESHOLD).unwrap();
        assert!(r.selected.contains(&0));
        assert!(!r.selected.contains(&1), "{:?}", r.diagnostics);
        assert!(select_l1(&grams, &y, &MklConfig::default(), 0.0).is_err());
    }

    #[test]
    fn boost_round_single_kernel() {
        let (grams, y) = signal_noise_bank(20, 4);
        let r = boost_round(&grams[1..], &y, &BoostState::uniform(20), 1.0).unwrap();
        assert_eq!(r.chosen, 0);
    }

    #[test]
    fn boost_round_prefers_separating_kernel() {
        let (grams, y) = signal_noise_bank(40, 5);
        // noise first, so the signal kernel has to win on error
        let bank = vec![grams[1].clone(), grams[1].clone(), grams[0].clone()];
        let r = boost_round(&bank, &y, &BoostState::uniform(40), 1.0).unwrap();
        assert_eq!(r.chosen, 2);
        assert_eq!(r.weighted_error, 0.0);
        assert_eq!(r.learner_weight, learner_weight(1e-10));
        assert!(r.kernel_errors.iter().all(|&e| e >= r.weighted_error));
    }

    #[test]
    fn boost_round_ties_go_to_lowest_index() {
        let (grams, y) = signal_noise_bank(30, 6);
        let bank = vec![grams[1].clone(); 4];
        let r = boost_round(&bank, &y, &BoostState::uniform(30), 1.0).unwrap();
        assert_eq!(r.chosen, 0);
    }

    #[test]
    fn learner_weight_clamps() {
        assert!((learner_weight(0.25) - 0.5 * 3f64.ln()).abs() < 1e-15);
        assert!(learner_weight(0.0).is_finite());
        assert!(learner_weight(0.7) > 0.0);
    }

    #[test]
    fn update_examples() {
        let state = BoostState {
            sample_weights: vec![0.1, 0.2, 0.3, 0.4],
            round: 0,
        };
        let y = [1.0, -1.0, 1.0, -1.0];
        let perfect = boost_update(&state, &y, &y, 0.8).unwrap();
        for (a, b) in perfect.sample_weights.iter().zip(&state.sample_weights) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(perfect.round, 1);

        let mut h = y;
        h[2] = -1.0;
        let updated = boost_update(&state, &h, &y, 0.8).unwrap();
        assert!(updated.sample_weights[2] > 0.3);
        assert!((updated.sample_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(boost_update(&state, &h[..2], &y, 0.8).is_err());
    }

    #[test]
    fn update_rejects_degenerate_weights() {
        let state = BoostState {
            sample_weights: vec![0.0, 0.0],
            round: 0,
        };
        assert!(matches!(
            boost_update(&state, &[1.0, 1.0], &[1.0, 1.0], 1.0),
            Err(SelectionError::DegenerateWeights(_))
        ));
    }

    #[test]
    fn mkboost_rounds() {
        let (grams, y) = signal_noise_bank(40, 7);
        let one = select_mkboost_d1(&grams, &y, 1, 1.0).unwrap();
        assert_eq!(one.selected.len(), 1);
        let first = boost_round(&grams, &y, &BoostState::uniform(40), 1.0).unwrap();
        assert_eq!(one.selected, vec![first.chosen]);

        let many = select_mkboost_d1(&grams, &y, 10, 1.0).unwrap();
        assert_eq!(many.selected.len(), 10);
        assert!(many.dedup_selected.contains(&0));
        for k in &many.dedup_selected {
            assert!(many.selected.contains(k));
        }
        let mut firsts = Vec::new();
        for &k in &many.selected {
            if !firsts.contains(&k) {
                firsts.push(k);
            }
        }
        assert_eq!(firsts, many.dedup_selected);
        if let SelectionDiagnostics::Rounds(rs) = &many.diagnostics {
            for r in rs {
                assert!((r.weights_sum - 1.0).abs() < 1e-12);
                assert!(r.kernel_errors.iter().all(|&e| e >= r.weighted_error));
            }
        } else {
            panic!("expected round diagnostics");
        }
        assert_eq!(many, select_mkboost_d1(&grams, &y, 10, 1.0).unwrap());
        assert!(select_mkboost_d1(&grams, &y, 0, 1.0).is_err());
    }

    #[test]
    fn dominant_kernel_is_the_only_pick() {
        // signal kernel is separable, the others are label-independent noise
        let (grams, y) = signal_noise_bank(40, 8);
        let x = Matrix::from_fn(40, 1, |i, _| ((i * 7919) % 13) as f64 / 13.0);
        let flat = gram(&KernelSpec::Polynomial { degree: 1 }, &x, &x).unwrap();
        let bank = vec![flat, grams[0].clone()];
        let r = select_mkboost_d1(&bank, &y, 8, 1.0).unwrap();
        assert_eq!(r.dedup_selected, vec![1]);
    }

    #[test]
    fn diagnostics_csv_layout() {
        let (grams, y) = signal_noise_bank(20, 9);
        let r = select_mkboost_d1(&grams, &y, 3, 1.0).unwrap();
        let csv = r.diagnostics_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "round,kernel,weighted_error,learner_weight");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,"));
    }
}
