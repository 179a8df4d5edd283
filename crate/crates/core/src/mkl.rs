//! L1 multiple kernel learning baseline.
//!
//! Kernel weights `β` live on the probability simplex. Training alternates
//! an SVM solve on `Σ β_j G_j` with a projected (sub)gradient ascent step on
//! `β`, using the per-kernel terms `½ (α⊙y)ᵀ G_j (α⊙y)` of the inner
//! objective. Steps that lower the inner minimum are rejected and halve the
//! step size.

use rayon::prelude::*;
use thiserror::Error;

use crate::kernels::{GramMatrix, KernelSpec};
use crate::matrix::Matrix;
use crate::svm::{self, SvmError, SvmModel, SvmProblem};

#[derive(Debug, Error, PartialEq)]
pub enum MklError {
    #[error("empty kernel list")]
    NoKernels,
    #[error("gram shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("expected {expected} kernel weights, got {actual}")]
    WeightCount { expected: usize, actual: usize },
    #[error(transparent)]
    Svm(#[from] SvmError),
}

pub type Result<T> = std::result::Result<T, MklError>;

#[derive(Clone, Debug, PartialEq)]
pub struct MklConfig {
    pub c_reg: f64,
    pub initial_step: f64,
    pub max_outer: usize,
    /// Stop once a proposed step moves β by less than this (L∞).
    pub beta_tol: f64,
    pub svm_tol: f64,
    pub svm_max_passes: usize,
}

impl Default for MklConfig {
    fn default() -> Self {
        MklConfig {
            c_reg: svm::DEFAULT_C,
            initial_step: 0.1,
            max_outer: 100,
            beta_tol: 1e-4,
            svm_tol: svm::DEFAULT_TOL,
            svm_max_passes: svm::DEFAULT_MAX_PASSES,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MklSolution {
    pub beta: Vec<f64>,
    pub svm: SvmModel,
    pub kernel_specs: Vec<KernelSpec>,
    /// SVM dual optimum `Σα − ½γᵀG(β)γ` for every accepted β, starting from the uniform one.
    pub objective_history: Vec<f64>,
    pub outer_iterations: usize,
    pub converged: bool,
}

impl MklSolution {
    pub fn initial_objective(&self) -> f64 {
        self.objective_history[0]
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_history.last().unwrap()
    }
}

/// `Σ_j β_j G_j`, accumulated in kernel order.
pub fn combined_gram(grams: &[GramMatrix], beta: &[f64]) -> Result<Matrix> {
    let first = grams.first().ok_or(MklError::NoKernels)?;
    if beta.len() != grams.len() {
        return Err(MklError::WeightCount {
            expected: grams.len(),
            actual: beta.len(),
        });
    }
    let shape = first.values.shape();
    for g in grams {
        if g.values.shape() != shape {
            return Err(MklError::ShapeMismatch {
                expected: shape,
                actual: g.values.shape(),
            });
        }
    }
    let mut out = Matrix::zeros(shape.0, shape.1);
    for (g, &b) in grams.iter().zip(beta) {
        if b == 0.0 {
            continue;
        }
        for (o, &v) in out.as_mut_slice().iter_mut().zip(g.values.as_slice()) {
            *o += b * v;
        }
    }
    Ok(out)
}

/// Euclidean projection onto `{β ≥ 0, Σβ = 1}` (sort-and-threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cumsum += uk;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn check_square(grams: &[GramMatrix]) -> Result<usize> {
    let first = grams.first().ok_or(MklError::NoKernels)?;
    let n = first.rows();
    for g in grams {
        if g.values.shape() != (n, n) {
            return Err(MklError::ShapeMismatch {
                expected: (n, n),
                actual: g.values.shape(),
            });
        }
    }
    Ok(n)
}

fn solve(grams: &[GramMatrix], beta: &[f64], labels: &[f64], config: &MklConfig) -> Result<(SvmModel, f64)> {
    let k = combined_gram(grams, beta)?;
    let problem = SvmProblem::new(&k, labels, config.c_reg)?;
    let model = svm::smo_train(&problem, config.svm_tol, config.svm_max_passes)?;
    let inner = svm::dual_objective(&model.alpha, &problem)?;
    Ok((model, inner))
}

/// `½ γᵀ G_j γ` per kernel, the gradient of the inner minimum with respect to β.
pub fn kernel_gradients(grams: &[GramMatrix], model: &SvmModel) -> Vec<f64> {
    let gamma = model.coefficients();
    let support = &model.support_indices;
    grams
        .par_iter()
        .map(|g| {
            let mut q = 0.0;
            for &i in support {
                let row = g.row(i);
                let mut s = 0.0;
                for &j in support {
                    s += gamma[j] * row[j];
                }
                q += gamma[i] * s;
            }
            0.5 * q
        })
        .collect()
}

/// Trains the L1-MKL baseline on square training Gram matrices.
pub fn mkl_train(grams: &[GramMatrix], labels: &[f64], config: &MklConfig) -> Result<MklSolution> {
    let s = grams.len();
    let n = check_square(grams)?;
    if labels.len() != n {
        return Err(SvmError::LengthMismatch {
            expected: n,
            actual: labels.len(),
        }
        .into());
    }
    if !(labels.contains(&1.0) && labels.contains(&-1.0)) {
        return Err(SvmError::SingleClass.into());
    }

    let mut beta = vec![1.0 / s as f64; s];
    if s == 1 {
        beta[0] = 1.0;
    }
    let (mut model, mut inner) = solve(grams, &beta, labels, config)?;
    let mut history = vec![-inner];
    let mut step = config.initial_step;
    let mut converged = false;
    let mut outer = 0;
    while outer < config.max_outer {
        outer += 1;
        let grad = kernel_gradients(grams, &model);
        let proposal: Vec<f64> = project_simplex(
            &beta
                .iter()
                .zip(&grad)
                .map(|(b, g)| b + step * g)
                .collect::<Vec<_>>(),
        );
        let moved = proposal
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if moved < config.beta_tol {
            converged = true;
            break;
        }
        let (cand_model, cand_inner) = solve(grams, &proposal, labels, config)?;
        if cand_inner < inner {
            step *= 0.5;
            continue;
        }
        beta = proposal;
        model = cand_model;
        inner = cand_inner;
        history.push(-inner);
    }

    Ok(MklSolution {
        beta,
        svm: model,
        kernel_specs: grams.iter().map(|g| g.spec).collect(),
        objective_history: history,
        outer_iterations: outer,
        converged,
    })
}

/// Decision values `Σ_j β_j f(K_x^j)` for test rows given per kernel (m×n each).
pub fn mkl_decision_values(solution: &MklSolution, test_rows: &[GramMatrix]) -> Result<Vec<f64>> {
    let n = solution.svm.alpha.len();
    let m = test_rows.first().ok_or(MklError::NoKernels)?.rows();
    for g in test_rows {
        if g.values.shape() != (m, n) {
            return Err(MklError::ShapeMismatch {
                expected: (m, n),
                actual: g.values.shape(),
            });
        }
    }
    let combined = combined_gram(test_rows, &solution.beta)?;
    Ok(combined
        .row_iter()
        .map(|row| svm::decision_unchecked(&solution.svm, row))
        .collect())
}

/// Predicted `±1` labels; a zero decision value maps to `+1`.
pub fn mkl_predict(solution: &MklSolution, test_rows: &[GramMatrix]) -> Result<Vec<f64>> {
    Ok(mkl_decision_values(solution, test_rows)?
        .into_iter()
        .map(svm::decision_label)
        .collect())
}
