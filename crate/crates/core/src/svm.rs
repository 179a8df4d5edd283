//! Binary soft-margin SVM on a precomputed kernel, trained with SMO.
//!
//! Solves `min_α ½ (α⊙y)ᵀ G (α⊙y) − 1ᵀα` subject to `yᵀα = 0` and
//! `0 ≤ α_i ≤ box_i`. Working pairs are chosen with second-order
//! information (maximal objective decrease); ties go to the lowest index, so
//! a given problem always produces the same model.
//!
//! With sample weights `w` the box of sample `i` is `C·n·w_i`, which turns
//! the hinge loss into a `w`-weighted hinge loss.

use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("single-class problem")]
    SingleClass,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("gram matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("labels must be +1 or -1")]
    BadLabel,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, SvmError>;

const TAU: f64 = 1e-12;
const SUPPORT_EPS: f64 = 1e-9;
const HARD_ITERATION_CAP: usize = 10_000_000;

pub const DEFAULT_TOL: f64 = 1e-3;
pub const DEFAULT_MAX_PASSES: usize = 1000;
pub const DEFAULT_C: f64 = 1.0;

#[derive(Clone, Copy, Debug)]
pub struct SvmProblem<'a> {
    pub gram: &'a Matrix,
    pub labels: &'a [f64],
    pub c_reg: f64,
    pub sample_weights: Option<&'a [f64]>,
}

impl<'a> SvmProblem<'a> {
    pub fn new(gram: &'a Matrix, labels: &'a [f64], c_reg: f64) -> Result<Self> {
        let p = SvmProblem {
            gram,
            labels,
            c_reg,
            sample_weights: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn weighted(gram: &'a Matrix, labels: &'a [f64], c_reg: f64, weights: &'a [f64]) -> Result<Self> {
        let p = SvmProblem {
            gram,
            labels,
            c_reg,
            sample_weights: Some(weights),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let (r, c) = self.gram.shape();
        if r != c {
            return Err(SvmError::NotSquare(r, c));
        }
        if self.labels.len() != r {
            return Err(SvmError::LengthMismatch {
                expected: r,
                actual: self.labels.len(),
            });
        }
        if self.labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(SvmError::BadLabel);
        }
        if !(self.c_reg > 0.0 && self.c_reg.is_finite()) {
            return Err(SvmError::InvalidParameter(format!("C must be positive, got {}", self.c_reg)));
        }
        if let Some(w) = self.sample_weights {
            if w.len() != r {
                return Err(SvmError::LengthMismatch {
                    expected: r,
                    actual: w.len(),
                });
            }
            if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
                return Err(SvmError::InvalidParameter("sample weights must be finite and >= 0".into()));
            }
        }
        Ok(())
    }

    /// Per-sample upper bound on α. Uniform weights give exactly `C` for every sample.
    pub fn upper_bounds(&self) -> Vec<f64> {
        let n = self.len();
        match self.sample_weights {
            Some(w) if !w.iter().all(|&v| v == w[0]) => {
                let scale = self.c_reg * n as f64;
                w.iter().map(|&v| scale * v).collect()
            }
            _ => vec![self.c_reg; n],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub support_indices: Vec<usize>,
    pub train_labels: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl SvmModel {
    /// `γ = α ⊙ y`, the coefficient vector over the training anchors.
    pub fn coefficients(&self) -> Vec<f64> {
        self.alpha.iter().zip(&self.train_labels).map(|(a, y)| a * y).collect()
    }
}

/// `½ (α⊙y)ᵀ G (α⊙y) − Σ α`.
pub fn dual_objective(alpha: &[f64], problem: &SvmProblem) -> Result<f64> {
    let n = problem.len();
    if alpha.len() != n {
        return Err(SvmError::LengthMismatch {
            expected: n,
            actual: alpha.len(),
        });
    }
    let g: Vec<f64> = alpha.iter().zip(problem.labels).map(|(a, y)| a * y).collect();
    let mut quad = 0.0;
    for i in 0..n {
        if g[i] != 0.0 {
            let row = problem.gram.row(i);
            quad += g[i] * g.iter().zip(row).map(|(gj, k)| gj * k).sum::<f64>();
        }
    }
    Ok(0.5 * quad - alpha.iter().sum::<f64>())
}

/// Trains with SMO until the maximal KKT violation drops below `tol` or
/// `max_passes · n` iterations (capped at ten million) have run. Running out
/// of iterations is not an error: the current iterate is returned with
/// `converged = false`.
pub fn smo_train(problem: &SvmProblem, tol: f64, max_passes: usize) -> Result<SvmModel> {
    problem.validate()?;
    if !(tol > 0.0) {
        return Err(SvmError::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    let y = problem.labels;
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(SvmError::SingleClass);
    }
    let n = problem.len();
    let k = problem.gram;
    let cap = problem.upper_bounds();
    let max_iter = max_passes.saturating_mul(n).clamp(1000, HARD_ITERATION_CAP);

    let mut alpha = vec![0.0; n];
    // gradient of the dual objective: (Qα)_i − 1 with Q_ij = y_i y_j K_ij
    let mut grad = vec![-1.0; n];
    let diag: Vec<f64> = (0..n).map(|i| k.get(i, i)).collect();

    let in_up = |a: f64, yi: f64, c: f64| if yi > 0.0 { a < c } else { a > 0.0 };
    let in_low = |a: f64, yi: f64, c: f64| if yi > 0.0 { a > 0.0 } else { a < c };

    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        // first index: maximal violation over the "up" set
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t], cap[t]) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = t;
                }
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut best = f64::INFINITY;
        if i_sel != usize::MAX {
            let ki = k.row(i_sel);
            for t in 0..n {
                if !in_low(alpha[t], y[t], cap[t]) {
                    continue;
                }
                let yg = y[t] * grad[t];
                if yg > gmax2 {
                    gmax2 = yg;
                }
                let b = gmax + yg;
                if b > 0.0 {
                    let mut a = diag[i_sel] + diag[t] - 2.0 * ki[t];
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let obj = -(b * b) / a;
                    if obj < best {
                        best = obj;
                        j_sel = t;
                    }
                }
            }
        }
        if gmax + gmax2 < tol || j_sel == usize::MAX {
            converged = true;
            break;
        }
        iterations += 1;

        let (i, j) = (i_sel, j_sel);
        let (ci, cj) = (cap[i], cap[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let kij = k.get(i, j);
        if y[i] != y[j] {
            let mut quad = diag[i] + diag[j] + 2.0 * kij * y[i] * y[j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let mut quad = diag[i] + diag[j] - 2.0 * kij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let di = (alpha[i] - old_i) * y[i];
        let dj = (alpha[j] - old_j) * y[j];
        let (ki, kj) = (k.row(i), k.row(j));
        for t in 0..n {
            grad[t] += y[t] * (ki[t] * di + kj[t] * dj);
        }
    }

    let bias = compute_bias(&alpha, &grad, y, &cap);
    let support_indices = (0..n).filter(|&i| alpha[i] > SUPPORT_EPS).collect();
    Ok(SvmModel {
        alpha,
        bias,
        support_indices,
        train_labels: y.to_vec(),
        converged,
        iterations,
    })
}

/// Average of `−y_i G_i` over free vectors, or the midpoint of the feasible
/// interval when every α sits at a bound.
fn compute_bias(alpha: &[f64], grad: &[f64], y: &[f64], cap: &[f64]) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut free = 0usize;
    for i in 0..alpha.len() {
        if cap[i] <= 0.0 {
            continue;
        }
        let yg = y[i] * grad[i];
        if alpha[i] >= cap[i] {
            if y[i] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[i] <= 0.0 {
            if y[i] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum += yg;
        }
    }
    let rho = if free > 0 {
        sum / free as f64
    } else if ub.is_finite() && lb.is_finite() {
        (ub + lb) / 2.0
    } else if ub.is_finite() {
        ub
    } else if lb.is_finite() {
        lb
    } else {
        0.0
    };
    -rho
}

/// `Σ α_i y_i k_i + b` for a row of kernel values against the training samples.
pub fn svm_decision(model: &SvmModel, gram_row: &[f64]) -> Result<f64> {
    if gram_row.len() != model.alpha.len() {
        return Err(SvmError::LengthMismatch {
            expected: model.alpha.len(),
            actual: gram_row.len(),
        });
    }
    Ok(decision_unchecked(model, gram_row))
}

#[inline]
pub(crate) fn decision_unchecked(model: &SvmModel, gram_row: &[f64]) -> f64 {
    let mut s = 0.0;
    for &i in &model.support_indices {
        s += model.alpha[i] * model.train_labels[i] * gram_row[i];
    }
    s + model.bias
}

/// Sign of a decision value; exact zero counts as `+1`.
#[inline]
pub fn decision_label(value: f64) -> f64 {
    if value >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Largest KKT violation of `model` on its training problem, measured on the
/// margins `y_i f(x_i)`:
/// `α_i = 0 ⇒ y_i f ≥ 1`, `α_i = box_i ⇒ y_i f ≤ 1`, otherwise `y_i f = 1`.
#[allow(clippy::needless_range_loop)]
pub fn kkt_violation(model: &SvmModel, problem: &SvmProblem) -> f64 {
    let cap = problem.upper_bounds();
    let mut worst: f64 = 0.0;
    for i in 0..problem.len() {
        if cap[i] <= 0.0 {
            continue;
        }
        let margin = problem.labels[i] * decision_unchecked(model, problem.gram.row(i));
        let a = model.alpha[i];
        let v = if a <= 0.0 {
            (1.0 - margin).max(0.0)
        } else if a >= cap[i] {
            (margin - 1.0).max(0.0)
        } else {
            (margin - 1.0).abs()
        };
        worst = worst.max(v);
    }
    worst
}

pub fn kkt_audit(model: &SvmModel, problem: &SvmProblem, tol: f64) -> bool {
    kkt_violation(model, problem) <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{gram, KernelSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_gram(xs: &[f64]) -> Matrix {
        Matrix::from_fn(xs.len(), xs.len(), |i, j| xs[i] * xs[j])
    }

    #[test]
    fn objective_examples() {
        let g = Matrix::from_rows(&[[1.0]]).unwrap();
        let p = SvmProblem::new(&g, &[1.0], 1.0).unwrap();
        assert_eq!(dual_objective(&[0.0], &p).unwrap(), 0.0);
        for a in [0.25, 1.0, 3.0] {
            assert_eq!(dual_objective(&[a], &p).unwrap(), a * a / 2.0 - a);
        }
        assert!(dual_objective(&[0.0, 1.0], &p).is_err());
    }

    #[test]
    fn objective_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let n = rng.gen_range(1..9);
            let x = Matrix::from_fn(n, 3, |_, _| rng.gen_range(-1.0..1.0));
            let g = gram(&KernelSpec::Gaussian { sigma: 0.7 }, &x, &x).unwrap().values;
            let y: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
            let p = SvmProblem::new(&g, &y, 2.0).unwrap();
            let mut naive = 0.0;
            for i in 0..n {
                for j in 0..n {
                    naive += 0.5 * a[i] * a[j] * y[i] * y[j] * g.get(i, j);
                }
                naive -= a[i];
            }
            assert!((dual_objective(&a, &p).unwrap() - naive).abs() < 1e-10);
        }
    }

    #[test]
    fn two_point_analytic_solution() {
        // x = ±1, y = ±1, linear kernel: α = [½, ½], b = 0, f(x) = x
        let g = linear_gram(&[1.0, -1.0]);
        let y = [1.0, -1.0];
        let p = SvmProblem::new(&g, &y, 10.0).unwrap();
        let m = smo_train(&p, DEFAULT_TOL, DEFAULT_MAX_PASSES).unwrap();
        assert!(m.converged);
        assert!((m.alpha[0] - 0.5).abs() < 1e-12 && (m.alpha[1] - 0.5).abs() < 1e-12);
        assert!(m.bias.abs() < 1e-12);
        // query x = 0.25 against anchors {1, -1}
        let d = svm_decision(&m, &[0.25, -0.25]).unwrap();
        assert!((d - 0.25).abs() < 1e-12);
    }

    #[test]
    fn single_class_rejected() {
        let g = linear_gram(&[1.0, 2.0]);
        let p = SvmProblem::new(&g, &[1.0, 1.0], 1.0).unwrap();
        assert_eq!(smo_train(&p, 1e-3, 10).unwrap_err(), SvmError::SingleClass);
        assert_eq!(SvmError::SingleClass.to_string(), "single-class problem");
    }

    #[test]
    fn invalid_problems_rejected() {
        let g = linear_gram(&[1.0, 2.0]);
        assert!(SvmProblem::new(&g, &[1.0], 1.0).is_err());
        assert!(SvmProblem::new(&g, &[1.0, 0.5], 1.0).is_err());
        assert!(SvmProblem::new(&g, &[1.0, -1.0], 0.0).is_err());
        assert!(SvmProblem::weighted(&g, &[1.0, -1.0], 1.0, &[0.5, -0.5]).is_err());
        let rect = Matrix::zeros(2, 3);
        assert!(SvmProblem::new(&rect, &[1.0, -1.0], 1.0).is_err());
    }

    #[test]
    fn empty_model_decision_ties_to_plus_one() {
        let m = SvmModel {
            alpha: vec![0.0; 3],
            bias: 0.0,
            support_indices: vec![],
            train_labels: vec![1.0, -1.0, 1.0],
            converged: true,
            iterations: 0,
        };
        let d = svm_decision(&m, &[0.3, 0.1, -2.0]).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(decision_label(d), 1.0);
        assert!(svm_decision(&m, &[1.0]).is_err());
    }

    fn random_problem(rng: &mut ChaCha8Rng, n: usize) -> (Matrix, Vec<f64>) {
        let x = Matrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
        let g = gram(&KernelSpec::Gaussian { sigma: 0.5 }, &x, &x).unwrap().values;
        let mut y: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        y[0] = 1.0;
        y[1] = -1.0;
        (g, y)
    }

    #[test]
    fn kkt_and_equality_hold_after_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let n = rng.gen_range(2..40);
            let (g, y) = random_problem(&mut rng, n);
            let c = rng.gen_range(0.1..10.0);
            let p = SvmProblem::new(&g, &y, c).unwrap();
            let m = smo_train(&p, DEFAULT_TOL, DEFAULT_MAX_PASSES).unwrap();
            assert!(m.converged);
            assert!(kkt_audit(&m, &p, DEFAULT_TOL), "violation {}", kkt_violation(&m, &p));
            let eq: f64 = m.alpha.iter().zip(&y).map(|(a, y)| a * y).sum();
            assert!(eq.abs() < 1e-8);
            assert!(m.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
            for i in 0..n {
                assert_eq!(m.support_indices.contains(&i), m.alpha[i] > 1e-9);
            }
        }
    }

    #[test]
    fn uniform_weights_match_unweighted() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [7, 13, 49] {
            let (g, y) = random_problem(&mut rng, n);
            let w = vec![1.0 / n as f64; n];
            let plain = smo_train(&SvmProblem::new(&g, &y, 1.0).unwrap(), 1e-3, 100).unwrap();
            let weighted = smo_train(&SvmProblem::weighted(&g, &y, 1.0, &w).unwrap(), 1e-3, 100).unwrap();
            assert_eq!(plain, weighted);
        }
    }

    #[test]
    fn weighted_boxes_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 20;
        let (g, y) = random_problem(&mut rng, n);
        let mut w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        w[5] = 0.0;
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        let p = SvmProblem::weighted(&g, &y, 0.5, &w).unwrap();
        let m = smo_train(&p, 1e-3, 100).unwrap();
        let cap = p.upper_bounds();
        assert_eq!(m.alpha[5], 0.0);
        assert!(m.alpha.iter().zip(&cap).all(|(a, c)| *a >= 0.0 && a <= c));
        assert!(kkt_audit(&m, &p, 1e-3));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let (g, y) = random_problem(&mut rng, 1500);
        let p = SvmProblem::new(&g, &y, 1000.0).unwrap();
        // 0 passes still runs the 1000-iteration floor
        let m = smo_train(&p, 1e-12, 0).unwrap();
        assert!(!m.converged);
        assert_eq!(m.iterations, 1000);
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (g, y) = random_problem(&mut rng, 30);
        let p = SvmProblem::new(&g, &y, 1.0).unwrap();
        assert_eq!(smo_train(&p, 1e-3, 100).unwrap(), smo_train(&p, 1e-3, 100).unwrap());
    }
}
