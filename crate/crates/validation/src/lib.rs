//! Reference computations the acceptance suite checks the library against.
//!
//! Everything here is written for obviousness, not speed, and shares no code
//! with the solvers under test beyond the `Matrix` container and the network's
//! forward pass (which the finite-difference check needs as its function).

use ngmkl::matrix::Matrix;
use ngmkl::ngmkl::{cross_entropy, forward, NgmklModel};

/// `½ Σ_ij α_i α_j y_i y_j K_ij − Σ_i α_i`, written out as a double loop.
pub fn dual_value(gram: &Matrix, labels: &[f64], alpha: &[f64]) -> f64 {
    let n = labels.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * labels[i] * labels[j] * gram.get(i, j);
        }
    }
    0.5 * quad - alpha.iter().sum::<f64>()
}

/// Euclidean projection onto `{0 ≤ α ≤ c, yᵀα = 0}` by bisection on the
/// multiplier of the equality constraint.
pub fn project_box_hyperplane(v: &[f64], labels: &[f64], c: f64) -> Vec<f64> {
    let at = |lambda: f64| -> Vec<f64> {
        v.iter()
            .zip(labels)
            .map(|(&vi, &yi)| (vi - lambda * yi).clamp(0.0, c))
            .collect()
    };
    let residual = |a: &[f64]| -> f64 { a.iter().zip(labels).map(|(a, y)| a * y).sum() };
    let span = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Minimises the SVM dual with accelerated projected gradient (FISTA).
/// Returns the final iterate.
pub fn svm_dual_oracle(gram: &Matrix, labels: &[f64], c: f64, iterations: usize) -> Vec<f64> {
    let n = labels.len();
    let q = Matrix::from_fn(n, n, |i, j| labels[i] * labels[j] * gram.get(i, j));
    // Frobenius norm bounds the largest eigenvalue.
    let lipschitz = q.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let step = 1.0 / lipschitz;
    let mut x = vec![0.0; n];
    let mut z = x.clone();
    let mut t = 1.0f64;
    for _ in 0..iterations {
        let qz = q.mul_vec(&z);
        let moved: Vec<f64> = z.iter().zip(&qz).map(|(zi, g)| zi - step * (g - 1.0)).collect();
        let next = project_box_hyperplane(&moved, labels, c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = next
            .iter()
            .zip(&x)
            .map(|(a, b)| a + (t - 1.0) / t_next * (a - b))
            .collect();
        x = next;
        t = t_next;
    }
    x
}

/// Outcome of comparing analytic partials with central differences.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradientCheck {
    pub checked: usize,
    /// Partials with `|analytic − numeric| > abs_floor` and relative error `>= rel_tol`.
    pub failures: usize,
    /// Largest `|analytic − numeric|` over all partials.
    pub worst_absolute: f64,
    /// Largest relative error among partials whose absolute difference exceeds the floor.
    pub worst_relative: f64,
}

impl GradientCheck {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn merge(self, other: GradientCheck) -> GradientCheck {
        GradientCheck {
            checked: self.checked + other.checked,
            failures: self.failures + other.failures,
            worst_absolute: self.worst_absolute.max(other.worst_absolute),
            worst_relative: self.worst_relative.max(other.worst_relative),
        }
    }
}

/// Central differences of step `h` on every parameter. A partial passes when
/// the two values differ by at most `abs_floor`, or when
/// `|analytic − numeric| / max(|analytic|, |numeric|) < rel_tol`.
pub fn check_gradient(
    model: &NgmklModel,
    rows: &[&[f64]],
    target: usize,
    analytic: &[f64],
    h: f64,
    rel_tol: f64,
    abs_floor: f64,
) -> GradientCheck {
    let theta = model.flat_params();
    assert_eq!(theta.len(), analytic.len());
    let loss = |m: &NgmklModel| cross_entropy(&forward(m, rows).unwrap().0, target).unwrap();
    let mut probe = model.clone();
    let mut out = GradientCheck {
        checked: theta.len(),
        ..GradientCheck::default()
    };
    for p in 0..theta.len() {
        let mut t = theta.clone();
        t[p] = theta[p] + h;
        probe.set_flat_params(&t);
        let up = loss(&probe);
        t[p] = theta[p] - h;
        probe.set_flat_params(&t);
        let down = loss(&probe);
        let numeric = (up - down) / (2.0 * h);
        let diff = (analytic[p] - numeric).abs();
        out.worst_absolute = out.worst_absolute.max(diff);
        if diff > abs_floor {
            let rel = diff / analytic[p].abs().max(numeric.abs());
            out.worst_relative = out.worst_relative.max(rel);
            if rel >= rel_tol {
                out.failures += 1;
            }
        }
    }
    out
}
