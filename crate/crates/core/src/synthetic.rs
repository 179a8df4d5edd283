//! Seeded synthetic problems used by tests, the acceptance suite and the CLI self-checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::kernels::{gram, GramMatrix, KernelSpec};
use crate::matrix::Matrix;

/// Two isotropic Gaussian blobs centred at `±separation/2` along every axis,
/// `per_class` samples each, interleaved (class 0, class 1, class 0, …).
pub fn gaussian_blobs(per_class: usize, dim: usize, separation: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * per_class;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let features = Matrix::from_fn(n, dim, |i, _| {
        let centre = if labels[i] == 0 { separation / 2.0 } else { -separation / 2.0 };
        centre + standard_normal(&mut rng)
    });
    Dataset::with_raw_labels(features, labels, vec![1.0, -1.0]).expect("valid blobs")
}

/// Box–Muller normal draw.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// A two-kernel bank over `n` samples with balanced `±1` labels:
/// kernel 0 is linear on a one-dimensional feature `y + U(-0.3, 0.3)` and
/// separates the classes with margin; kernel 1 is Gaussian (σ = 1) on five
/// features drawn independently of the labels.
pub fn signal_noise_bank(n: usize, seed: u64) -> (Vec<GramMatrix>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let signal = Matrix::from_fn(n, 1, |i, _| labels[i] + rng.gen_range(-0.3..0.3));
    let noise = Matrix::from_fn(n, 5, |_, _| rng.gen_range(-1.0..1.0));
    let grams = vec![
        gram(&KernelSpec::Polynomial { degree: 1 }, &signal, &signal).expect("shapes match"),
        gram(&KernelSpec::Gaussian { sigma: 1.0 }, &noise, &noise).expect("shapes match"),
    ];
    (grams, labels)
}
