//! Base kernels, the 17-kernel bank and Gram matrices against training anchors.

use std::fmt;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{dot, Matrix};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("invalid kernel: {0}")]
    InvalidSpec(String),
    #[error("gram cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KernelError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `(xᵀy)^degree`
    Polynomial { degree: u32 },
    /// `exp(-‖x−y‖² / (2σ²))`
    Gaussian { sigma: f64 },
}

impl KernelSpec {
    pub fn polynomial(degree: u32) -> Result<Self> {
        if degree == 0 {
            return Err(KernelError::InvalidSpec("polynomial degree must be positive".into()));
        }
        Ok(KernelSpec::Polynomial { degree })
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(KernelError::InvalidSpec(format!("gaussian sigma must be positive, got {sigma}")));
        }
        Ok(KernelSpec::Gaussian { sigma })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Polynomial { degree } => KernelSpec::polynomial(degree).map(|_| ()),
            KernelSpec::Gaussian { sigma } => KernelSpec::gaussian(sigma).map(|_| ()),
        }
    }

    /// Kernel value on two rows of equal length (unchecked).
    #[inline]
    pub fn apply(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Polynomial { degree } => dot(x, y).powi(degree as i32),
            KernelSpec::Gaussian { sigma } => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-sq / (2.0 * sigma * sigma)).exp()
            }
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Polynomial { degree } => write!(f, "poly(d={degree})"),
            KernelSpec::Gaussian { sigma } => write!(f, "gauss(sigma={sigma})"),
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(KernelError::DimensionMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(spec.apply(x, y))
}

/// Kernel values between query rows and anchor rows.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    pub values: Matrix,
    pub spec: KernelSpec,
}

impl GramMatrix {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }
}

/// `values[i][j] = k(queries[i], anchors[j])`. Rows are computed in parallel;
/// every entry is independent so the result does not depend on scheduling.
pub fn gram(spec: &KernelSpec, queries: &Matrix, anchors: &Matrix) -> Result<GramMatrix> {
    if queries.cols() != anchors.cols() {
        return Err(KernelError::DimensionMismatch {
            left: queries.cols(),
            right: anchors.cols(),
        });
    }
    let n = anchors.rows();
    let mut values = Matrix::zeros(queries.rows(), n);
    if n > 0 {
        values
            .as_mut_slice()
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, out)| {
                let q = queries.row(i);
                for (j, o) in out.iter_mut().enumerate() {
                    *o = spec.apply(q, anchors.row(j));
                }
            });
    }
    Ok(GramMatrix { values, spec: *spec })
}

/// Polynomial degrees 1, 2, 3 followed by Gaussians with σ = 2^-6 … 2^7.
pub fn base_kernel_bank() -> Vec<KernelSpec> {
    let mut bank: Vec<KernelSpec> = (1..=3).map(|degree| KernelSpec::Polynomial { degree }).collect();
    bank.extend((-6..=7).map(|k| KernelSpec::Gaussian {
        sigma: 2f64.powi(k),
    }));
    bank
}

const CACHE_MAGIC: &[u8; 8] = b"NGMKLGRM";

/// Writes a Gram matrix as: magic `NGMKLGRM`, kind byte (0 polynomial,
/// 1 gaussian), parameter as f64 (degree or σ), rows u64, cols u64, then the
/// row-major entries. All little-endian.
pub fn write_gram_cache<W: Write>(gram: &GramMatrix, mut w: W) -> Result<()> {
    w.write_all(CACHE_MAGIC)?;
    let (kind, param) = match gram.spec {
        KernelSpec::Polynomial { degree } => (0u8, degree as f64),
        KernelSpec::Gaussian { sigma } => (1u8, sigma),
    };
    w.write_all(&[kind])?;
    w.write_all(&param.to_le_bytes())?;
    w.write_all(&(gram.rows() as u64).to_le_bytes())?;
    w.write_all(&(gram.cols() as u64).to_le_bytes())?;
    for v in gram.values.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_gram_cache<R: Read>(mut r: R) -> Result<GramMatrix> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(KernelError::Cache("bad magic".into()));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    let param = read_f64(&mut r)?;
    let spec = match kind[0] {
        0 if param.fract() == 0.0 && param >= 1.0 && param <= u32::MAX as f64 => KernelSpec::Polynomial {
            degree: param as u32,
        },
        1 => KernelSpec::gaussian(param)?,
        k => return Err(KernelError::Cache(format!("bad kernel encoding {k}/{param}"))),
    };
    let rows = read_u64(&mut r)? as usize;
    let cols = read_u64(&mut r)? as usize;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| KernelError::Cache("size overflow".into()))?;
    let mut values = Vec::with_capacity(len);
    for _ in 0..len {
        values.push(read_f64(&mut r)?);
    }
    Ok(GramMatrix {
        values: Matrix::from_vec(rows, cols, values),
        spec,
    })
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn eval_examples() {
        for sigma in [0.015625, 1.0, 128.0] {
            let k = KernelSpec::gaussian(sigma).unwrap();
            assert_eq!(kernel_eval(&k, &[0.3, -2.0], &[0.3, -2.0]).unwrap(), 1.0);
        }
        let lin = KernelSpec::polynomial(1).unwrap();
        assert_eq!(kernel_eval(&lin, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        // exp(-2) to 15 digits
        let g = KernelSpec::gaussian(1.0).unwrap();
        let v = kernel_eval(&g, &[0.0], &[2.0]).unwrap();
        assert!((v - 0.135_335_283_236_612_7).abs() < 1e-15);
        assert!(matches!(
            kernel_eval(&g, &[0.0], &[1.0, 2.0]),
            Err(KernelError::DimensionMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(KernelSpec::polynomial(0).is_err());
        assert!(KernelSpec::gaussian(0.0).is_err());
        assert!(KernelSpec::gaussian(-1.0).is_err());
        assert!(KernelSpec::gaussian(f64::NAN).is_err());
        assert!(KernelSpec::polynomial(7).is_ok());
    }

    #[test]
    fn gram_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = KernelSpec::Polynomial { degree: 2 };
        let r = random_matrix(&mut rng, 1, 4);
        let g = gram(&spec, &r, &r).unwrap();
        assert_eq!(g.values.shape(), (1, 1));
        assert_eq!(g.values.get(0, 0), kernel_eval(&spec, r.row(0), r.row(0)).unwrap());

        let rows = random_matrix(&mut rng, 5, 3);
        let g = gram(&KernelSpec::Gaussian { sigma: 1.0 }, &rows, &rows).unwrap();
        for i in 0..5 {
            assert_eq!(g.values.get(i, i), 1.0);
            for j in 0..5 {
                assert_eq!(g.values.get(i, j), g.values.get(j, i));
            }
        }
    }

    #[test]
    fn gram_entries_match_pointwise_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = random_matrix(&mut rng, 13, 6);
        let a = random_matrix(&mut rng, 9, 6);
        for spec in base_kernel_bank() {
            let g = gram(&spec, &q, &a).unwrap();
            for _ in 0..100 {
                let i = rng.gen_range(0..13);
                let j = rng.gen_range(0..9);
                let direct = kernel_eval(&spec, q.row(i), a.row(j)).unwrap();
                assert!((g.values.get(i, j) - direct).abs() <= 1e-12 * direct.abs().max(1.0));
            }
        }
    }

    #[test]
    fn gram_dimension_mismatch() {
        let q = Matrix::zeros(2, 3);
        let a = Matrix::zeros(2, 4);
        assert!(gram(&KernelSpec::Polynomial { degree: 1 }, &q, &a).is_err());
    }

    #[test]
    fn bank_layout() {
        let bank = base_kernel_bank();
        assert_eq!(bank.len(), 17);
        assert_eq!(bank[0], KernelSpec::Polynomial { degree: 1 });
        assert_eq!(bank[2], KernelSpec::Polynomial { degree: 3 });
        assert_eq!(bank[3], KernelSpec::Gaussian { sigma: 0.015625 });
        assert_eq!(bank[16], KernelSpec::Gaussian { sigma: 128.0 });
        for w in bank[3..].windows(2) {
            match (w[0], w[1]) {
                (KernelSpec::Gaussian { sigma: a }, KernelSpec::Gaussian { sigma: b }) => assert_eq!(b, 2.0 * a),
                _ => panic!("expected gaussians"),
            }
        }
    }

    #[test]
    fn transpose_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_matrix(&mut rng, 7, 4);
        let a = random_matrix(&mut rng, 5, 4);
        for spec in base_kernel_bank() {
            let qa = gram(&spec, &q, &a).unwrap().values;
            let aq = gram(&spec, &a, &q).unwrap().values.transpose();
            for (x, y) in qa.as_slice().iter().zip(aq.as_slice()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_grows_with_sigma() {
        let x = [0.2, -0.4];
        let y = [0.5, 0.1];
        let values: Vec<f64> = base_kernel_bank()[3..].iter().map(|k| k.apply(&x, &y)).collect();
        assert!(values.windows(2).all(|w| w[1] > w[0]), "{values:?}");
        assert!(values.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn polynomial_homogeneity() {
        let x = [0.3, -0.7, 1.1];
        let y = [0.9, 0.2, -0.5];
        for degree in 1..=3u32 {
            let k = KernelSpec::Polynomial { degree };
            for a in [0.5, 2.0, 3.7] {
                let scaled: Vec<f64> = x.iter().map(|v| a * v).collect();
                let lhs = k.apply(&scaled, &y);
                let rhs = a.powi(degree as i32) * k.apply(&x, &y);
                assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn cache_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = random_matrix(&mut rng, 3, 2);
        for spec in [KernelSpec::Polynomial { degree: 3 }, KernelSpec::Gaussian { sigma: 0.25 }] {
            let g = gram(&spec, &q, &q).unwrap();
            let mut buf = Vec::new();
            write_gram_cache(&g, &mut buf).unwrap();
            assert_eq!(buf.len(), 8 + 1 + 8 + 8 + 8 + 9 * 8);
            assert_eq!(read_gram_cache(buf.as_slice()).unwrap(), g);
        }
        assert!(read_gram_cache(&b"NOTMAGIC"[..]).is_err());
    }
}
