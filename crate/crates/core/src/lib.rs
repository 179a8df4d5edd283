//! Kernel networks: a neural model layered on a bank of base kernels, with MKL baselines.
//!
//! Building blocks, bottom-up:
//!
//! - [`data`]: LIBSVM parsing, min/max scaling, seeded train/test splits.
//! - [`kernels`]: the 17-kernel bank (three polynomial, fourteen Gaussian) and Gram matrices.
//! - [`svm`]: SMO solver for the binary SVM dual on a precomputed kernel.
//! - [`mkl`]: L1 multiple kernel learning baseline (simplex-constrained kernel weights).
//! - [`selection`]: kernel subsets for the three network variants (all, L1-sparse, boosting).
//! - [`ngmkl`]: the kernel network itself, with backprop and minibatch SGD.
//! - [`bench`]: repeated-split benchmark harness and report rendering.

// `!(x > 0.0)` style checks are deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod data;
pub mod kernels;
pub mod matrix;
pub mod mkl;
pub mod ngmkl;
pub mod selection;
pub mod svm;
pub mod synthetic;

pub use data::{Dataset, SplitPlan};
pub use kernels::{base_kernel_bank, GramMatrix, KernelSpec};
pub use matrix::Matrix;
