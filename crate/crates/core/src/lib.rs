// SPDX-License-Identifier: MIT OR Apache-2.0

//! Change-point detection in the spectral density of high-dimensional,
//! piecewise-stationary multivariate time series.
//!
//! The pipeline is:
//!
//! 1. [`ingest`]: load a `p × N` series matrix, optionally transform it, and
//!    partition time into `B` blocks of length `L`.
//! 2. [`spectral`]: tapered block periodograms on the Fourier grid, stored
//!    per frequency as a stack of `p × p` Hermitian rank-one slices.
//! 3. [`cusum`]: the co-spectrum CUSUM transform over a block interval.
//! 4. [`sparse_decomp`]: a tensor power method with truncated matrix power
//!    inner loop that extracts a `k`-sparse projection direction.
//! 5. [`detect`]: per-frequency projections, thresholded aggregation across
//!    frequencies and wild binary segmentation.
//! 6. [`tune`]: bootstrap threshold, sparsity heuristic and defaults.
//! 7. [`bench`]: simulation DGPs with ground truth and evaluation metrics.

#![forbid(unsafe_code)]
// `!(x > y)` is used on purpose where NaN must take the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cusum;
pub mod detect;
mod error;
pub mod ingest;
pub mod json;
pub mod rng;
pub mod sparse_decomp;
pub mod spectral;
pub mod tune;

pub use error::{Error, Result};
