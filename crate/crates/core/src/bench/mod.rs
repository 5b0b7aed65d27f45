// SPDX-License-Identifier: MIT OR Apache-2.0

//! Simulation designs with known truth, and the metrics used to score
//! detections against it.

pub mod dgp;
pub mod metrics;

pub use dgp::{
    mvn_equicorrelated, simulate, simulate_dgp1, simulate_dgp2, simulate_factor, simulate_white, DgpKind,
    GroundTruth,
};
pub use metrics::{
    adjusted_rand_index, best_cp_series_rank, cp_series_rank, evaluate, projection_alignment,
    segments_from_cps, Evaluation,
};
