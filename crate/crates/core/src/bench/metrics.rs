// SPDX-License-Identifier: MIT OR Apache-2.0

//! Evaluation metrics: segmentation agreement, projection alignment and
//! ranking of the changing series.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::detect::DetectionReport;
use crate::{Error, Result};

use super::dgp::GroundTruth;

/// Segment label of each time point `1..=n`: the number of change times
/// `≤ t`.
pub fn segments_from_cps(cp_times: &[usize], n: usize) -> Result<Vec<usize>> {
    if cp_times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::input("change times must be strictly increasing"));
    }
    if let Some(&t) = cp_times.iter().find(|&&t| t <= 1 || t >= n) {
        return Err(Error::input(format!("change time {t} outside (1, {n})")));
    }
    let mut labels = Vec::with_capacity(n);
    let mut next = 0;
    for t in 1..=n {
        while next < cp_times.len() && cp_times[next] <= t {
            next += 1;
        }
        labels.push(next);
    }
    Ok(labels)
}

fn pairs(n: u64) -> i128 {
    i128::from(n) * (i128::from(n) - 1) / 2
}

/// Hubert–Arabie adjusted Rand index, computed from exact pair counts.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::input(format!(
            "partitions have different lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::input("need at least two items"));
    }
    let mut joint: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: i128 = joint.values().map(|&c| pairs(c)).sum();
    let sa: i128 = rows.values().map(|&c| pairs(c)).sum();
    let sb: i128 = cols.values().map(|&c| pairs(c)).sum();
    let total = pairs(a.len() as u64);
    // ARI = (I − AB/T) / ((A+B)/2 − AB/T), scaled by 2T
    let num = 2 * (index * total - sa * sb);
    let den = (sa + sb) * total - 2 * sa * sb;
    if den == 0 {
        // both partitions trivial (all one cluster or all singletons)
        return Ok(if num == 0 && sa == sb { 1.0 } else { 0.0 });
    }
    Ok(num as f64 / den as f64)
}

/// `|γᵀγ̂|` for unit vectors.
pub fn projection_alignment(gamma: &[f64], gamma_hat: &[f64]) -> Result<f64> {
    if gamma.len() != gamma_hat.len() {
        return Err(Error::Dimension(format!(
            "projection lengths differ: {} vs {}",
            gamma.len(),
            gamma_hat.len()
        )));
    }
    Ok(gamma.iter().zip(gamma_hat).map(|(a, b)| a * b).sum::<f64>().abs())
}

/// Mean of `p + 1 − rank` over the true changing series, where rank 1 is
/// the largest `|γ̂_i|` and ties go to the lower index. Larger is better;
/// the best value is `p − (|𝕊| − 1)/2`.
pub fn cp_series_rank(gamma_hat: &[f64], true_series: &[usize]) -> Result<f64> {
    if true_series.is_empty() {
        return Err(Error::input("true changing-series set is empty"));
    }
    let p = gamma_hat.len();
    if let Some(&i) = true_series.iter().find(|&&i| i >= p) {
        return Err(Error::Dimension(format!("series {i} out of range for p = {p}")));
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| gamma_hat[j].abs().total_cmp(&gamma_hat[i].abs()).then(i.cmp(&j)));
    let mut rank = vec![0usize; p];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }
    let total: usize = true_series.iter().map(|&i| p + 1 - rank[i]).sum();
    Ok(total as f64 / true_series.len() as f64)
}

/// Best achievable [`cp_series_rank`] for `k0` true series among `p`.
pub fn best_cp_series_rank(p: usize, k0: usize) -> f64 {
    p as f64 - (k0 as f64 - 1.0) / 2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n: usize,
    pub q_true: usize,
    pub q_hat: usize,
    pub count_correct: bool,
    pub ari: f64,
    pub true_blocks: Vec<usize>,
    pub estimated_blocks: Vec<usize>,
    /// For each true change block, the distance to the nearest estimate
    /// (absent when nothing was detected).
    pub block_errors: Vec<Option<usize>>,
    /// Mean over active frequencies of `|γᵀγ̂|` at the detected change
    /// closest to the first true change, when the truth carries `γ`.
    pub alignment: Option<f64>,
    /// Mean CP-series rank score over those frequencies.
    pub cp_series_rank: Option<f64>,
}

/// Compares a report with the truth it was simulated from.
pub fn evaluate(report: &DetectionReport, truth: &GroundTruth) -> Result<Evaluation> {
    let n = match report.series_length {
        Some(n) if n != truth.n => {
            return Err(Error::input(format!(
                "report covers N = {n} but the truth has N = {}",
                truth.n
            )))
        }
        _ => truth.n,
    };
    if report.p != truth.p {
        return Err(Error::input(format!(
            "report has p = {} but the truth has p = {}",
            report.p, truth.p
        )));
    }
    let times = report.time_indices();
    let est = segments_from_cps(&times, n)?;
    let tru = segments_from_cps(&truth.cp_times, n)?;
    let ari = adjusted_rand_index(&est, &tru)?;
    let estimated_blocks = report.block_indices();
    let true_blocks: Vec<usize> = truth
        .cp_times
        .iter()
        .map(|t| (t - 1).div_ceil(report.block_length))
        .collect();
    let block_errors = true_blocks
        .iter()
        .map(|&b| estimated_blocks.iter().map(|&e| e.abs_diff(b)).min())
        .collect();

    let (mut alignment, mut rank) = (None, None);
    if let (Some(gamma), Some(&first)) = (&truth.gamma, true_blocks.first()) {
        if let Some(cp) = report
            .change_points
            .iter()
            .min_by_key(|c| c.block_index.abs_diff(first))
        {
            let mut al = Vec::new();
            let mut rk = Vec::new();
            for af in &cp.active_frequencies {
                let mut g = vec![0.0; report.p];
                af.projection.iter().for_each(|&(i, w)| g[i] = w);
                al.push(projection_alignment(gamma, &g)?);
                rk.push(cp_series_rank(&g, &truth.cp_series)?);
            }
            if !al.is_empty() {
                alignment = Some(al.iter().sum::<f64>() / al.len() as f64);
                rank = Some(rk.iter().sum::<f64>() / rk.len() as f64);
            }
        }
    }
    Ok(Evaluation {
        n,
        q_true: truth.cp_times.len(),
        q_hat: times.len(),
        count_correct: times.len() == truth.cp_times.len(),
        ari,
        true_blocks,
        estimated_blocks,
        block_errors,
        alignment,
        cp_series_rank: rank,
    })
}
