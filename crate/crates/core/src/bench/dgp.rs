// SPDX-License-Identifier: MIT OR Apache-2.0

//! Simulation designs: piecewise VMA(1) and VAR(2) processes with a sparse
//! set of changing series, and a factor process switched on half way.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ingest::SeriesMatrix;
use crate::rng::{substream, tag, StreamRng};
use crate::tune::{MIN_BLOCK_LENGTH, PREFERRED_BLOCK_LENGTH};
use crate::{Error, Result};

/// Off-diagonal innovation correlation used by every design.
pub const INNOVATION_RHO: f64 = 0.2;
/// Samples discarded before each VAR(2) segment.
pub const VAR_BURN_IN: usize = 200;
/// Variance of the idiosyncratic noise in the factor design.
pub const FACTOR_NOISE_VARIANCE: f64 = 0.2;

const VMA_PHI: f64 = 0.6;
const VAR_PSI1: f64 = 0.1;
const VAR_PSI2: f64 = 0.4;
const VAR_PSI2_CHANGED: f64 = -0.7;
const FACTOR_MA: f64 = -0.6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DgpKind {
    Dgp1,
    Dgp2,
    Factor,
    White,
}

impl std::str::FromStr for DgpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dgp1" | "vma" | "vma1" => Ok(Self::Dgp1),
            "dgp2" | "var" | "var2" => Ok(Self::Dgp2),
            "factor" => Ok(Self::Factor),
            "white" | "noise" => Ok(Self::White),
            other => Err(Error::config(format!("unknown DGP {other:?}"))),
        }
    }
}

/// Sampler for `N(0, Σ)` with `Σ_ii = 1`, `Σ_ij = ρ`, using the symmetric
/// square root `√(1−ρ) I + c 11ᵀ`, `c = (√(1−ρ+ρp) − √(1−ρ))/p`.
#[derive(Clone, Copy, Debug)]
pub struct Equicorrelated {
    p: usize,
    a: f64,
    c: f64,
}

impl Equicorrelated {
    pub fn new(p: usize, rho: f64) -> Result<Self> {
        if p == 0 {
            return Err(Error::config("need p >= 1"));
        }
        let lower = if p > 1 { -1.0 / (p - 1) as f64 } else { -1.0 };
        if !(rho > lower && rho < 1.0) {
            return Err(Error::config(format!(
                "equicorrelation rho = {rho} outside ({lower}, 1) for p = {p}"
            )));
        }
        let a = (1.0 - rho).sqrt();
        let c = ((1.0 - rho + rho * p as f64).sqrt() - a) / p as f64;
        Ok(Self { p, a, c })
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    /// Writes one draw into `out` (length `p`).
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let mut sum = 0.0;
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
            sum += *v;
        }
        let shift = self.c * sum;
        out.iter_mut().for_each(|v| *v = self.a * *v + shift);
    }
}

/// `n_draws` draws, draw-major (`out[t * p + i]` is series `i` of draw `t`).
pub fn mvn_equicorrelated<R: Rng + ?Sized>(
    p: usize,
    rho: f64,
    n_draws: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let sampler = Equicorrelated::new(p, rho)?;
    let mut out = vec![0.0; p * n_draws];
    for chunk in out.chunks_exact_mut(p) {
        sampler.draw(rng, chunk);
    }
    Ok(out)
}

/// Known truth of a simulated data set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub dgp: DgpKind,
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub k0: usize,
    /// First time point (1-based) of each new segment.
    pub cp_times: Vec<usize>,
    /// Block length used for `cp_blocks`.
    pub block_length: usize,
    /// `⌈(t − 1)/L⌉`: the block containing the last pre-change time point.
    pub cp_blocks: Vec<usize>,
    /// Changing series, 0-based.
    pub cp_series: Vec<usize>,
    /// Per segment, the diagonal of the switching coefficient matrix
    /// (`Φ` for DGP1, `Ψ₂` for DGP2); empty for other designs.
    pub segment_coefficients: Vec<Vec<f64>>,
    /// Loading vector of the factor design.
    pub gamma: Option<Vec<f64>>,
}

impl GroundTruth {
    pub fn n_change_points(&self) -> usize {
        self.cp_times.len()
    }

    /// Recomputes `cp_blocks` for another block length.
    pub fn with_block_length(mut self, block_length: usize) -> Result<Self> {
        if block_length == 0 {
            return Err(Error::config("block length must be positive"));
        }
        self.block_length = block_length;
        self.cp_blocks = change_blocks(&self.cp_times, block_length);
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string_pretty(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn change_blocks(cp_times: &[usize], block_length: usize) -> Vec<usize> {
    cp_times.iter().map(|t| (t - 1).div_ceil(block_length)).collect()
}

fn default_block_length(n: usize) -> usize {
    PREFERRED_BLOCK_LENGTH.min((n / 4).max(2))
}

/// `⌊qN/(Q+1)⌋ + 1` for `q = 1..Q`.
pub fn equally_spaced_changes(n: usize, q: usize) -> Vec<usize> {
    (1..=q).map(|i| i * n / (q + 1) + 1).collect()
}

/// `⌈(i − ½)p/k0⌉` for `i = 1..k0`, returned 0-based.
pub fn spread_series(p: usize, k0: usize) -> Vec<usize> {
    (1..=k0).map(|i| ((2 * i - 1) * p).div_ceil(2 * k0) - 1).collect()
}

fn check_design(n: usize, p: usize, k0: usize, q: usize) -> Result<()> {
    if p == 0 {
        return Err(Error::config("need p >= 1"));
    }
    if k0 > p {
        return Err(Error::config(format!("k0 = {k0} exceeds p = {p}")));
    }
    let need = (q + 1) * 4 * MIN_BLOCK_LENGTH;
    if n < need {
        return Err(Error::config(format!(
            "N = {n} too short for {q} change points: need N >= {need}"
        )));
    }
    Ok(())
}

/// Substream for segment `q` (0-based) of a simulation with `seed`.
pub fn segment_rng(seed: u64, q: usize) -> StreamRng {
    substream(seed, &[tag::SEGMENT, q as u64])
}

fn segment_bounds(n: usize, cp_times: &[usize]) -> Vec<(usize, usize)> {
    let mut starts = vec![0];
    starts.extend(cp_times.iter().map(|t| t - 1));
    starts
        .iter()
        .enumerate()
        .map(|(i, &a)| (a, starts.get(i + 1).copied().unwrap_or(n)))
        .collect()
}

/// Diagonals of the two alternating coefficient matrices: segment `q`
/// (0-based) uses `first` when `q` is even.
fn alternating(p: usize, series: &[usize], base: f64, changed: f64, segments: usize) -> Vec<Vec<f64>> {
    let first = vec![base; p];
    let mut second = first.clone();
    series.iter().for_each(|&i| second[i] = changed);
    (0..segments)
        .map(|q| if q % 2 == 0 { first.clone() } else { second.clone() })
        .collect()
}

/// One VMA(1) segment `X_n = ε_n + diag(φ) ε_{n−1}` of length `len`,
/// time-major.
pub fn vma1_segment<R: Rng + ?Sized>(phi: &[f64], len: usize, rng: &mut R) -> Result<Vec<f64>> {
    let p = phi.len();
    let sampler = Equicorrelated::new(p, INNOVATION_RHO)?;
    let mut prev = vec![0.0; p];
    sampler.draw(rng, &mut prev);
    let mut cur = vec![0.0; p];
    let mut out = Vec::with_capacity(p * len);
    for _ in 0..len {
        sampler.draw(rng, &mut cur);
        out.extend((0..p).map(|i| cur[i] + phi[i] * prev[i]));
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(out)
}

/// One VAR(2) segment `X_n = ε_n + ψ₁ X_{n−1} + diag(ψ₂) X_{n−2}` after
/// [`VAR_BURN_IN`] discarded steps from a zero start, time-major.
pub fn var2_segment<R: Rng + ?Sized>(psi1: f64, psi2: &[f64], len: usize, rng: &mut R) -> Result<Vec<f64>> {
    let p = psi2.len();
    let sampler = Equicorrelated::new(p, INNOVATION_RHO)?;
    let mut x1 = vec![0.0; p];
    let mut x2 = vec![0.0; p];
    let mut eps = vec![0.0; p];
    let mut out = Vec::with_capacity(p * len);
    for step in 0..VAR_BURN_IN + len {
        sampler.draw(rng, &mut eps);
        for i in 0..p {
            let x = eps[i] + psi1 * x1[i] + psi2[i] * x2[i];
            x2[i] = x1[i];
            x1[i] = x;
        }
        if step >= VAR_BURN_IN {
            out.extend_from_slice(&x1);
        }
    }
    Ok(out)
}

fn assemble(p: usize, n: usize, time_major: &[f64]) -> Result<SeriesMatrix> {
    let mut values = vec![0.0; p * n];
    for (t, row) in time_major.chunks_exact(p).enumerate() {
        for (i, v) in row.iter().enumerate() {
            values[i * n + t] = *v;
        }
    }
    SeriesMatrix::new(p, n, values)
}

fn piecewise(
    kind: DgpKind,
    n: usize,
    p: usize,
    k0: usize,
    q: usize,
    seed: u64,
) -> Result<(SeriesMatrix, GroundTruth)> {
    check_design(n, p, k0, q)?;
    let cp_times = equally_spaced_changes(n, q);
    let cp_series = spread_series(p, k0);
    let coefficients = match kind {
        DgpKind::Dgp1 => alternating(p, &cp_series, VMA_PHI, -VMA_PHI, q + 1),
        _ => alternating(p, &cp_series, VAR_PSI2, VAR_PSI2_CHANGED, q + 1),
    };
    let mut data = Vec::with_capacity(p * n);
    for (seg, (a, b)) in segment_bounds(n, &cp_times).into_iter().enumerate() {
        let mut rng = segment_rng(seed, seg);
        let part = match kind {
            DgpKind::Dgp1 => vma1_segment(&coefficients[seg], b - a, &mut rng)?,
            _ => var2_segment(VAR_PSI1, &coefficients[seg], b - a, &mut rng)?,
        };
        data.extend(part);
    }
    let block_length = default_block_length(n);
    let truth = GroundTruth {
        dgp: kind,
        seed,
        n,
        p,
        k0,
        cp_blocks: change_blocks(&cp_times, block_length),
        cp_times,
        block_length,
        cp_series,
        segment_coefficients: coefficients,
        gamma: None,
    };
    Ok((assemble(p, n, &data)?, truth))
}

/// Piecewise VMA(1) with `Q` equally spaced changes; `Φ` alternates between
/// `0.6 I` and the same matrix with `−0.6` on the `k0` changing series.
/// Each segment restarts its innovations from [`segment_rng`].
pub fn simulate_dgp1(
    n: usize,
    p: usize,
    k0: usize,
    q: usize,
    seed: u64,
) -> Result<(SeriesMatrix, GroundTruth)> {
    piecewise(DgpKind::Dgp1, n, p, k0, q, seed)
}

/// Piecewise VAR(2) with `Ψ₁ = 0.1 I` and `Ψ₂` alternating between `0.4 I`
/// and the same matrix with `−0.7` on the changing series.
pub fn simulate_dgp2(
    n: usize,
    p: usize,
    k0: usize,
    q: usize,
    seed: u64,
) -> Result<(SeriesMatrix, GroundTruth)> {
    piecewise(DgpKind::Dgp2, n, p, k0, q, seed)
}

/// Change time of the factor design: `3241` for `N = 6400`, scaled
/// proportionally otherwise.
pub fn factor_change_time(n: usize) -> usize {
    n * 81 / 160 + 1
}

/// `X = Y` before the change and `Y + γW + ε'` from it on, where `Y` is
/// VMA(1) with `0.6 I`, `W` is a scalar MA(1) with coefficient `−0.6`,
/// `ε' ~ N(0, 0.2 I)`, and `γ` has `k0` entries `1/√k0`.
pub fn simulate_factor(n: usize, p: usize, k0: usize, seed: u64) -> Result<(SeriesMatrix, GroundTruth)> {
    check_design(n, p, k0, 1)?;
    if k0 == 0 {
        return Err(Error::config("factor design needs k0 >= 1"));
    }
    let t = factor_change_time(n);
    let cp_series = spread_series(p, k0);
    let mut gamma = vec![0.0; p];
    let w = 1.0 / (k0 as f64).sqrt();
    cp_series.iter().for_each(|&i| gamma[i] = w);

    let mut data = vma1_segment(&vec![VMA_PHI; p], n, &mut segment_rng(seed, 0))?;
    let mut rng = substream(seed, &[tag::FACTOR]);
    let sd = FACTOR_NOISE_VARIANCE.sqrt();
    let mut z_prev: f64 = rng.sample(StandardNormal);
    for row in data.chunks_exact_mut(p).skip(t - 1) {
        let z: f64 = rng.sample(StandardNormal);
        let wn = z + FACTOR_MA * z_prev;
        z_prev = z;
        for (i, v) in row.iter_mut().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            *v += gamma[i] * wn + sd * e;
        }
    }
    let block_length = default_block_length(n);
    let truth = GroundTruth {
        dgp: DgpKind::Factor,
        seed,
        n,
        p,
        k0,
        cp_times: vec![t],
        block_length,
        cp_blocks: change_blocks(&[t], block_length),
        cp_series,
        segment_coefficients: Vec::new(),
        gamma: Some(gamma),
    };
    Ok((assemble(p, n, &data)?, truth))
}

/// I.i.d. standard normal series with no change.
pub fn simulate_white(n: usize, p: usize, seed: u64) -> Result<(SeriesMatrix, GroundTruth)> {
    if p == 0 || n < 2 {
        return Err(Error::config("need p >= 1 and N >= 2"));
    }
    let mut rng = segment_rng(seed, 0);
    let values = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
    let block_length = default_block_length(n);
    let truth = GroundTruth {
        dgp: DgpKind::White,
        seed,
        n,
        p,
        k0: 0,
        cp_times: Vec::new(),
        block_length,
        cp_blocks: Vec::new(),
        cp_series: Vec::new(),
        segment_coefficients: Vec::new(),
        gamma: None,
    };
    Ok((SeriesMatrix::new(p, n, values)?, truth))
}

/// Dispatches on `kind`; `q` is ignored by the factor and white designs.
pub fn simulate(
    kind: DgpKind,
    n: usize,
    p: usize,
    k0: usize,
    q: usize,
    seed: u64,
) -> Result<(SeriesMatrix, GroundTruth)> {
    match kind {
        DgpKind::Dgp1 => simulate_dgp1(n, p, k0, q, seed),
        DgpKind::Dgp2 => simulate_dgp2(n, p, k0, q, seed),
        DgpKind::Factor => simulate_factor(n, p, k0, seed),
        DgpKind::White => simulate_white(n, p, seed),
    }
}
