// SPDX-License-Identifier: MIT OR Apache-2.0

//! Frequency-specific projection, thresholded aggregation across
//! frequencies, and wild binary segmentation over blocks.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cusum::cusum_vector;
use crate::rng::{derive_seed, substream, tag};
use crate::sparse_decomp::{
    decompose, init_projection, random_sparse_unit, DecompSettings, ImplicitCusum, ProjectionVector,
};
use crate::spectral::{frequency_split, SliceStack, SpectralTensor};
use crate::{Error, Result};

/// Projected scales below this are treated as "no spectrum" and the
/// frequency is left out of the aggregate.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Block interval `[s, e]`, `1 ≤ s < e`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub s: usize,
    pub e: usize,
}

impl Interval {
    pub fn new(s: usize, e: usize) -> Result<Self> {
        if s < 1 || s >= e {
            return Err(Error::Interval(format!("need 1 <= s < e, got [{s}, {e}]")));
        }
        Ok(Self { s, e })
    }

    pub fn len(&self) -> usize {
        self.e - self.s + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, other: &Interval) -> bool {
        self.s <= other.s && other.e <= self.e
    }

    /// Split points `u ∈ [s + ν₂, min(e − ν₂, e − 1)]`.
    pub fn admissible(&self, nu2: usize) -> std::ops::RangeInclusive<usize> {
        (self.s + nu2)..=(self.e.saturating_sub(nu2)).min(self.e - 1)
    }
}

/// Projected block spectra `F*_b = γᵀ Re(f̂_b) γ` over all `B` blocks and
/// their CUSUM `T*` on `[s, e]` (offset `b − s`).
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedSeries {
    pub interval: Interval,
    pub f_star: Vec<f64>,
    pub t_star: Vec<f64>,
    pub gamma: ProjectionVector,
}

impl ProjectedSeries {
    /// `σ̂`: mean of `F*` over the interval.
    pub fn sigma(&self) -> f64 {
        let Interval { s, e } = self.interval;
        self.f_star[s - 1..e].iter().sum::<f64>() / (e - s + 1) as f64
    }

    /// `|T*_b| / σ̂`, or zeros when `σ̂` is below [`SIGMA_FLOOR`].
    pub fn scaled_cusum(&self) -> Vec<f64> {
        let sigma = self.sigma();
        if !(sigma >= SIGMA_FLOOR) {
            return vec![0.0; self.t_star.len()];
        }
        self.t_star.iter().map(|t| t.abs() / sigma).collect()
    }
}

pub fn project_spectra(
    stack: &SliceStack,
    gamma: &ProjectionVector,
    s: usize,
    e: usize,
) -> Result<ProjectedSeries> {
    let interval = Interval::new(s, e)?;
    if gamma.dim() != stack.p() {
        return Err(Error::shape(format!(
            "projection has dimension {}, spectra have p = {}",
            gamma.dim(),
            stack.p()
        )));
    }
    if e > stack.n_blocks() {
        return Err(Error::Interval(format!(
            "e = {e} exceeds B = {}",
            stack.n_blocks()
        )));
    }
    let support = gamma.support();
    let g = gamma.values();
    let f_star: Vec<f64> = (0..stack.n_blocks())
        .map(|b| stack.quad_form(b, g, &support))
        .collect();
    if !stack.is_rank_one() {
        for (b, f) in f_star.iter().enumerate() {
            let im = stack.imag_quad_form(b, g);
            if im.abs() > 1e-8 * (1.0 + f.abs()) {
                return Err(Error::input(format!(
                    "slice {} is not Hermitian: γᵀ Im(f̂) γ = {im}",
                    b + 1
                )));
            }
        }
    }
    let t_star = cusum_vector(&f_star[s - 1..e])?;
    Ok(ProjectedSeries {
        interval,
        f_star,
        t_star,
        gamma: gamma.clone(),
    })
}

/// Estimates the direction on the CUSUM of `partner` over `[s, e]` and
/// projects `work` with it.
pub fn independent_projection<R: Rng + ?Sized>(
    work: &SliceStack,
    partner: &SliceStack,
    s: usize,
    e: usize,
    settings: &DecompSettings,
    rng: &mut R,
) -> Result<ProjectedSeries> {
    if work.p() != partner.p() || work.n_blocks() != partner.n_blocks() {
        return Err(Error::shape("work and partner spectra differ in p or B"));
    }
    let gamma = estimate_direction(partner, s, e, settings, rng)?;
    project_spectra(work, &gamma, s, e)
}

fn estimate_direction<R: Rng + ?Sized>(
    stack: &SliceStack,
    s: usize,
    e: usize,
    settings: &DecompSettings,
    rng: &mut R,
) -> Result<ProjectionVector> {
    let p = stack.p();
    if p == 1 {
        return Ok(ProjectionVector::unit_scalar());
    }
    let op = ImplicitCusum::new(stack, s, e)?;
    let init = match init_projection(&op, settings.k, settings, rng) {
        Ok(v) => v,
        Err(Error::Degenerate(_)) => random_sparse_unit(p, settings.k, rng),
        Err(err) => return Err(err),
    };
    decompose(&op, settings, &init, rng)
}

/// `𝔠_b = Σ_l (|T*_b(ω_l)|/σ̂_l) · 1(|T*_b(ω_l)|/σ̂_l > τ)`.
pub fn aggregate_thresholded(projected: &[ProjectedSeries], tau: f64) -> Result<Vec<f64>> {
    let terms: Vec<Vec<f64>> = projected.iter().map(ProjectedSeries::scaled_cusum).collect();
    let first = projected
        .first()
        .ok_or_else(|| Error::input("no projected series to aggregate"))?;
    if projected.iter().any(|p| p.interval != first.interval) {
        return Err(Error::input("projected series cover different intervals"));
    }
    aggregate_terms(&terms, tau)
}

fn aggregate_terms(terms: &[Vec<f64>], tau: f64) -> Result<Vec<f64>> {
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::config(format!("threshold must be >= 0, got {tau}")));
    }
    let len = terms.first().map_or(0, Vec::len);
    let mut out = vec![0.0; len];
    for row in terms {
        for (acc, &t) in out.iter_mut().zip(row) {
            if t > tau {
                *acc += t;
            }
        }
    }
    Ok(out)
}

/// `J` intervals drawn i.i.d. uniformly from `{(s, e) : 1 ≤ s < e ≤ B}`.
pub fn sample_intervals<R: Rng + ?Sized>(
    n_blocks: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Interval>> {
    if n_blocks < 2 {
        return Err(Error::config(format!("need B >= 2, got {n_blocks}")));
    }
    let pairs = n_blocks * (n_blocks - 1) / 2;
    Ok((0..count)
        .map(|_| {
            // index into the strict upper triangle, row by row
            let mut idx = rng.random_range(0..pairs);
            let mut s = 1;
            let mut row = n_blocks - 1;
            while idx >= row {
                idx -= row;
                s += 1;
                row -= 1;
            }
            Interval { s, e: s + 1 + idx }
        })
        .collect())
}

/// How the threshold `τ` enters the aggregate statistic and the decision.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdRule {
    /// Every frequency enters `𝔠` (the `τ = 0` sum) and a split is accepted
    /// when `𝔠 > τ`. Frequencies whose scaled CUSUM exceeds `τ/m`, with `m`
    /// the number of frequencies, are reported as active; at least one
    /// always does when `𝔠 > τ`.
    #[default]
    Aggregate,
    /// Each frequency enters `𝔠` only when its scaled CUSUM exceeds `τ`,
    /// and a split is accepted when `𝔠 > 0`.
    PerTerm,
}

impl std::str::FromStr for ThresholdRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "aggregate" => Ok(Self::Aggregate),
            "per-term" | "per_term" => Ok(Self::PerTerm),
            other => Err(Error::config(format!("unknown threshold rule {other:?}"))),
        }
    }
}

impl std::fmt::Display for ThresholdRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Aggregate => "aggregate",
            Self::PerTerm => "per-term",
        })
    }
}

/// Parameters of one detection run on a fixed spectral tensor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectParams {
    pub k: usize,
    pub n_intervals: usize,
    pub tau: f64,
    pub nu1: usize,
    pub nu2: usize,
    pub split: bool,
    pub seed: u64,
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub rule: ThresholdRule,
}

impl DetectParams {
    pub fn new(k: usize, tau: f64, seed: u64) -> Self {
        let d = DecompSettings::default();
        Self {
            k,
            n_intervals: 0,
            tau,
            nu1: 0,
            nu2: 0,
            split: true,
            seed,
            tol: d.tol,
            max_outer: d.max_outer,
            max_inner: d.max_inner,
            rule: ThresholdRule::default(),
        }
    }

    pub fn decomp_settings(&self) -> DecompSettings {
        DecompSettings {
            k: self.k,
            nu1: self.nu1,
            max_outer: self.max_outer,
            max_inner: self.max_inner,
            tol: self.tol,
        }
    }

    /// Threshold applied to each frequency's scaled CUSUM inside `𝔠`.
    pub fn term_threshold(&self) -> f64 {
        match self.rule {
            ThresholdRule::Aggregate => 0.0,
            ThresholdRule::PerTerm => self.tau,
        }
    }

    /// `𝔠` must exceed this for a split to be accepted.
    pub fn accept_threshold(&self) -> f64 {
        match self.rule {
            ThresholdRule::Aggregate => self.tau,
            ThresholdRule::PerTerm => 0.0,
        }
    }

    /// Scaled CUSUM above which a frequency is reported as active, given
    /// `m` scanned frequencies.
    pub fn active_threshold(&self, m: usize) -> f64 {
        match self.rule {
            ThresholdRule::Aggregate => self.tau / m.max(1) as f64,
            ThresholdRule::PerTerm => self.tau,
        }
    }

    pub fn validate(&self, tensor: &SpectralTensor) -> Result<()> {
        let b = tensor.n_blocks();
        if b < 2 * self.nu2 + 2 {
            return Err(Error::config(format!(
                "need B >= 2 nu2 + 2, got B = {b}, nu2 = {}",
                self.nu2
            )));
        }
        if self.tau.is_nan() || self.tau < 0.0 {
            return Err(Error::config(format!("threshold must be >= 0, got {}", self.tau)));
        }
        if self.split && tensor.grid().len() < 2 {
            return Err(Error::config("frequency splitting needs at least 2 frequencies"));
        }
        self.decomp_settings().validate(tensor.p())
    }
}

/// `(work, partner)` Fourier index pairs for the given split flag.
pub fn frequency_pairs(tensor: &SpectralTensor, split: bool) -> Result<Vec<(usize, usize)>> {
    if split {
        frequency_split(tensor.grid())
    } else {
        Ok(tensor.grid().indices().map(|l| (l, l)).collect())
    }
}

/// Per-frequency result on one interval.
#[derive(Clone, Debug)]
struct FrequencyScan {
    gamma: ProjectionVector,
    terms: Vec<f64>,
}

/// All frequencies on one interval plus the τ-thresholded aggregate.
#[derive(Clone, Debug)]
pub struct IntervalScan {
    pub interval: Interval,
    freqs: Vec<FrequencyScan>,
    /// `𝔠_{s,b,e}` at offset `b − s`.
    pub statistic: Vec<f64>,
}

impl IntervalScan {
    /// Scaled per-frequency CUSUM `|T*|/σ̂`, one row per work frequency.
    pub fn terms(&self) -> impl Iterator<Item = &[f64]> {
        self.freqs.iter().map(|f| f.terms.as_slice())
    }
}

/// Projects every work frequency on `[s, e]` and aggregates. The
/// decomposition for work index `l` draws from substream
/// `(base_seed; s, e, l)`.
pub fn scan_interval(
    tensor: &SpectralTensor,
    pairs: &[(usize, usize)],
    interval: Interval,
    tau: f64,
    settings: &DecompSettings,
    base_seed: u64,
) -> Result<IntervalScan> {
    let freqs = pairs
        .par_iter()
        .map(|&(w, partner)| scan_frequency(tensor, w, partner, interval, settings, base_seed))
        .collect::<Result<Vec<_>>>()?;
    finish_scan(interval, freqs, tau)
}

fn scan_frequency(
    tensor: &SpectralTensor,
    work: usize,
    partner: usize,
    interval: Interval,
    settings: &DecompSettings,
    base_seed: u64,
) -> Result<FrequencyScan> {
    let mut rng = substream(base_seed, &[interval.s as u64, interval.e as u64, work as u64]);
    let proj = independent_projection(
        tensor.stack(work),
        tensor.stack(partner),
        interval.s,
        interval.e,
        settings,
        &mut rng,
    )?;
    Ok(FrequencyScan {
        terms: proj.scaled_cusum(),
        gamma: proj.gamma,
    })
}

fn finish_scan(interval: Interval, freqs: Vec<FrequencyScan>, tau: f64) -> Result<IntervalScan> {
    let terms: Vec<Vec<f64>> = freqs.iter().map(|f| f.terms.clone()).collect();
    let statistic = aggregate_terms(&terms, tau)?;
    Ok(IntervalScan {
        interval,
        freqs,
        statistic,
    })
}

/// A frequency whose scaled CUSUM exceeded the threshold at a change point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActiveFrequency {
    /// Fourier index `l` (1-based) of the work frequency.
    pub index: usize,
    pub omega: f64,
    /// `|T*|/σ̂` at the change point.
    pub scaled_cusum: f64,
    /// Nonzero `(series, weight)` entries of the projection, series 0-based.
    pub projection: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangePoint {
    /// `û`: the change separates blocks `≤ û` from blocks `> û`.
    pub block_index: usize,
    /// `t̂ = L·û + 1`, the first time point (1-based) after the change.
    pub time_index: usize,
    pub source_interval: Interval,
    pub statistic: f64,
    pub active_frequencies: Vec<ActiveFrequency>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub p: usize,
    pub n_blocks: usize,
    pub block_length: usize,
    /// Length `N` of the analysed series, when known.
    pub series_length: Option<usize>,
    pub k: usize,
    pub n_intervals: usize,
    pub tau: f64,
    pub nu2: usize,
    pub split: bool,
    pub rule: ThresholdRule,
    pub seed: u64,
    pub n_change_points: usize,
    pub change_points: Vec<ChangePoint>,
}

impl DetectionReport {
    pub fn block_indices(&self) -> Vec<usize> {
        self.change_points.iter().map(|c| c.block_index).collect()
    }

    pub fn time_indices(&self) -> Vec<usize> {
        self.change_points.iter().map(|c| c.time_index).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string_pretty(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Heatmap matrix for change point `i`: one row per active frequency,
    /// one column per series, cell `|γ̂|`.
    pub fn heatmap(&self, i: usize) -> Vec<(usize, f64, Vec<f64>)> {
        self.change_points[i]
            .active_frequencies
            .iter()
            .map(|af| {
                let mut row = vec![0.0; self.p];
                for &(j, w) in &af.projection {
                    row[j] = w.abs();
                }
                (af.index, af.omega, row)
            })
            .collect()
    }

    /// Writes `heatmap_cp<q>.csv` (1-based `q`) for every change point with
    /// header `freq_index,omega,s1,…,sp`.
    pub fn write_heatmaps(&self, dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
        let dir = dir.as_ref();
        let mut written = Vec::new();
        for q in 0..self.change_points.len() {
            let path = dir.join(format!("heatmap_cp{}.csv", q + 1));
            let mut text = String::from("freq_index,omega");
            for j in 1..=self.p {
                text.push_str(&format!(",s{j}"));
            }
            text.push('\n');
            for (l, omega, row) in self.heatmap(q) {
                text.push_str(&format!("{l},{omega:.16e}"));
                for v in row {
                    text.push_str(&format!(",{v:.16e}"));
                }
                text.push('\n');
            }
            let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

struct Segmenter<'a> {
    tensor: &'a SpectralTensor,
    params: &'a DetectParams,
    settings: DecompSettings,
    pairs: Vec<(usize, usize)>,
    wild: Vec<Interval>,
    cache: HashMap<Interval, IntervalScan>,
    base_seed: u64,
    found: Vec<ChangePoint>,
}

impl Segmenter<'_> {
    fn ensure_scans(&mut self, intervals: &[Interval]) -> Result<()> {
        let mut missing: Vec<Interval> = Vec::new();
        for iv in intervals {
            if !self.cache.contains_key(iv) && !missing.contains(iv) {
                missing.push(*iv);
            }
        }
        if missing.is_empty() {
            return Ok(());
        }
        let tasks: Vec<(Interval, usize, usize)> = missing
            .iter()
            .flat_map(|iv| self.pairs.iter().map(move |&(w, p)| (*iv, w, p)))
            .collect();
        let (tensor, settings, base) = (self.tensor, &self.settings, self.base_seed);
        let mut results = tasks
            .par_iter()
            .map(|&(iv, w, p)| scan_frequency(tensor, w, p, iv, settings, base))
            .collect::<Result<Vec<_>>>()?
            .into_iter();
        for iv in missing {
            let freqs: Vec<FrequencyScan> = results.by_ref().take(self.pairs.len()).collect();
            self.cache
                .insert(iv, finish_scan(iv, freqs, self.params.term_threshold())?);
        }
        Ok(())
    }

    fn spec_cp(&mut self, whole: Interval) -> Result<()> {
        let nu2 = self.params.nu2;
        if whole.admissible(nu2).is_empty() {
            return Ok(());
        }
        let mut candidates = vec![whole];
        candidates.extend(
            self.wild
                .iter()
                .filter(|iv| whole.contains(iv) && iv.len() > 2 * nu2 && !iv.admissible(nu2).is_empty()),
        );
        self.ensure_scans(&candidates)?;

        let mut best: Option<(Interval, usize, f64)> = None;
        for iv in &candidates {
            let scan = &self.cache[iv];
            for u in iv.admissible(nu2) {
                let value = scan.statistic[u - iv.s];
                if best.is_none_or(|(_, _, b)| value > b) {
                    best = Some((*iv, u, value));
                }
            }
        }
        let Some((source, u, value)) = best else {
            return Ok(());
        };
        if !(value > self.params.accept_threshold()) {
            return Ok(());
        }

        let scan = &self.cache[&source];
        let grid = self.tensor.grid();
        let active_tau = self.params.active_threshold(self.pairs.len());
        let active_frequencies = self
            .pairs
            .iter()
            .zip(&scan.freqs)
            .filter(|(_, f)| f.terms[u - source.s] > active_tau)
            .map(|(&(l, _), f)| ActiveFrequency {
                index: l,
                omega: grid.omega(l),
                scaled_cusum: f.terms[u - source.s],
                projection: f.gamma.sparse_entries(),
            })
            .collect();
        self.found.push(ChangePoint {
            block_index: u,
            time_index: grid.block_length() * u + 1,
            source_interval: source,
            statistic: value,
            active_frequencies,
        });

        self.spec_cp(Interval { s: whole.s, e: u })?;
        if u + 1 < whole.e {
            self.spec_cp(Interval { s: u + 1, e: whole.e })?;
        }
        Ok(())
    }
}

/// Wild sparsified binary segmentation on `[1, B]`.
pub fn detect_changepoints(tensor: &SpectralTensor, params: &DetectParams) -> Result<DetectionReport> {
    params.validate(tensor)?;
    let b = tensor.n_blocks();
    let mut interval_rng = substream(params.seed, &[tag::INTERVALS]);
    let wild = sample_intervals(b, params.n_intervals, &mut interval_rng)?;
    let mut seg = Segmenter {
        tensor,
        params,
        settings: params.decomp_settings(),
        pairs: frequency_pairs(tensor, params.split)?,
        wild,
        cache: HashMap::new(),
        base_seed: derive_seed(params.seed, &[tag::DECOMP_INIT]),
        found: Vec::new(),
    };
    seg.spec_cp(Interval { s: 1, e: b })?;
    let mut change_points = seg.found;
    change_points.sort_by_key(|c| c.block_index);
    Ok(DetectionReport {
        p: tensor.p(),
        n_blocks: b,
        block_length: tensor.grid().block_length(),
        series_length: None,
        k: params.k,
        n_intervals: params.n_intervals,
        tau: params.tau,
        nu2: params.nu2,
        split: params.split,
        rule: params.rule,
        seed: params.seed,
        n_change_points: change_points.len(),
        change_points,
    })
}
