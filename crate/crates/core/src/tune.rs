// SPDX-License-Identifier: MIT OR Apache-2.0

//! Data-driven tuning (bootstrap threshold, sparsity heuristic), default
//! configuration, and the end-to-end detection pipeline.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{
    detect_changepoints, frequency_pairs, scan_interval, DetectParams, DetectionReport, Interval,
    ThresholdRule,
};
use crate::ingest::{normal_quantile_transform, partition_blocks, SeriesMatrix};
use crate::rng::{derive_seed, substream, tag};
use crate::spectral::{make_taper, periodogram_tensor, FreqGrid, SpectralTensor, TaperKind};
use crate::{Error, Result};

pub const MIN_BLOCK_LENGTH: usize = 50;
pub const MAX_BLOCK_LENGTH: usize = 100;
pub const PREFERRED_BLOCK_LENGTH: usize = 75;

/// A setting that is either given or estimated from the data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto<T> {
    #[default]
    Auto,
    Value(T),
}

impl<T: FromStr> FromStr for Auto<T> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Self::Auto);
        }
        s.parse()
            .map(Self::Value)
            .map_err(|_| Error::config(format!("expected a number or \"auto\", got {s:?}")))
    }
}

impl<T: fmt::Display> fmt::Display for Auto<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Auto => f.write_str("auto"),
            Self::Value(v) => v.fmt(f),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub block_length: usize,
    pub k: Auto<usize>,
    pub n_intervals: usize,
    pub tau: Auto<f64>,
    pub bootstrap_samples: usize,
    pub bootstrap_quantile: f64,
    /// Bootstrap replicates for each per-series run of the sparsity heuristic.
    pub sparsity_bootstrap_samples: usize,
    /// How `τ` enters the decision; the bootstrap collects the matching
    /// statistic.
    pub threshold_rule: ThresholdRule,
    pub nu1: usize,
    pub nu2: usize,
    pub split: bool,
    pub normalize: bool,
    pub center: bool,
    pub seed: u64,
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

/// `⌊B^0.6 / 2⌋`.
pub fn default_nu2(n_blocks: usize) -> usize {
    ((n_blocks as f64).powf(0.6) / 2.0).floor() as usize
}

/// Defaults for a `p × N` input: `L = 75` clipped to `[50, 100]` and to at
/// most `N/4`, `J = 500`, `ν₁ = 0`, `ν₂ = ⌊B^0.6/2⌋`, split on,
/// normalization off, centering on, `k` and `τ` estimated.
pub fn default_config(n: usize, p: usize) -> Result<DetectionConfig> {
    if p == 0 {
        return Err(Error::config("need at least one series"));
    }
    let cap = n / 4;
    if cap < MIN_BLOCK_LENGTH {
        return Err(Error::config(format!(
            "series of length {n} is too short: need N >= {}",
            4 * MIN_BLOCK_LENGTH
        )));
    }
    let block_length = PREFERRED_BLOCK_LENGTH
        .clamp(MIN_BLOCK_LENGTH, MAX_BLOCK_LENGTH)
        .min(cap);
    Ok(DetectionConfig::with_block_length(n, block_length))
}

impl DetectionConfig {
    /// Defaults for a series of length `n` with a fixed block length;
    /// `ν₂` follows from `B = ⌊n / L⌋`.
    pub fn with_block_length(n: usize, block_length: usize) -> Self {
        let n_blocks = n.checked_div(block_length).unwrap_or(0);
        Self {
            block_length,
            k: Auto::Auto,
            n_intervals: 500,
            tau: Auto::Auto,
            bootstrap_samples: 1000,
            bootstrap_quantile: 0.95,
            sparsity_bootstrap_samples: 200,
            threshold_rule: ThresholdRule::default(),
            nu1: 0,
            nu2: default_nu2(n_blocks),
            split: true,
            normalize: false,
            center: true,
            seed: 0,
            tol: 1e-8,
            max_outer: 50,
            max_inner: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bootstrap_quantile > 0.0 && self.bootstrap_quantile <= 1.0) {
            return Err(Error::config(format!(
                "bootstrap quantile must be in (0, 1], got {}",
                self.bootstrap_quantile
            )));
        }
        if self.tau == Auto::Auto && self.bootstrap_samples == 0 {
            return Err(Error::config("automatic threshold needs bootstrap_samples >= 1"));
        }
        if self.k == Auto::Auto && self.sparsity_bootstrap_samples == 0 {
            return Err(Error::config(
                "automatic sparsity needs sparsity_bootstrap_samples >= 1",
            ));
        }
        if let Auto::Value(tau) = self.tau {
            if tau.is_nan() || tau < 0.0 {
                return Err(Error::config(format!("threshold must be >= 0, got {tau}")));
            }
        }
        if self.k == Auto::Value(0) {
            return Err(Error::config("sparsity k must be >= 1"));
        }
        if self.block_length < 2 {
            return Err(Error::config("block length must be >= 2"));
        }
        Ok(())
    }

    /// Detection parameters once `k` and `τ` are known.
    pub fn detect_params(&self, k: usize, tau: f64) -> DetectParams {
        DetectParams {
            k,
            n_intervals: self.n_intervals,
            tau,
            nu1: self.nu1,
            nu2: self.nu2,
            split: self.split,
            seed: self.seed,
            tol: self.tol,
            max_outer: self.max_outer,
            max_inner: self.max_inner,
            rule: self.threshold_rule,
        }
    }

    fn bootstrap_params(&self, k: usize, n_boot: usize) -> BootstrapParams {
        BootstrapParams {
            k,
            n_boot,
            quantile: self.bootstrap_quantile,
            detect: self.detect_params(k, 0.0),
        }
    }

    /// Applies `key = value` assignments (see [`DetectionConfig::keys`]).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::config(format!("invalid value {v:?} for {key}")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v.trim().to_ascii_lowercase().as_str() {
                "true" | "yes" | "on" | "1" => Ok(true),
                "false" | "no" | "off" | "0" => Ok(false),
                _ => Err(Error::config(format!("invalid boolean {v:?} for {key}"))),
            }
        }
        match key.trim() {
            "block_length" => self.block_length = num(key, value)?,
            "k" | "sparsity" => self.k = value.parse()?,
            "n_intervals" | "intervals" => self.n_intervals = num(key, value)?,
            "tau" | "threshold" => self.tau = value.parse()?,
            "bootstrap_samples" => self.bootstrap_samples = num(key, value)?,
            "bootstrap_quantile" | "quantile" => self.bootstrap_quantile = num(key, value)?,
            "sparsity_bootstrap_samples" => self.sparsity_bootstrap_samples = num(key, value)?,
            "threshold_rule" => self.threshold_rule = value.parse()?,
            "nu1" => self.nu1 = num(key, value)?,
            "nu2" => self.nu2 = num(key, value)?,
            "split" => self.split = flag(key, value)?,
            "normalize" => self.normalize = flag(key, value)?,
            "center" => self.center = flag(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "tol" => self.tol = num(key, value)?,
            "max_outer" => self.max_outer = num(key, value)?,
            "max_inner" => self.max_inner = num(key, value)?,
            other => return Err(Error::config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    pub fn keys() -> &'static [&'static str] {
        &[
            "block_length",
            "k",
            "n_intervals",
            "tau",
            "bootstrap_samples",
            "bootstrap_quantile",
            "sparsity_bootstrap_samples",
            "threshold_rule",
            "nu1",
            "nu2",
            "split",
            "normalize",
            "center",
            "seed",
            "tol",
            "max_outer",
            "max_inner",
        ]
    }
}

/// Parses a flat `key = value` file (`#` starts a comment) into
/// assignments, in file order.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .or_else(|| line.split_once(':'))
            .ok_or_else(|| Error::config(format!("line {}: expected key = value", i + 1)))?;
        let key = key.trim();
        if !DetectionConfig::keys().contains(&key)
            && !["sparsity", "intervals", "threshold", "quantile"].contains(&key)
        {
            return Err(Error::config(format!("line {}: unknown key {key:?}", i + 1)));
        }
        out.push((key.to_string(), value.trim().trim_matches('"').to_string()));
    }
    Ok(out)
}

pub fn load_config_file(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_text(&text)
}

/// Controls for [`bootstrap_threshold`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BootstrapParams {
    pub k: usize,
    pub n_boot: usize,
    pub quantile: f64,
    /// Threshold rule, split flag, `ν₁`, `ν₂` and iteration caps; `k`, `J`
    /// and `τ` are overridden (`J = 0`, `τ = 0`).
    pub detect: DetectParams,
}

impl BootstrapParams {
    pub fn new(k: usize, n_boot: usize, quantile: f64) -> Self {
        Self {
            k,
            n_boot,
            quantile,
            detect: DetectParams::new(k, 0.0, 0),
        }
    }
}

/// Type-7 sample quantile (linear interpolation between order statistics).
pub fn quantile_type7(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::input("quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::config(format!(
            "quantile level must be in [0, 1], got {q}"
        )));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

/// One bootstrap replicate's statistic on an already resampled tensor: the
/// largest `τ = 0` aggregate `max_u 𝔠_u` under [`ThresholdRule::Aggregate`],
/// the largest single-frequency scaled CUSUM `max_{u,l}` under
/// [`ThresholdRule::PerTerm`].
fn replicate_statistic(tensor: &SpectralTensor, params: &BootstrapParams, base_seed: u64) -> Result<f64> {
    let mut d = params.detect;
    d.k = params.k;
    d.tau = 0.0;
    d.n_intervals = 0;
    d.validate(tensor)?;
    let pairs = frequency_pairs(tensor, d.split)?;
    let whole = Interval::new(1, tensor.n_blocks())?;
    let scan = scan_interval(tensor, &pairs, whole, 0.0, &d.decomp_settings(), base_seed)?;
    let range = whole.admissible(d.nu2);
    let stat = match d.rule {
        ThresholdRule::Aggregate => range.map(|u| scan.statistic[u - 1]).fold(0.0, f64::max),
        ThresholdRule::PerTerm => scan
            .terms()
            .flat_map(|row| range.clone().map(move |u| row[u - 1]))
            .fold(0.0, f64::max),
    };
    Ok(stat)
}

/// The `n_boot` bootstrap maxima, in replicate order. Replicate `r` draws a
/// block-index vector with replacement (shared across frequencies) from
/// substream `(seed; BOOTSTRAP, r)`.
pub fn bootstrap_statistics(
    tensor: &SpectralTensor,
    params: &BootstrapParams,
    seed: u64,
) -> Result<Vec<f64>> {
    if params.n_boot == 0 {
        return Err(Error::config("bootstrap needs at least one sample"));
    }
    let b = tensor.n_blocks();
    (0..params.n_boot as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, &[tag::BOOTSTRAP, r]);
            let blocks: Vec<usize> = (0..b).map(|_| rng.random_range(0..b)).collect();
            let resampled = tensor.resampled(&blocks)?;
            replicate_statistic(&resampled, params, derive_seed(seed, &[tag::BOOTSTRAP, r, 1]))
        })
        .collect()
}

/// `τ_B`: the `quantile` (type 7) of the bootstrap maxima.
pub fn bootstrap_threshold(tensor: &SpectralTensor, params: &BootstrapParams, seed: u64) -> Result<f64> {
    if !(params.quantile > 0.0 && params.quantile <= 1.0) {
        return Err(Error::config(format!(
            "bootstrap quantile must be in (0, 1], got {}",
            params.quantile
        )));
    }
    quantile_type7(&bootstrap_statistics(tensor, params, seed)?, params.quantile)
}

/// Outcome of the series-by-series sparsity heuristic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityEstimate {
    pub k: usize,
    /// Series (0-based) with at least one detected change point.
    pub changed_series: Vec<usize>,
}

/// Runs univariate detection (`k = 1`, per-series bootstrap threshold with
/// `sparsity_bootstrap_samples` replicates) on every series and counts those
/// with a change; the count is floored at 1.
pub fn estimate_sparsity(tensor: &SpectralTensor, config: &DetectionConfig) -> Result<SparsityEstimate> {
    let p = tensor.p();
    let changed: Vec<bool> = (0..p)
        .into_par_iter()
        .map(|i| {
            let uni = tensor.series(i)?;
            let seed = derive_seed(config.seed, &[tag::SPARSITY, i as u64]);
            let tau = match config.tau {
                Auto::Value(t) => t,
                Auto::Auto => {
                    let bp = config.bootstrap_params(1, config.sparsity_bootstrap_samples);
                    bootstrap_threshold(&uni, &bp, seed)?
                }
            };
            let mut params = config.detect_params(1, tau);
            params.seed = seed;
            Ok(detect_changepoints(&uni, &params)?.n_change_points > 0)
        })
        .collect::<Result<_>>()?;
    let changed_series: Vec<usize> = (0..p).filter(|&i| changed[i]).collect();
    Ok(SparsityEstimate {
        k: changed_series.len().max(1),
        changed_series,
    })
}

/// Resolved tuning values and the detection result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub k: usize,
    pub tau: f64,
    pub sparsity: Option<SparsityEstimate>,
    pub report: DetectionReport,
}

/// Transforms the input as configured and computes the periodogram tensor.
pub fn prepare_tensor(x: &SeriesMatrix, config: &DetectionConfig) -> Result<SpectralTensor> {
    config.validate()?;
    let mut data = x.clone();
    if config.normalize {
        data = normal_quantile_transform(&data)?;
    }
    if config.center {
        data = data.centered();
    }
    let plan = partition_blocks(&data, config.block_length)?;
    let taper = make_taper(config.block_length, &TaperKind::Hann)?;
    periodogram_tensor(&data, &plan, &taper, FreqGrid::new(config.block_length))
}

/// `k` and `τ` for a prepared tensor: given values are used as-is,
/// automatic ones are estimated (`k` first, since `τ` depends on it).
pub fn tune(
    tensor: &SpectralTensor,
    config: &DetectionConfig,
) -> Result<(usize, f64, Option<SparsityEstimate>)> {
    config.validate()?;
    let (k, sparsity) = match config.k {
        Auto::Value(k) => (k, None),
        Auto::Auto => {
            let est = estimate_sparsity(tensor, config)?;
            (est.k, Some(est))
        }
    };
    let tau = match config.tau {
        Auto::Value(t) => t,
        Auto::Auto => bootstrap_threshold(
            tensor,
            &config.bootstrap_params(k, config.bootstrap_samples),
            config.seed,
        )?,
    };
    Ok((k, tau, sparsity))
}

/// Full pipeline: transform, periodograms, tuning, detection.
pub fn run_detection(x: &SeriesMatrix, config: &DetectionConfig) -> Result<PipelineOutput> {
    let tensor = prepare_tensor(x, config)?;
    let (k, tau, sparsity) = tune(&tensor, config)?;
    let mut report = detect_changepoints(&tensor, &config.detect_params(k, tau))?;
    report.series_length = Some(x.len());
    Ok(PipelineOutput {
        k,
        tau,
        sparsity,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_guidance() {
        let c = default_config(6000, 80).unwrap();
        assert_eq!((c.block_length, 6000 / c.block_length, c.nu2), (75, 80, 6));
        let c = default_config(12000, 80).unwrap();
        assert_eq!((12000 / c.block_length, c.nu2), (160, 10));
        assert_eq!(default_config(240, 3).unwrap().block_length, 60);
        assert!(matches!(default_config(150, 3), Err(Error::Config(_))));
        assert_eq!(c.n_intervals, 500);
        assert!(c.split && !c.normalize && c.center && c.nu1 == 0);
        assert_eq!((c.k, c.tau), (Auto::Auto, Auto::Auto));
    }

    #[test]
    fn quantile_examples() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile_type7(&v, 1.0).unwrap(), 4.0);
        assert_eq!(quantile_type7(&v, 0.0).unwrap(), 1.0);
        assert_eq!(quantile_type7(&v, 0.5).unwrap(), 2.5);
        // R: quantile(1:4, 0.95) = 3.85
        assert!((quantile_type7(&v, 0.95).unwrap() - 3.85).abs() < 1e-12);
        assert!(quantile_type7(&[], 0.5).is_err());
    }

    #[test]
    fn config_text() {
        let kv =
            parse_config_text("# comment\nblock_length = 60\nk = auto\ntau: 2.5 # inline\n\nsplit=false\n")
                .unwrap();
        let mut c = DetectionConfig::with_block_length(6000, 75);
        for (k, v) in &kv {
            c.set(k, v).unwrap();
        }
        assert_eq!(c.block_length, 60);
        assert_eq!(c.k, Auto::Auto);
        assert_eq!(c.tau, Auto::Value(2.5));
        assert!(!c.split);
        assert!(parse_config_text("bogus = 1").is_err());
        assert!(parse_config_text("no separator").is_err());
        assert!(c.set("nu2", "x").is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = DetectionConfig::with_block_length(6000, 75);
        assert!(c.validate().is_ok());
        c.bootstrap_quantile = 0.0;
        assert!(c.validate().is_err());
        c.bootstrap_quantile = 1.0;
        c.bootstrap_samples = 0;
        assert!(c.validate().is_err());
        c.tau = Auto::Value(1.0);
        assert!(c.validate().is_ok());
    }
}
