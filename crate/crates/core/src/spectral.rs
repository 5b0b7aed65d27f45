// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tapered block periodograms on the Fourier grid.
//!
//! A [`SpectralTensor`] holds, for every Fourier index `l ∈ {1, …, ⌈L/2⌉}`,
//! a [`SliceStack`] of `B` complex Hermitian `p × p` slices `f̂_b(ω_l)`.
//! Periodogram slices are rank one, `f̂ = d dᴴ / (2π Σ h²)`, and are kept in
//! factored form (the DFT vectors); arbitrary Hermitian slices, such as
//! population spectra, use dense storage.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::ingest::{check_permutation, BlockPlan, SeriesMatrix};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum TaperKind {
    /// `h(x) = sin²(πx)`.
    Hann,
    /// Explicit samples `h(n/L)`, `n = 1..=L`.
    Custom(Vec<f64>),
}

/// Taper samples `h(n/L)` for `n = 1..=L` and their energy `Σ h²`.
#[derive(Clone, Debug, PartialEq)]
pub struct Taper {
    samples: Vec<f64>,
    h2_sum: f64,
}

impl Taper {
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn h2_sum(&self) -> f64 {
        self.h2_sum
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn make_taper(block_length: usize, kind: &TaperKind) -> Result<Taper> {
    if block_length < 2 {
        return Err(Error::config(format!(
            "taper length must be >= 2, got {block_length}"
        )));
    }
    let samples = match kind {
        TaperKind::Hann => (1..=block_length)
            .map(|n| {
                let s = (PI * n as f64 / block_length as f64).sin();
                s * s
            })
            .collect::<Vec<_>>(),
        TaperKind::Custom(samples) => {
            if samples.len() != block_length {
                return Err(Error::config(format!(
                    "custom taper has {} samples, block length is {block_length}",
                    samples.len()
                )));
            }
            if samples.iter().any(|h| !h.is_finite() || *h < 0.0) {
                return Err(Error::config("taper samples must be finite and non-negative"));
            }
            samples.clone()
        }
    };
    let h2_sum: f64 = samples.iter().map(|h| h * h).sum();
    if h2_sum <= 0.0 {
        return Err(Error::config("taper samples are all zero"));
    }
    Ok(Taper { samples, h2_sum })
}

/// Fourier frequencies `ω_l = 2πl/L` for `l ∈ {1, …, ⌈L/2⌉}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FreqGrid {
    block_length: usize,
}

impl FreqGrid {
    pub fn new(block_length: usize) -> Self {
        Self { block_length }
    }

    pub fn block_length(&self) -> usize {
        self.block_length
    }

    pub fn len(&self) -> usize {
        self.block_length.div_ceil(2)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        1..=self.len()
    }

    pub fn omega(&self, l: usize) -> f64 {
        2.0 * PI * l as f64 / self.block_length as f64
    }
}

/// `d(ω) = Σ_{n=1}^{L} h(n/L) x_{·,n} e^{−iωn}` for one block given row-major
/// (`p × L`).
pub fn tapered_dft(block: &[f64], p: usize, taper: &Taper, omega: f64) -> Result<Vec<Complex64>> {
    let len = taper.len();
    if p == 0 || block.len() != p * len {
        return Err(Error::shape(format!(
            "block has {} values, expected p x L = {p} x {len}",
            block.len()
        )));
    }
    let weights: Vec<Complex64> = taper
        .samples
        .iter()
        .enumerate()
        .map(|(i, &h)| Complex64::from_polar(h, -omega * (i + 1) as f64))
        .collect();
    Ok(block
        .chunks_exact(len)
        .map(|row| row.iter().zip(&weights).map(|(&x, w)| w * x).sum())
        .collect())
}

/// Taper-weighted twiddles for Fourier index `l`, with the phase reduced
/// modulo `L` before the trigonometric call.
fn fourier_weights(taper: &Taper, l: usize) -> (Vec<f64>, Vec<f64>) {
    let len = taper.len();
    taper
        .samples
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let k = (l * (i + 1)) % len;
            let angle = -2.0 * PI * k as f64 / len as f64;
            (h * angle.cos(), h * angle.sin())
        })
        .unzip()
}

#[derive(Clone, Debug, PartialEq)]
enum SliceRepr {
    /// `f̂_b = scale · d_b d_bᴴ`; `re`/`im` are `B × p`, block-major.
    RankOne { re: Vec<f64>, im: Vec<f64>, scale: f64 },
    /// Full slices, `B × p × p`, block-major then row-major.
    Dense { re: Vec<f64>, im: Vec<f64> },
}

/// The `B` slices `f̂_b(ω)` at one frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceStack {
    p: usize,
    n_blocks: usize,
    repr: SliceRepr,
}

impl SliceStack {
    /// Rank-one periodogram slices from per-block DFT vectors (`B × p`).
    pub fn rank_one(p: usize, dft: &[Complex64], scale: f64) -> Result<Self> {
        if p == 0 || !dft.len().is_multiple_of(p) || dft.is_empty() {
            return Err(Error::shape("DFT vectors do not tile into p-vectors"));
        }
        Ok(Self {
            p,
            n_blocks: dft.len() / p,
            repr: SliceRepr::RankOne {
                re: dft.iter().map(|z| z.re).collect(),
                im: dft.iter().map(|z| z.im).collect(),
                scale,
            },
        })
    }

    /// Dense slices (`B × p × p`). Each slice must be Hermitian.
    pub fn dense(p: usize, slices: &[Complex64]) -> Result<Self> {
        let pp = p * p;
        if p == 0 || slices.is_empty() || !slices.len().is_multiple_of(pp) {
            return Err(Error::shape("slices do not tile into p x p matrices"));
        }
        for (b, m) in slices.chunks_exact(pp).enumerate() {
            let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
            for r in 0..p {
                for c in r..p {
                    if (m[r * p + c] - m[c * p + r].conj()).norm() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
                        return Err(Error::input(format!("slice {} is not Hermitian", b + 1)));
                    }
                }
            }
        }
        Ok(Self {
            p,
            n_blocks: slices.len() / pp,
            repr: SliceRepr::Dense {
                re: slices.iter().map(|z| z.re).collect(),
                im: slices.iter().map(|z| z.im).collect(),
            },
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn is_rank_one(&self) -> bool {
        matches!(self.repr, SliceRepr::RankOne { .. })
    }

    /// Slice `f̂_b` (0-based `b`) as a row-major `p × p` complex matrix.
    pub fn slice(&self, b: usize) -> Vec<Complex64> {
        let p = self.p;
        match &self.repr {
            SliceRepr::RankOne { re, im, scale } => {
                let d: Vec<Complex64> = (0..p)
                    .map(|i| Complex64::new(re[b * p + i], im[b * p + i]))
                    .collect();
                let mut out = Vec::with_capacity(p * p);
                for r in 0..p {
                    for c in 0..p {
                        out.push(d[r] * d[c].conj() * *scale);
                    }
                }
                out
            }
            SliceRepr::Dense { re, im } => {
                let off = b * p * p;
                (0..p * p)
                    .map(|k| Complex64::new(re[off + k], im[off + k]))
                    .collect()
            }
        }
    }

    /// `γᵀ Re(f̂_b) γ` for a real direction given by its nonzero entries.
    pub fn quad_form(&self, b: usize, gamma: &[f64], support: &[usize]) -> f64 {
        let p = self.p;
        match &self.repr {
            SliceRepr::RankOne { re, im, scale } => {
                let (mut a, mut c) = (0.0, 0.0);
                for &j in support {
                    a += gamma[j] * re[b * p + j];
                    c += gamma[j] * im[b * p + j];
                }
                scale * (a * a + c * c)
            }
            SliceRepr::Dense { re, .. } => {
                let m = &re[b * p * p..(b + 1) * p * p];
                let mut acc = 0.0;
                for &r in support {
                    let row = &m[r * p..(r + 1) * p];
                    let inner: f64 = support.iter().map(|&c| row[c] * gamma[c]).sum();
                    acc += gamma[r] * inner;
                }
                acc
            }
        }
    }

    /// `γᵀ Im(f̂_b) γ`, which vanishes for Hermitian slices.
    pub fn imag_quad_form(&self, b: usize, gamma: &[f64]) -> f64 {
        let p = self.p;
        match &self.repr {
            SliceRepr::RankOne { .. } => 0.0,
            SliceRepr::Dense { im, .. } => {
                let m = &im[b * p * p..(b + 1) * p * p];
                (0..p)
                    .map(|r| gamma[r] * (0..p).map(|c| m[r * p + c] * gamma[c]).sum::<f64>())
                    .sum()
            }
        }
    }

    /// `out += w · Re(f̂_b)[:, j]`.
    pub fn add_column(&self, b: usize, j: usize, w: f64, out: &mut [f64]) {
        let p = self.p;
        match &self.repr {
            SliceRepr::RankOne { re, im, scale } => {
                let dr = &re[b * p..(b + 1) * p];
                let di = &im[b * p..(b + 1) * p];
                let (cr, ci) = (w * scale * dr[j], w * scale * di[j]);
                for ((o, &xr), &xi) in out.iter_mut().zip(dr).zip(di) {
                    *o += cr * xr + ci * xi;
                }
            }
            SliceRepr::Dense { re, .. } => {
                let m = &re[b * p * p..(b + 1) * p * p];
                for (r, o) in out.iter_mut().enumerate() {
                    *o += w * m[r * p + j];
                }
            }
        }
    }

    /// `out += w · Re(f̂_b) γ` for a real `γ` given with its nonzero
    /// entries.
    pub fn add_real_matvec(&self, b: usize, w: f64, gamma: &[f64], support: &[usize], out: &mut [f64]) {
        let p = self.p;
        match &self.repr {
            SliceRepr::RankOne { re, im, scale } => {
                let dr = &re[b * p..(b + 1) * p];
                let di = &im[b * p..(b + 1) * p];
                let (mut a, mut c) = (0.0, 0.0);
                for &j in support {
                    a += dr[j] * gamma[j];
                    c += di[j] * gamma[j];
                }
                let (a, c) = (w * scale * a, w * scale * c);
                for ((o, &xr), &xi) in out.iter_mut().zip(dr).zip(di) {
                    *o += a * xr + c * xi;
                }
            }
            SliceRepr::Dense { re, .. } => {
                let m = &re[b * p * p..(b + 1) * p * p];
                for (r, o) in out.iter_mut().enumerate() {
                    let row = &m[r * p..(r + 1) * p];
                    *o += w * support.iter().map(|&j| row[j] * gamma[j]).sum::<f64>();
                }
            }
        }
    }

    /// `out += w · Re(f̂_b)` over the full `p × p` slice.
    pub fn add_real_slice(&self, b: usize, w: f64, out: &mut [f64]) {
        let p = self.p;
        match &self.repr {
            SliceRepr::RankOne { re, im, scale } => {
                let dr = &re[b * p..(b + 1) * p];
                let di = &im[b * p..(b + 1) * p];
                for r in 0..p {
                    let (cr, ci) = (w * scale * dr[r], w * scale * di[r]);
                    let row = &mut out[r * p..(r + 1) * p];
                    for ((o, &xr), &xi) in row.iter_mut().zip(dr).zip(di) {
                        *o += cr * xr + ci * xi;
                    }
                }
            }
            SliceRepr::Dense { re, .. } => {
                let m = &re[b * p * p..(b + 1) * p * p];
                for (o, &v) in out.iter_mut().zip(m) {
                    *o += w * v;
                }
            }
        }
    }

    /// Trace of `f̂_b`.
    pub fn trace(&self, b: usize) -> f64 {
        let p = self.p;
        match &self.repr {
            SliceRepr::RankOne { re, im, scale } => {
                scale
                    * (0..p)
                        .map(|i| re[b * p + i].powi(2) + im[b * p + i].powi(2))
                        .sum::<f64>()
            }
            SliceRepr::Dense { re, .. } => (0..p).map(|i| re[b * p * p + i * p + i]).sum(),
        }
    }

    /// New stack whose block `i` is this stack's block `blocks[i]`.
    pub fn resampled(&self, blocks: &[usize]) -> Self {
        let per = match self.repr {
            SliceRepr::RankOne { .. } => self.p,
            SliceRepr::Dense { .. } => self.p * self.p,
        };
        let pick = |v: &[f64]| -> Vec<f64> {
            blocks
                .iter()
                .flat_map(|&b| v[b * per..(b + 1) * per].iter().copied())
                .collect()
        };
        let repr = match &self.repr {
            SliceRepr::RankOne { re, im, scale } => SliceRepr::RankOne {
                re: pick(re),
                im: pick(im),
                scale: *scale,
            },
            SliceRepr::Dense { re, im } => SliceRepr::Dense {
                re: pick(re),
                im: pick(im),
            },
        };
        Self {
            p: self.p,
            n_blocks: blocks.len(),
            repr,
        }
    }

    /// Elementwise `c · f̂`.
    pub fn scaled(&self, c: f64) -> Self {
        let repr = match &self.repr {
            SliceRepr::RankOne { re, im, scale } => SliceRepr::RankOne {
                re: re.clone(),
                im: im.clone(),
                scale: scale * c,
            },
            SliceRepr::Dense { re, im } => SliceRepr::Dense {
                re: re.iter().map(|v| v * c).collect(),
                im: im.iter().map(|v| v * c).collect(),
            },
        };
        Self { repr, ..*self }
    }

    /// Relabels series: new index `i` is old index `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let p = self.p;
        let repr = match &self.repr {
            SliceRepr::RankOne { re, im, scale } => {
                let pick = |v: &[f64]| -> Vec<f64> {
                    (0..self.n_blocks)
                        .flat_map(|b| perm.iter().map(move |&i| v[b * p + i]))
                        .collect()
                };
                SliceRepr::RankOne {
                    re: pick(re),
                    im: pick(im),
                    scale: *scale,
                }
            }
            SliceRepr::Dense { re, im } => {
                let pick = |v: &[f64]| -> Vec<f64> {
                    let mut out = Vec::with_capacity(v.len());
                    for b in 0..self.n_blocks {
                        for &r in perm {
                            for &c in perm {
                                out.push(v[b * p * p + r * p + c]);
                            }
                        }
                    }
                    out
                };
                SliceRepr::Dense {
                    re: pick(re),
                    im: pick(im),
                }
            }
        };
        Self { repr, ..*self }
    }

    /// Univariate stack of the auto-spectrum of series `i`.
    pub fn series(&self, i: usize) -> Self {
        let p = self.p;
        let repr = match &self.repr {
            SliceRepr::RankOne { re, im, scale } => SliceRepr::RankOne {
                re: (0..self.n_blocks).map(|b| re[b * p + i]).collect(),
                im: (0..self.n_blocks).map(|b| im[b * p + i]).collect(),
                scale: *scale,
            },
            SliceRepr::Dense { re, .. } => SliceRepr::Dense {
                re: (0..self.n_blocks).map(|b| re[b * p * p + i * p + i]).collect(),
                im: vec![0.0; self.n_blocks],
            },
        };
        Self {
            p: 1,
            n_blocks: self.n_blocks,
            repr,
        }
    }
}

/// Per-frequency stacks of block spectral matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralTensor {
    p: usize,
    n_blocks: usize,
    grid: FreqGrid,
    stacks: Vec<SliceStack>,
}

impl SpectralTensor {
    /// Assembles a tensor from one stack per Fourier index `1..=⌈L/2⌉`.
    pub fn from_stacks(grid: FreqGrid, stacks: Vec<SliceStack>) -> Result<Self> {
        let first = stacks
            .first()
            .ok_or_else(|| Error::shape("no frequency stacks"))?;
        let (p, n_blocks) = (first.p, first.n_blocks);
        if stacks.len() != grid.len() {
            return Err(Error::shape(format!(
                "{} stacks for a grid of {} frequencies",
                stacks.len(),
                grid.len()
            )));
        }
        if stacks.iter().any(|s| s.p != p || s.n_blocks != n_blocks) {
            return Err(Error::shape("stacks disagree on p or B"));
        }
        Ok(Self {
            p,
            n_blocks,
            grid,
            stacks,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn grid(&self) -> FreqGrid {
        self.grid
    }

    /// Stack at Fourier index `l` (1-based).
    pub fn stack(&self, l: usize) -> &SliceStack {
        &self.stacks[l - 1]
    }

    pub fn stacks(&self) -> &[SliceStack] {
        &self.stacks
    }

    fn map_stacks(&self, f: impl Fn(&SliceStack) -> SliceStack + Sync + Send) -> Self {
        let stacks: Vec<SliceStack> = self.stacks.par_iter().map(f).collect();
        let (p, n_blocks) = (stacks[0].p, stacks[0].n_blocks);
        Self {
            p,
            n_blocks,
            grid: self.grid,
            stacks,
        }
    }

    /// Block-resampled copy; the same block index vector applies to every
    /// frequency.
    pub fn resampled(&self, blocks: &[usize]) -> Result<Self> {
        if blocks.is_empty() || blocks.iter().any(|&b| b >= self.n_blocks) {
            return Err(Error::input("block indices out of range"));
        }
        Ok(self.map_stacks(|s| s.resampled(blocks)))
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map_stacks(|s| s.scaled(c))
    }

    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.p)?;
        Ok(self.map_stacks(|s| s.permuted(perm)))
    }

    /// Univariate tensor of series `i`'s auto-spectra.
    pub fn series(&self, i: usize) -> Result<Self> {
        if i >= self.p {
            return Err(Error::input(format!(
                "series {i} out of range for p = {}",
                self.p
            )));
        }
        Ok(self.map_stacks(|s| s.series(i)))
    }

    /// Writes one CSV per frequency, `freq_<l>.csv`, with columns
    /// `block, re_1_1, re_1_2, …, re_p_p, im_1_1, …, im_p_p` (1-based
    /// indices, row-major).
    pub fn dump_csv(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = self.p;
        for l in self.grid.indices() {
            let path = dir.join(format!("freq_{l}.csv"));
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = std::io::BufWriter::new(file);
            let mut header = vec!["block".to_string()];
            for part in ["re", "im"] {
                for r in 1..=p {
                    for c in 1..=p {
                        header.push(format!("{part}_{r}_{c}"));
                    }
                }
            }
            let mut text = header.join(",");
            text.push('\n');
            for b in 0..self.n_blocks {
                let s = self.stack(l).slice(b);
                text.push_str(&(b + 1).to_string());
                for z in &s {
                    text.push_str(&format!(",{:.16e}", z.re));
                }
                for z in &s {
                    text.push_str(&format!(",{:.16e}", z.im));
                }
                text.push('\n');
            }
            w.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Builds `f̂_b(ω_l) = d_b(ω_l) d_b(ω_l)ᴴ / (2π Σ h²)` for every block and
/// every grid frequency.
pub fn periodogram_tensor(
    x: &SeriesMatrix,
    plan: &BlockPlan,
    taper: &Taper,
    grid: FreqGrid,
) -> Result<SpectralTensor> {
    let len = plan.block_length;
    if taper.len() != len || grid.block_length() != len {
        return Err(Error::shape(format!(
            "taper length {} / grid length {} do not match block length {len}",
            taper.len(),
            grid.block_length()
        )));
    }
    if plan.covered() > x.len() || plan.n_blocks < 2 {
        return Err(Error::shape("block plan inconsistent with series length"));
    }
    let p = x.p();
    let scale = 1.0 / (2.0 * PI * taper.h2_sum());
    let stacks = grid
        .indices()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|l| {
            let (wr, wi) = fourier_weights(taper, l);
            let mut dft = Vec::with_capacity(plan.n_blocks * p);
            for b in 1..=plan.n_blocks {
                let range = plan.block_range(b);
                for row in x.rows() {
                    let seg = &row[range.clone()];
                    let mut acc = Complex64::new(0.0, 0.0);
                    for ((&v, &cr), &ci) in seg.iter().zip(&wr).zip(&wi) {
                        acc.re += v * cr;
                        acc.im += v * ci;
                    }
                    dft.push(acc);
                }
            }
            SliceStack::rank_one(p, &dft, scale)
        })
        .collect::<Result<Vec<_>>>()?;
    SpectralTensor::from_stacks(grid, stacks)
}

/// Pairs of Fourier indices `(work, partner)` used for independent
/// projection: every odd `l` is paired with `l + 1`, or with `l − 1` when
/// `l + 1` is past the end of the grid.
pub fn frequency_split(grid: FreqGrid) -> Result<Vec<(usize, usize)>> {
    let m = grid.len();
    if m < 2 {
        return Err(Error::config(format!(
            "frequency splitting needs at least 2 Fourier frequencies, grid has {m}"
        )));
    }
    Ok((1..=m)
        .step_by(2)
        .map(|l| (l, if l < m { l + 1 } else { l - 1 }))
        .collect())
}
