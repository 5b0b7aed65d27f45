// SPDX-License-Identifier: MIT OR Apache-2.0

//! Independent oracles and fixtures shared by the integration tests and the
//! acceptance suite. Nothing here calls the library's numerical kernels.

#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64;
use spectral_cp::detect::{detect_changepoints, DetectParams, DetectionReport};
use spectral_cp::spectral::{FreqGrid, SliceStack, SpectralTensor};

/// Textbook CUSUM of `v[s..=e]` (0-based, inclusive) at split `u`
/// (`s ≤ u < e`): `√((u−s+1)(e−u)/n) · (mean(v[u+1..=e]) − mean(v[s..=u]))`.
pub fn naive_cusum(v: &[f64], s: usize, e: usize, u: usize) -> f64 {
    let n = (e - s + 1) as f64;
    let left = (u - s + 1) as f64;
    let right = (e - u) as f64;
    let ml = v[s..=u].iter().sum::<f64>() / left;
    let mr = v[u + 1..=e].iter().sum::<f64>() / right;
    (left * right / n).sqrt() * (mr - ml)
}

/// Plain binary segmentation of a positive scalar sequence with trimming:
/// on `[s, e]` (1-based) the split `u ∈ [s+ν, min(e−ν, e−1)]` maximizing
/// `|CUSUM|/mean` is accepted when it exceeds `tau`. Returns sorted `û`.
pub fn binseg_oracle(v: &[f64], nu: usize, tau: f64) -> Vec<usize> {
    fn rec(v: &[f64], s: usize, e: usize, nu: usize, tau: f64, out: &mut Vec<usize>) {
        let lo = s + nu;
        let hi = (e.saturating_sub(nu)).min(e - 1);
        if e <= s || lo > hi {
            return;
        }
        let mean = v[s - 1..e].iter().sum::<f64>() / (e - s + 1) as f64;
        if mean < 1e-12 {
            return;
        }
        let mut best = (0, f64::NEG_INFINITY);
        for u in lo..=hi {
            let stat = naive_cusum(v, s - 1, e - 1, u - 1).abs() / mean;
            if stat > best.1 {
                best = (u, stat);
            }
        }
        if best.1 > tau {
            out.push(best.0);
            rec(v, s, best.0, nu, tau, out);
            if best.0 + 1 < e {
                rec(v, best.0 + 1, e, nu, tau, out);
            }
        }
    }
    let mut out = Vec::new();
    rec(v, 1, v.len(), nu, tau, &mut out);
    out.sort_unstable();
    out
}

/// Single-frequency, single-series tensor whose block spectra are `values`.
pub fn scalar_tensor(values: &[f64]) -> SpectralTensor {
    let slices: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let stack = SliceStack::dense(1, &slices).unwrap();
    SpectralTensor::from_stacks(FreqGrid::new(2), vec![stack]).unwrap()
}

/// Detection with `J = 0`, `p = 1`, one frequency and no splitting.
pub fn scalar_detection(values: &[f64], nu2: usize, tau: f64) -> DetectionReport {
    let mut params = DetectParams::new(1, tau, 0);
    params.split = false;
    params.nu2 = nu2;
    detect_changepoints(&scalar_tensor(values), &params).unwrap()
}

/// Population spectral matrix of `X_n = ε_n + diag(φ) ε_{n−1}` with
/// equicorrelated unit-variance innovations, row-major `p × p`.
pub fn vma1_spectrum(phi: &[f64], rho: f64, omega: f64) -> Vec<Complex64> {
    let p = phi.len();
    let e = Complex64::from_polar(1.0, -omega);
    let mut out = Vec::with_capacity(p * p);
    for r in 0..p {
        for c in 0..p {
            let sigma = if r == c { 1.0 } else { rho };
            let a = Complex64::new(1.0, 0.0) + e * phi[r];
            let b = Complex64::new(1.0, 0.0) + e * phi[c];
            out.push(a * b.conj() * sigma / (2.0 * PI));
        }
    }
    out
}

/// Scalar MA(1) spectrum `(1 + φ² + 2φ cos ω)/(2π)`.
pub fn ma1_density(phi: f64, omega: f64) -> f64 {
    (1.0 + phi * phi + 2.0 * phi * omega.cos()) / (2.0 * PI)
}

/// Scalar AR(2) spectrum `1/(2π |1 − ψ₁e^{−iω} − ψ₂e^{−2iω}|²)`.
pub fn ar2_density(psi1: f64, psi2: f64, omega: f64) -> f64 {
    let z = Complex64::new(1.0, 0.0)
        - Complex64::from_polar(psi1, -omega)
        - Complex64::from_polar(psi2, -2.0 * omega);
    1.0 / (2.0 * PI * z.norm_sqr())
}

/// Dense tensor of population VMA(1) spectra over `B` blocks, switching
/// from `φ = 0.6` everywhere to `−0.6` on `changed` after block `cut`.
pub fn population_tensor(
    p: usize,
    changed: &[usize],
    n_blocks: usize,
    cut: usize,
    block_length: usize,
) -> SpectralTensor {
    let grid = FreqGrid::new(block_length);
    let before = vec![0.6; p];
    let mut after = before.clone();
    changed.iter().for_each(|&i| after[i] = -0.6);
    let stacks = grid
        .indices()
        .map(|l| {
            let w = grid.omega(l);
            let (a, b) = (vma1_spectrum(&before, 0.2, w), vma1_spectrum(&after, 0.2, w));
            let slices: Vec<Complex64> = (1..=n_blocks)
                .flat_map(|blk| if blk <= cut { a.clone() } else { b.clone() })
                .collect();
            SliceStack::dense(p, &slices).unwrap()
        })
        .collect();
    SpectralTensor::from_stacks(grid, stacks).unwrap()
}

/// Adjusted Rand index from the contingency table in floating point,
/// following the usual `Σ C(n_ij, 2)` formula.
pub fn ari_oracle(a: &[usize], b: &[usize]) -> f64 {
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0f64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1.0;
    }
    let c2 = |n: f64| n * (n - 1.0) / 2.0;
    let index: f64 = table.iter().flatten().map(|&n| c2(n)).sum();
    let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let expected = rows * cols / c2(a.len() as f64);
    let max = (rows + cols) / 2.0;
    (index - expected) / (max - expected)
}
