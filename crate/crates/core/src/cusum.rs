// SPDX-License-Identifier: MIT OR Apache-2.0

//! Co-spectrum CUSUM transform.
//!
//! For an interval `[s, e]` of blocks and split point `b ∈ [s, e − 1]`:
//!
//! ```text
//! C_{s,b,e}(G) = sqrt((b−s+1)(e−b)/(e−s+1)) · Re( mean(G_{b+1..=e}) − mean(G_{s..=b}) )
//! ```
//!
//! Output slice `b` is stored at offset `b − s`.

use crate::spectral::SliceStack;
use crate::{Error, Result};

/// Above this many terms the block means use compensated summation.
const COMPENSATED_ABOVE: usize = 1024;

fn check_interval(s: usize, e: usize, n_blocks: usize) -> Result<()> {
    if s < 1 || s >= e || e > n_blocks {
        return Err(Error::Interval(format!(
            "need 1 <= s < e <= {n_blocks}, got s = {s}, e = {e}"
        )));
    }
    Ok(())
}

/// `sqrt(m(n−m)/n)` for a split after the first `m` of `n` terms.
#[inline]
pub fn cusum_scale(m: usize, n: usize) -> f64 {
    ((m * (n - m)) as f64 / n as f64).sqrt()
}

/// Contrast weights `κ_i` of the CUSUM at split `m` (the first `m` of `n`
/// terms are "left"): `−c/m` on the left, `c/(n−m)` on the right.
pub fn contrast_weights(m: usize, n: usize) -> Vec<f64> {
    let c = cusum_scale(m, n);
    (0..n)
        .map(|i| if i < m { -c / m as f64 } else { c / (n - m) as f64 })
        .collect()
}

/// Prefix sums `P[0] = 0, P[i] = v_0 + … + v_{i−1}`.
fn prefix_sums(v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() + 1);
    out.push(0.0);
    if v.len() > COMPENSATED_ABOVE {
        // Neumaier summation.
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for &x in v {
            let t = sum + x;
            if sum.abs() >= x.abs() {
                comp += (sum - t) + x;
            } else {
                comp += (x - t) + sum;
            }
            sum = t;
            out.push(sum + comp);
        }
    } else {
        let mut sum = 0.0;
        for &x in v {
            sum += x;
            out.push(sum);
        }
    }
    out
}

/// CUSUM of a real sequence `v` covering blocks `s..=e`; returns the
/// `e − s` statistics for splits `b = s..e−1`.
pub fn cusum_vector(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.len();
    if n < 2 {
        return Err(Error::Interval(format!("CUSUM needs at least 2 terms, got {n}")));
    }
    let pre = prefix_sums(v);
    let total = pre[n];
    Ok((1..n)
        .map(|m| {
            let left = pre[m] / m as f64;
            let right = (total - pre[m]) / (n - m) as f64;
            cusum_scale(m, n) * (right - left)
        })
        .collect())
}

/// Adjoint of the CUSUM map restricted to split offsets `first..first +
/// alpha.len()`: returns `w_i = Σ_m α_m κ_{m,i}` for `i = 0..n`, so that
/// `Σ_m α_m C_m(v) = Σ_i w_i v_i`.
pub fn cusum_adjoint(alpha: &[f64], first: usize, n: usize) -> Vec<f64> {
    // offset o ↦ split m = o + 1 (left part holds the first m terms).
    // left coefficient for m: a_m = −c_m/m applies to i < m;
    // right coefficient:      r_m = c_m/(n−m) applies to i ≥ m.
    let mut left_from = vec![0.0; n + 1]; // Σ_{m > i} α_m a_m, built as suffix sums
    let mut right_upto = vec![0.0; n + 1]; // Σ_{m <= i} α_m r_m, built as prefix sums
    for (o, &a) in alpha.iter().enumerate() {
        let m = first + o + 1;
        let c = cusum_scale(m, n);
        left_from[m] += a * (-c / m as f64);
        right_upto[m] += a * (c / (n - m) as f64);
    }
    let mut w = vec![0.0; n];
    let mut suffix = 0.0;
    for i in (0..n).rev() {
        suffix += left_from[i + 1];
        w[i] = suffix;
    }
    let mut prefix = 0.0;
    for (i, wi) in w.iter_mut().enumerate() {
        prefix += right_upto[i];
        *wi += prefix;
    }
    w
}

/// Real symmetric `p × p × (e − s)` CUSUM tensor on `[s, e]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CusumTensor {
    s: usize,
    e: usize,
    p: usize,
    slices: Vec<f64>,
}

impl CusumTensor {
    /// Builds a tensor directly from `e − s` row-major `p × p` slices.
    pub fn from_slices(p: usize, s: usize, e: usize, slices: Vec<f64>) -> Result<Self> {
        if s < 1 || s >= e {
            return Err(Error::Interval(format!("need 1 <= s < e, got s = {s}, e = {e}")));
        }
        if p == 0 || slices.len() != (e - s) * p * p {
            return Err(Error::shape(format!(
                "expected {} slice values, got {}",
                (e - s) * p * p,
                slices.len()
            )));
        }
        Ok(Self { s, e, p, slices })
    }

    pub fn interval(&self) -> (usize, usize) {
        (self.s, self.e)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_slices(&self) -> usize {
        self.e - self.s
    }

    /// Slice at absolute block index `b ∈ [s, e − 1]`.
    pub fn slice_at(&self, b: usize) -> &[f64] {
        self.slice(b - self.s)
    }

    /// Slice at offset `o = b − s`.
    pub fn slice(&self, o: usize) -> &[f64] {
        let pp = self.p * self.p;
        &self.slices[o * pp..(o + 1) * pp]
    }

    pub fn data(&self) -> &[f64] {
        &self.slices
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            slices: self.slices.iter().map(|v| v * c).collect(),
            ..*self
        }
    }
}

/// Applies the co-spectrum CUSUM transform to blocks `s..=e` (1-based) of
/// `stack`.
pub fn cusum_tensor(stack: &SliceStack, s: usize, e: usize) -> Result<CusumTensor> {
    check_interval(s, e, stack.n_blocks())?;
    let p = stack.p();
    let pp = p * p;
    let n = e - s + 1;

    // Running sums of Re(G) over the interval.
    let mut total = vec![0.0; pp];
    let mut partials = Vec::with_capacity(n - 1);
    let mut running = vec![0.0; pp];
    if n > COMPENSATED_ABOVE {
        let mut comp = vec![0.0; pp];
        let mut slice = vec![0.0; pp];
        for b in s..=e {
            slice.iter_mut().for_each(|v| *v = 0.0);
            stack.add_real_slice(b - 1, 1.0, &mut slice);
            for ((acc, c), &x) in running.iter_mut().zip(comp.iter_mut()).zip(&slice) {
                let t = *acc + x;
                if acc.abs() >= x.abs() {
                    *c += (*acc - t) + x;
                } else {
                    *c += (x - t) + *acc;
                }
                *acc = t;
            }
            let corrected: Vec<f64> = running.iter().zip(&comp).map(|(a, c)| a + c).collect();
            if b < e {
                partials.push(corrected);
            } else {
                total = corrected;
            }
        }
    } else {
        for b in s..=e {
            stack.add_real_slice(b - 1, 1.0, &mut running);
            if b < e {
                partials.push(running.clone());
            }
        }
        total.copy_from_slice(&running);
    }

    let mut slices = Vec::with_capacity((n - 1) * pp);
    for (o, left_sum) in partials.iter().enumerate() {
        let m = o + 1;
        let c = cusum_scale(m, n);
        let (lw, rw) = (1.0 / m as f64, 1.0 / (n - m) as f64);
        for r in 0..p {
            for col in 0..p {
                // symmetrize explicitly so the slice is exactly symmetric
                let (a, b) = (r * p + col, col * p + r);
                let l = 0.5 * (left_sum[a] + left_sum[b]);
                let t = 0.5 * (total[a] + total[b]);
                slices.push(c * ((t - l) * rw - l * lw));
            }
        }
    }
    CusumTensor::from_slices(p, s, e, slices)
}
