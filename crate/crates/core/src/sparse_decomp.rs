// SPDX-License-Identifier: MIT OR Apache-2.0

//! Leading `k`-sparse mode-1 component of a symmetric CUSUM tensor.
//!
//! The outer loop is a tensor power step: contract modes 1 and 2 with the
//! current direction `γ` to get the time profile `α = Norm(T ×₁ γ ×₂ γ)`,
//! then contract mode 3 with `α` to get the matrix `D = T ×₃ α`. The inner
//! loop is a truncated matrix power iteration `γ ← Norm(Trun(Norm(D γ), k))`.
//!
//! Tensors are accessed through [`CusumOperator`], so the same iteration
//! runs on a materialized [`CusumTensor`] or on [`ImplicitCusum`], which
//! never forms the `p × p × (e − s)` array and evaluates the contractions
//! from the block spectra directly.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cusum::{cusum_adjoint, cusum_vector, CusumTensor};
use crate::spectral::SliceStack;
use crate::{Error, Result};

/// Unit-norm real direction with at most `k` nonzero entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProjectionVector {
    values: Vec<f64>,
}

impl ProjectionVector {
    /// Wraps `values` after checking they are finite with unit norm
    /// (within `1e−8`).
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("projection must be a nonempty finite vector"));
        }
        let norm = l2(&values);
        if (norm - 1.0).abs() > 1e-8 {
            return Err(Error::input(format!("projection norm is {norm}, expected 1")));
        }
        Ok(Self { values })
    }

    /// Scalar direction `1` for univariate series.
    pub fn unit_scalar() -> Self {
        Self { values: vec![1.0] }
    }

    /// Standard basis vector `e_i` in `R^p`.
    pub fn basis(p: usize, i: usize) -> Self {
        let mut values = vec![0.0; p];
        values[i] = 1.0;
        Self { values }
    }

    /// `Norm(v)`; fails on a zero vector.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let norm = l2(&values);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Degenerate("cannot normalize a zero vector".into()));
        }
        Ok(Self {
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn support(&self) -> Vec<usize> {
        support_of(&self.values)
    }

    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }

    /// `(index, weight)` pairs of the nonzero entries.
    pub fn sparse_entries(&self) -> Vec<(usize, f64)> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .collect()
    }
}

fn support_of(v: &[f64]) -> Vec<usize> {
    v.iter()
        .enumerate()
        .filter(|(_, x)| **x != 0.0)
        .map(|(i, _)| i)
        .collect()
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Iteration controls. `nu1` blocks are trimmed from each end of the
/// interval before decomposing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompSettings {
    pub k: usize,
    pub nu1: usize,
    pub max_outer: usize,
    pub max_inner: usize,
    pub tol: f64,
}

impl DecompSettings {
    pub fn with_sparsity(k: usize) -> Self {
        Self { k, ..Self::default() }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.k < 1 || self.k > p {
            return Err(Error::config(format!(
                "sparsity k must be in 1..={p}, got {}",
                self.k
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("convergence tolerance must be positive"));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::config("iteration caps must be positive"));
        }
        Ok(())
    }
}

impl Default for DecompSettings {
    fn default() -> Self {
        Self {
            k: 1,
            nu1: 0,
            max_outer: 50,
            max_inner: 100,
            tol: 1e-8,
        }
    }
}

/// Keeps the `k` entries largest in magnitude (lowest index first among
/// ties) and zeroes the rest.
pub fn truncate_top_k(c: &[f64], k: usize) -> Result<Vec<f64>> {
    let p = c.len();
    if k < 1 || k > p {
        return Err(Error::config(format!(
            "truncation budget k must be in 1..={p}, got {k}"
        )));
    }
    Ok(truncate_unchecked(c, k))
}

fn truncate_unchecked(c: &[f64], k: usize) -> Vec<f64> {
    let p = c.len();
    if k >= p {
        return c.to_vec();
    }
    let mut order: Vec<usize> = (0..p).collect();
    let rank = |a: &usize, b: &usize| c[*b].abs().total_cmp(&c[*a].abs()).then(a.cmp(b));
    order.select_nth_unstable_by(k - 1, rank);
    let mut out = vec![0.0; p];
    for &i in &order[..k] {
        out[i] = c[i];
    }
    out
}

/// The mode-3 contraction `D = Σ_b α_b T_b`.
pub trait Contraction {
    /// Writes `D γ` into `out` (length `p`); `support` lists the nonzero
    /// entries of `γ`.
    fn apply(&self, gamma: &[f64], support: &[usize], out: &mut [f64]);

    /// Writes column `j` of `D` into `out`.
    fn column(&self, j: usize, out: &mut [f64]);
}

/// Read access to a symmetric CUSUM tensor with `n_slices` frontal slices.
pub trait CusumOperator: Sync {
    fn dim(&self) -> usize;

    fn n_slices(&self) -> usize;

    /// `γᵀ T_o γ` for slice offsets `o ∈ first..first + len`; `support`
    /// lists the nonzero entries of `γ`.
    fn quadratic_forms(&self, gamma: &[f64], support: &[usize], first: usize, len: usize) -> Vec<f64>;

    /// `D = Σ_o α_o T_{first + o}`.
    fn contract<'a>(&'a self, alpha: &[f64], first: usize) -> Box<dyn Contraction + 'a>;
}

impl CusumOperator for CusumTensor {
    fn dim(&self) -> usize {
        self.p()
    }

    fn n_slices(&self) -> usize {
        CusumTensor::n_slices(self)
    }

    fn quadratic_forms(&self, gamma: &[f64], support: &[usize], first: usize, len: usize) -> Vec<f64> {
        let p = self.p();
        (first..first + len)
            .map(|o| {
                let m = self.slice(o);
                support
                    .iter()
                    .map(|&r| gamma[r] * support.iter().map(|&c| m[r * p + c] * gamma[c]).sum::<f64>())
                    .sum()
            })
            .collect()
    }

    fn contract<'a>(&'a self, alpha: &[f64], first: usize) -> Box<dyn Contraction + 'a> {
        Box::new(DenseContraction {
            tensor: self,
            alpha: alpha.to_vec(),
            first,
        })
    }
}

struct DenseContraction<'a> {
    tensor: &'a CusumTensor,
    alpha: Vec<f64>,
    first: usize,
}

impl Contraction for DenseContraction<'_> {
    fn apply(&self, gamma: &[f64], support: &[usize], out: &mut [f64]) {
        let p = self.tensor.p();
        out.iter_mut().for_each(|v| *v = 0.0);
        for (o, &a) in self.alpha.iter().enumerate() {
            let m = self.tensor.slice(self.first + o);
            for (r, acc) in out.iter_mut().enumerate() {
                let row = &m[r * p..(r + 1) * p];
                *acc += a * support.iter().map(|&j| row[j] * gamma[j]).sum::<f64>();
            }
        }
    }

    fn column(&self, j: usize, out: &mut [f64]) {
        let p = self.tensor.p();
        out.iter_mut().for_each(|v| *v = 0.0);
        for (o, &a) in self.alpha.iter().enumerate() {
            // slices are symmetric: column j equals row j
            let row = &self.tensor.slice(self.first + o)[j * p..(j + 1) * p];
            for (acc, &x) in out.iter_mut().zip(row) {
                *acc += a * x;
            }
        }
    }
}

/// CUSUM tensor of blocks `s..=e` of a [`SliceStack`], evaluated lazily.
///
/// Every contraction is linear in the block slices, so `γᵀ T_b γ` is the
/// CUSUM of the projected block spectra and `Σ_b α_b T_b = Σ_i w_i Re f̂_i`
/// with `w` the adjoint CUSUM weights.
#[derive(Clone, Copy, Debug)]
pub struct ImplicitCusum<'a> {
    stack: &'a SliceStack,
    s: usize,
    e: usize,
}

impl<'a> ImplicitCusum<'a> {
    pub fn new(stack: &'a SliceStack, s: usize, e: usize) -> Result<Self> {
        if s < 1 || s >= e || e > stack.n_blocks() {
            return Err(Error::Interval(format!(
                "need 1 <= s < e <= {}, got s = {s}, e = {e}",
                stack.n_blocks()
            )));
        }
        Ok(Self { stack, s, e })
    }

    fn len(&self) -> usize {
        self.e - self.s + 1
    }
}

impl CusumOperator for ImplicitCusum<'_> {
    fn dim(&self) -> usize {
        self.stack.p()
    }

    fn n_slices(&self) -> usize {
        self.e - self.s
    }

    fn quadratic_forms(&self, gamma: &[f64], support: &[usize], first: usize, len: usize) -> Vec<f64> {
        let projected: Vec<f64> = (self.s..=self.e)
            .map(|b| self.stack.quad_form(b - 1, gamma, support))
            .collect();
        let c = cusum_vector(&projected).expect("interval has at least two blocks");
        c[first..first + len].to_vec()
    }

    fn contract<'b>(&'b self, alpha: &[f64], first: usize) -> Box<dyn Contraction + 'b> {
        Box::new(ImplicitContraction {
            op: *self,
            weights: cusum_adjoint(alpha, first, self.len()),
        })
    }
}

struct ImplicitContraction<'a> {
    op: ImplicitCusum<'a>,
    weights: Vec<f64>,
}

impl Contraction for ImplicitContraction<'_> {
    fn apply(&self, gamma: &[f64], support: &[usize], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, &w) in self.weights.iter().enumerate() {
            if w != 0.0 {
                self.op
                    .stack
                    .add_real_matvec(self.op.s - 1 + i, w, gamma, support, out);
            }
        }
    }

    fn column(&self, j: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, &w) in self.weights.iter().enumerate() {
            if w != 0.0 {
                self.op.stack.add_column(self.op.s - 1 + i, j, w, out);
            }
        }
    }
}

/// Diagnostics of one decomposition run.
#[derive(Clone, Debug, PartialEq)]
pub struct DecompTrace {
    pub gamma: ProjectionVector,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// `‖T ×₁ γ ×₂ γ‖` at the start of each outer iteration, followed by
    /// its value at the returned direction.
    pub objective: Vec<f64>,
    /// Number of random restarts after a zero iterate.
    pub redraws: usize,
    pub converged: bool,
}

/// Offsets of the slices that survive trimming `nu1` blocks at each end:
/// absolute blocks `s + ν₁ ..= min(e − ν₁, e − 1)`.
fn trimmed_range(n_slices: usize, nu1: usize) -> Result<(usize, usize)> {
    let last = n_slices.saturating_sub(nu1).min(n_slices.saturating_sub(1));
    if n_slices == 0 || nu1 > last {
        return Err(Error::Interval(format!(
            "no CUSUM slice survives trimming {nu1} blocks from an interval with {n_slices} slices"
        )));
    }
    Ok((nu1, last - nu1 + 1))
}

/// Uniformly placed random `k`-sparse unit vector with Gaussian weights.
pub fn random_sparse_unit<R: Rng + ?Sized>(p: usize, k: usize, rng: &mut R) -> ProjectionVector {
    loop {
        let mut values = vec![0.0; p];
        for i in sample(rng, p, k.min(p)) {
            values[i] = rng.sample(StandardNormal);
        }
        if let Ok(v) = ProjectionVector::normalized(values) {
            return v;
        }
    }
}

/// Runs the alternating tensor power / truncated matrix power iteration
/// from `init` and returns the final direction.
pub fn decompose<O, R>(
    op: &O,
    settings: &DecompSettings,
    init: &ProjectionVector,
    rng: &mut R,
) -> Result<ProjectionVector>
where
    O: CusumOperator + ?Sized,
    R: Rng + ?Sized,
{
    decompose_traced(op, settings, init, rng).map(|t| t.gamma)
}

pub fn decompose_traced<O, R>(
    op: &O,
    settings: &DecompSettings,
    init: &ProjectionVector,
    rng: &mut R,
) -> Result<DecompTrace>
where
    O: CusumOperator + ?Sized,
    R: Rng + ?Sized,
{
    let p = op.dim();
    settings.validate(p)?;
    if init.dim() != p {
        return Err(Error::shape(format!(
            "initial direction has dimension {}, tensor has p = {p}",
            init.dim()
        )));
    }
    let (first, len) = trimmed_range(op.n_slices(), settings.nu1)?;
    if p == 1 {
        return Ok(DecompTrace {
            gamma: ProjectionVector::unit_scalar(),
            outer_iterations: 0,
            inner_iterations: 0,
            objective: Vec::new(),
            redraws: 0,
            converged: true,
        });
    }
    let k = settings.k;

    let mut gamma = ProjectionVector::normalized(init.values.clone())?.values;
    let mut objective = Vec::with_capacity(settings.max_outer + 1);
    let mut v = vec![0.0; p];
    // Sparse iterates touch few columns of D, which are then worth caching;
    // dense iterates are cheaper as direct products.
    let cache_columns = 4 * k <= p;
    let mut columns = if cache_columns {
        vec![0.0; p * p]
    } else {
        Vec::new()
    };
    let mut have = vec![false; p];
    let (mut outer, mut inner_total, mut redraws) = (0, 0, 0);
    let mut converged = false;

    while outer < settings.max_outer {
        outer += 1;
        let support = support_of(&gamma);
        let q = op.quadratic_forms(&gamma, &support, first, len);
        let qn = l2(&q);
        if !qn.is_finite() {
            return Err(Error::Numerical("non-finite mode-3 profile".into()));
        }
        objective.push(qn);
        if qn == 0.0 {
            gamma = random_sparse_unit(p, k, rng).values;
            redraws += 1;
            continue;
        }
        let alpha: Vec<f64> = q.iter().map(|x| x / qn).collect();
        let d = op.contract(&alpha, first);
        have.iter_mut().for_each(|h| *h = false);

        let mut g = gamma.clone();
        for _ in 0..settings.max_inner {
            inner_total += 1;
            if cache_columns {
                v.iter_mut().for_each(|x| *x = 0.0);
                for (j, &gj) in g.iter().enumerate() {
                    if gj == 0.0 {
                        continue;
                    }
                    let col = &mut columns[j * p..(j + 1) * p];
                    if !have[j] {
                        d.column(j, col);
                        have[j] = true;
                    }
                    for (acc, &x) in v.iter_mut().zip(col.iter()) {
                        *acc += gj * x;
                    }
                }
            } else {
                d.apply(&g, &support_of(&g), &mut v);
            }
            let vn = l2(&v);
            if !vn.is_finite() {
                return Err(Error::Numerical("non-finite matrix power iterate".into()));
            }
            let mut next = if vn == 0.0 {
                redraws += 1;
                random_sparse_unit(p, k, rng).values
            } else {
                let unit: Vec<f64> = v.iter().map(|x| x / vn).collect();
                let t = truncate_unchecked(&unit, k);
                let tn = l2(&t);
                t.into_iter().map(|x| x / tn).collect()
            };
            if dot(&next, &g) < 0.0 {
                next.iter_mut().for_each(|x| *x = -*x);
            }
            let delta = l2(&next.iter().zip(&g).map(|(a, b)| a - b).collect::<Vec<_>>());
            g = next;
            if delta < settings.tol {
                break;
            }
        }

        if dot(&g, &gamma) < 0.0 {
            g.iter_mut().for_each(|x| *x = -*x);
        }
        let delta = l2(&g.iter().zip(&gamma).map(|(a, b)| a - b).collect::<Vec<_>>());
        gamma = g;
        if delta < settings.tol {
            converged = true;
            break;
        }
    }

    let support = support_of(&gamma);
    objective.push(l2(&op.quadratic_forms(&gamma, &support, first, len)));
    Ok(DecompTrace {
        gamma: ProjectionVector { values: gamma },
        outer_iterations: outer,
        inner_iterations: inner_total,
        objective,
        redraws,
        converged,
    })
}

/// Initial direction: run the iteration without a sparsity constraint
/// (`k = p`) from a random unit start, then keep the `k` leading entries
/// and renormalize. Returns [`Error::Degenerate`] when the tensor gives a
/// zero profile for the random start (an all-zero tensor).
pub fn init_projection<O, R>(
    op: &O,
    k: usize,
    settings: &DecompSettings,
    rng: &mut R,
) -> Result<ProjectionVector>
where
    O: CusumOperator + ?Sized,
    R: Rng + ?Sized,
{
    let p = op.dim();
    if p == 1 {
        return Ok(ProjectionVector::unit_scalar());
    }
    let dense = DecompSettings { k: p, ..*settings };
    dense.validate(p)?;
    if k < 1 || k > p {
        return Err(Error::config(format!("sparsity k must be in 1..={p}, got {k}")));
    }
    let (first, len) = trimmed_range(op.n_slices(), settings.nu1)?;
    let start = random_sparse_unit(p, p, rng);
    let all: Vec<usize> = (0..p).collect();
    if op
        .quadratic_forms(start.values(), &all, first, len)
        .iter()
        .all(|q| *q == 0.0)
    {
        return Err(Error::Degenerate("CUSUM tensor is identically zero".into()));
    }
    let full = decompose(op, &dense, &start, rng)?;
    ProjectionVector::normalized(truncate_unchecked(full.values(), k))
}
