// SPDX-License-Identifier: MIT OR Apache-2.0

//! Loading, validating and preprocessing multivariate series, and the block
//! partition of the time axis.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

/// A `p × N` real observation matrix. Row `i` is component series `i`,
/// column `n` is time `n` (0-based here, 1-based in the reports).
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesMatrix {
    p: usize,
    n: usize,
    values: Vec<f64>,
}

impl SeriesMatrix {
    /// Builds a matrix from row-major values. Requires `p ≥ 1`, `N ≥ 2` and
    /// finite entries.
    pub fn new(p: usize, n: usize, values: Vec<f64>) -> Result<Self> {
        if p < 1 || n < 2 {
            return Err(Error::Dimension(format!(
                "series matrix needs p >= 1 and N >= 2, got p = {p}, N = {n}"
            )));
        }
        if values.len() != p * n {
            return Err(Error::shape(format!(
                "expected {} values for a {p} x {n} matrix, got {}",
                p * n,
                values.len()
            )));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "non-finite value in series {} at time {}",
                idx / n + 1,
                idx % n + 1
            )));
        }
        Ok(Self { p, n, values })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let p = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::shape("rows have different lengths"));
        }
        Self::new(p, n, rows.into_iter().flatten().collect())
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn get(&self, i: usize, t: usize) -> f64 {
        self.values[i * self.n + t]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n)
    }

    pub fn transpose_values(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.values.len()];
        for (i, row) in self.rows().enumerate() {
            for (t, &v) in row.iter().enumerate() {
                out[t * self.p + i] = v;
            }
        }
        out
    }

    /// Series-wise affine map `x ↦ scale · x`.
    pub fn scaled(&self, scale: f64) -> Result<Self> {
        Self::new(self.p, self.n, self.values.iter().map(|v| v * scale).collect())
    }

    /// Reorders the component series: output row `i` is input row `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.p)?;
        let values = perm
            .iter()
            .flat_map(|&src| self.row(src).iter().copied())
            .collect();
        Self::new(self.p, self.n, values)
    }

    /// Subtracts each series' sample mean.
    pub fn centered(&self) -> Self {
        let mut values = self.values.clone();
        for row in values.chunks_exact_mut(self.n) {
            let mean = row.iter().sum::<f64>() / self.n as f64;
            row.iter_mut().for_each(|v| *v -= mean);
        }
        Self { values, ..*self }
    }
}

pub(crate) fn check_permutation(perm: &[usize], p: usize) -> Result<()> {
    let mut seen = vec![false; p];
    if perm.len() != p {
        return Err(Error::shape(format!(
            "permutation of length {} for p = {p}",
            perm.len()
        )));
    }
    for &i in perm {
        if i >= p || std::mem::replace(&mut seen[i], true) {
            return Err(Error::input("not a permutation"));
        }
    }
    Ok(())
}

/// How a CSV file lays out the series.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// Each CSV row is one component series.
    RowsAreSeries,
    /// Each CSV column is one component series (one row per time point).
    #[default]
    ColumnsAreSeries,
}

impl std::str::FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rows" | "rows-are-series" => Ok(Self::RowsAreSeries),
            "columns" | "cols" | "columns-are-series" => Ok(Self::ColumnsAreSeries),
            other => Err(Error::config(format!("unknown orientation {other:?}"))),
        }
    }
}

fn is_numeric(cell: &str) -> bool {
    cell.trim().parse::<f64>().is_ok()
}

/// Reads a comma-separated numeric file. A first row whose cells are all
/// non-numeric is treated as a header, and a first column whose data cells
/// are all non-numeric as row labels; both are skipped.
pub fn load_csv(path: impl AsRef<Path>, orientation: Orientation) -> Result<SeriesMatrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, orientation)
}

pub fn parse_csv(text: &str, orientation: Orientation) -> Result<SeriesMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::input(format!("malformed CSV: {e}")))?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Dimension("empty input".into()));
    }

    let skip_row = usize::from(records[0].iter().all(|c| !is_numeric(c)));
    let body = &records[skip_row..];
    let skip_col = usize::from(!body.is_empty() && body.iter().all(|r| r.len() >= 2 && !is_numeric(&r[0])));

    let width = body.first().map_or(0, |r| r.len());
    let mut grid: Vec<Vec<f64>> = Vec::with_capacity(body.len());
    for (ri, rec) in body.iter().enumerate() {
        let row_no = ri + skip_row + 1;
        if rec.len() != width {
            return Err(Error::shape(format!(
                "row {row_no} has {} cells, expected {width}",
                rec.len()
            )));
        }
        let row = rec
            .iter()
            .enumerate()
            .skip(skip_col)
            .map(|(ci, cell)| {
                cell.parse::<f64>().map_err(|_| Error::Parse {
                    row: row_no,
                    column: ci + 1,
                    cell: cell.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        grid.push(row);
    }

    let rows = grid.len();
    let cols = width.saturating_sub(skip_col);
    let (p, n, values) = match orientation {
        Orientation::RowsAreSeries => (rows, cols, grid.into_iter().flatten().collect()),
        Orientation::ColumnsAreSeries => {
            let mut values = vec![0.0; rows * cols];
            for (t, row) in grid.iter().enumerate() {
                for (i, &v) in row.iter().enumerate() {
                    values[i * rows + t] = v;
                }
            }
            (cols, rows, values)
        }
    };
    SeriesMatrix::new(p, n, values)
}

/// Writes the matrix with one column per series and a `s1,s2,...` header.
pub fn write_csv(x: &SeriesMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let io_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record((1..=x.p()).map(|i| format!("s{i}")))
        .map_err(io_err)?;
    for t in 0..x.len() {
        w.write_record((0..x.p()).map(|i| format!("{:e}", x.get(i, t))))
            .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Standard normal quantile `Φ⁻¹(q)` for `q ∈ (0, 1)`.
pub fn normal_quantile(q: f64) -> f64 {
    Normal::standard().inverse_cdf(q)
}

/// Per-series rank transform `x ↦ Φ⁻¹((r − 1/2)/N)` where `r` counts the
/// values of that series that are `≤ x`.
pub fn normal_quantile_transform(x: &SeriesMatrix) -> Result<SeriesMatrix> {
    let n = x.len();
    if n < 2 {
        return Err(Error::Dimension(format!("need N >= 2, got {n}")));
    }
    let nf = n as f64;
    let mut values = Vec::with_capacity(x.values.len());
    let mut sorted = vec![0.0; n];
    for row in x.rows() {
        sorted.copy_from_slice(row);
        sorted.sort_by(f64::total_cmp);
        values.extend(row.iter().map(|&v| {
            let r = sorted.partition_point(|&s| s <= v);
            normal_quantile((r as f64 - 0.5) / nf)
        }));
    }
    SeriesMatrix::new(x.p, n, values)
}

/// Equal-length block partition of the time axis: block `b` (1-based)
/// covers times `L(b−1)+1 ..= Lb`. Trailing `N − B·L` samples are unused.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPlan {
    pub block_length: usize,
    pub n_blocks: usize,
}

impl BlockPlan {
    /// Boundary `n_b = L·b`.
    pub fn boundary(&self, b: usize) -> usize {
        self.block_length * b
    }

    /// 0-based time range of block `b` (1-based).
    pub fn block_range(&self, b: usize) -> std::ops::Range<usize> {
        self.boundary(b - 1)..self.boundary(b)
    }

    pub fn covered(&self) -> usize {
        self.block_length * self.n_blocks
    }
}

pub fn partition_blocks(x: &SeriesMatrix, block_length: usize) -> Result<BlockPlan> {
    plan_for_length(x.len(), block_length)
}

pub fn plan_for_length(n: usize, block_length: usize) -> Result<BlockPlan> {
    if block_length < 2 || 2 * block_length > n {
        return Err(Error::config(format!(
            "block length must satisfy 2 <= L <= N/2, got L = {block_length}, N = {n}"
        )));
    }
    Ok(BlockPlan {
        block_length,
        n_blocks: n / block_length,
    })
}
