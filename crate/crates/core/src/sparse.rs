//! Row-sparse nonnegative score matrices.
//!
//! Rows are kept sorted by column index. Every product and sum walks rows in
//! ascending column order, so the floating-point accumulation order of each
//! output entry is fixed regardless of how rows are scheduled across threads.

use rayon::prelude::*;

use crate::error::{Result, RfeError};

/// A single sparse row: `(column, value)` pairs sorted by column.
pub type SparseRow = Vec<(usize, f64)>;

/// Square `n x n` matrix of nonnegative scores; absent entries are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseScoreMatrix {
    n: usize,
    rows: Vec<SparseRow>,
}

impl SparseScoreMatrix {
    /// An all-zero matrix.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            rows: vec![Vec::new(); n],
        }
    }

    /// Builds a matrix from arbitrary per-row entries, validating them.
    ///
    /// Entries may come in any column order; duplicates, negative, or
    /// non-finite values are rejected. Explicit zeros are dropped.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if rows.len() != n {
            return Err(RfeError::Dimension {
                expected: n,
                found: rows.len(),
            });
        }
        let mut out = Vec::with_capacity(n);
        for (i, mut row) in rows.into_iter().enumerate() {
            for &(c, v) in &row {
                if c >= n {
                    return Err(RfeError::input(format!(
                        "row {i}: column {c} out of range for n={n}"
                    )));
                }
                if !v.is_finite() || v < 0.0 {
                    return Err(RfeError::input(format!(
                        "row {i}: score {v} at column {c} is not a finite nonnegative value"
                    )));
                }
            }
            row.sort_by_key(|&(c, _)| c);
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(RfeError::input(format!("row {i}: duplicate column entry")));
            }
            row.retain(|&(_, v)| v > 0.0);
            out.push(row);
        }
        Ok(Self { n, rows: out })
    }

    /// Rows must already be sorted, duplicate-free, and strictly positive.
    pub(crate) fn from_sorted_rows(n: usize, rows: Vec<SparseRow>) -> Self {
        debug_assert_eq!(rows.len(), n);
        debug_assert!(rows.iter().all(|r| {
            r.windows(2).all(|w| w[0].0 < w[1].0)
                && r.iter().all(|&(c, v)| c < n && v > 0.0 && v.is_finite())
        }));
        Self { n, rows }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.rows[i];
        match row.binary_search_by_key(&j, |&(c, _)| c) {
            Ok(p) => row[p].1,
            Err(_) => 0.0,
        }
    }

    /// Multiplies every entry by `factor` (must be positive and finite).
    pub fn scaled(&self, factor: f64) -> Self {
        assert!(factor > 0.0 && factor.is_finite());
        let rows = self
            .rows
            .iter()
            .map(|r| r.iter().map(|&(c, v)| (c, v * factor)).collect())
            .collect();
        Self { n: self.n, rows }
    }

    pub fn transpose(&self) -> Self {
        let mut rows: Vec<SparseRow> = vec![Vec::new(); self.n];
        // Visiting source rows in ascending order keeps target rows sorted.
        for (i, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                rows[c].push((i, v));
            }
        }
        Self { n: self.n, rows }
    }

    /// Sparse product `self * other`, row by row.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if other.n != self.n {
            return Err(RfeError::Dimension {
                expected: self.n,
                found: other.n,
            });
        }
        let n = self.n;
        let rows = self
            .rows
            .par_iter()
            .map_init(
                || Accumulator::new(n),
                |acc, row| {
                    for &(k, a) in row {
                        for &(c, b) in other.row(k) {
                            acc.add(c, a * b);
                        }
                    }
                    acc.drain_sorted()
                },
            )
            .collect();
        Ok(Self::from_sorted_rows(n, rows))
    }

    /// Dense copy, mainly for inspection and small-instance checks.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                out[i][c] = v;
            }
        }
        out
    }

    /// Adds `other` into `self` entry-wise.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if other.n != self.n {
            return Err(RfeError::Dimension {
                expected: self.n,
                found: other.n,
            });
        }
        for (row, add) in self.rows.iter_mut().zip(&other.rows) {
            *row = merge_add(row, add);
        }
        Ok(())
    }
}

fn merge_add(a: &[(usize, f64)], b: &[(usize, f64)]) -> SparseRow {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push((a[i].0, a[i].1 + b[j].1));
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Dot product of two sorted sparse rows.
///
/// Terms are summed in ascending column order, so `sparse_dot(a, b)` and
/// `sparse_dot(b, a)` are bit-identical.
pub fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut sum = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                sum += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    sum
}

pub fn sparse_norm(a: &[(usize, f64)]) -> f64 {
    a.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt()
}

/// Dense scratch row with a touched-column list, reused across rows.
pub(crate) struct Accumulator {
    values: Vec<f64>,
    touched: Vec<usize>,
}

impl Accumulator {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
            touched: Vec::new(),
        }
    }

    #[inline]
    pub(crate) fn add(&mut self, col: usize, v: f64) {
        if self.values[col] == 0.0 {
            if v == 0.0 {
                return;
            }
            self.touched.push(col);
        }
        self.values[col] += v;
    }

    pub(crate) fn drain_sorted(&mut self) -> SparseRow {
        self.touched.sort_unstable();
        let mut out = Vec::with_capacity(self.touched.len());
        for &c in &self.touched {
            let v = self.values[c];
            if v > 0.0 {
                out.push((c, v));
            }
            self.values[c] = 0.0;
        }
        self.touched.clear();
        out
    }
}

/// Dense copy of one sparse row, for repeated lookups against many rows.
pub(crate) struct Scatter {
    values: Vec<f64>,
}

impl Scatter {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
        }
    }

    pub(crate) fn load(&mut self, row: &[(usize, f64)]) {
        for &(c, v) in row {
            self.values[c] = v;
        }
    }

    pub(crate) fn clear(&mut self, row: &[(usize, f64)]) {
        for &(c, _) in row {
            self.values[c] = 0.0;
        }
    }

    /// Dot product against the loaded row, summed over `other` in column order.
    ///
    /// Columns outside the loaded support contribute exact zeros, so the
    /// result equals [`sparse_dot`] bit for bit.
    #[inline]
    pub(crate) fn dot(&self, other: &[(usize, f64)]) -> f64 {
        other.iter().map(|&(c, v)| self.values[c] * v).sum()
    }

    #[inline]
    pub(crate) fn get(&self, col: usize) -> f64 {
        self.values[col]
    }
}
