//! Sparse adjacency storage and the sparse-dense product used by every
//! propagation scheme.
//!
//! Only compressed sparse row storage is provided. Rows are kept canonical:
//! column indices strictly increase within a row and no explicit zeros are
//! stored by the edge-list constructor.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Row-major dense matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            data: vec![0.0; n_rows * n_cols],
        }
    }

    /// Wraps a row-major buffer, rejecting wrong lengths and non-finite entries.
    pub fn from_vec(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::BadBufferLength {
                len: data.len(),
                rows: n_rows,
                cols: n_cols,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / n_cols.max(1),
                col: pos % n_cols.max(1),
            });
        }
        Ok(Self {
            n_rows,
            n_cols,
            data,
        })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != n_cols {
                return Err(Error::ShapeMismatch {
                    context: "from_rows",
                    left_rows: 1,
                    left_cols: n_cols,
                    right_rows: 1,
                    right_cols: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), n_cols, data)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.n_cols + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.n_cols..(row + 1) * self.n_cols]
    }

    #[inline]
    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.data[row * self.n_cols..(row + 1) * self.n_cols]
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        DenseMatrix {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            data,
        }
    }

    /// Largest absolute entrywise difference; `f64::INFINITY` on shape mismatch.
    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Validates and wraps raw CSR arrays.
    pub fn from_parts(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let bad = |what: &'static str| Error::InvalidConfig(alloc::format!("csr: {what}"));
        if row_offsets.len() != n_rows + 1 || row_offsets[0] != 0 {
            return Err(bad("row_offsets must have n_rows+1 entries starting at 0"));
        }
        if col_indices.len() != values.len() || row_offsets[n_rows] != values.len() {
            return Err(bad("row_offsets[n_rows] must equal the number of stored values"));
        }
        for r in 0..n_rows {
            let (lo, hi) = (row_offsets[r], row_offsets[r + 1]);
            if lo > hi {
                return Err(bad("row_offsets must be non-decreasing"));
            }
            let cols = &col_indices[lo..hi];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(bad("column indices must strictly increase within a row"));
            }
            if cols.last().is_some_and(|&c| c >= n_cols) {
                return Err(bad("column index out of range"));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: row_offsets.partition_point(|&o| o <= pos) - 1,
                col: col_indices[pos],
            });
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Symmetric binary adjacency from an undirected edge list.
    ///
    /// Both orientations are stored, duplicates collapse and self-loops in the
    /// input are dropped.
    pub fn from_edge_list(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::EdgeOutOfRange { u, v, n });
            }
            if u != v {
                neighbors[u].push(v);
                neighbors[v].push(u);
            }
        }
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
            col_indices.extend_from_slice(list);
            row_offsets.push(col_indices.len());
        }
        let values = vec![1.0; col_indices.len()];
        Ok(Self {
            n_rows: n,
            n_cols: n,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Stored `(column, value)` pairs of one row.
    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[row]..self.row_offsets[row + 1];
        self.col_indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Entry lookup; zero when not stored.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let range = self.row_offsets[row]..self.row_offsets[row + 1];
        match self.col_indices[range.clone()].binary_search(&col) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                out.set(r, c, v);
            }
        }
        out
    }

    /// `D̃^{-1/2} (A + I) D̃^{-1/2}` where `D̃` is the degree matrix of `A + I`.
    ///
    /// Any self-loops already stored are replaced by a single unit loop, and
    /// the input is treated as binary.
    pub fn sym_normalize_with_self_loops(&self) -> Result<CsrMatrix> {
        if self.n_rows != self.n_cols {
            return Err(Error::NotSquare {
                rows: self.n_rows,
                cols: self.n_cols,
            });
        }
        let n = self.n_rows;
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(self.nnz() + n);
        row_offsets.push(0);
        for r in 0..n {
            let mut inserted = false;
            for (c, v) in self.row(r) {
                if c == r || v == 0.0 {
                    continue;
                }
                if !inserted && c > r {
                    col_indices.push(r);
                    inserted = true;
                }
                col_indices.push(c);
            }
            if !inserted {
                col_indices.push(r);
            }
            row_offsets.push(col_indices.len());
        }
        let inv_sqrt_deg: Vec<f64> = (0..n)
            .map(|r| 1.0 / libm::sqrt((row_offsets[r + 1] - row_offsets[r]) as f64))
            .collect();
        let mut values = Vec::with_capacity(col_indices.len());
        for r in 0..n {
            for &c in &col_indices[row_offsets[r]..row_offsets[r + 1]] {
                values.push(inv_sqrt_deg[r] * inv_sqrt_deg[c]);
            }
        }
        Ok(CsrMatrix {
            n_rows: n,
            n_cols: n,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Exact sparse-dense product `self · x`.
    pub fn spmm(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if self.n_cols != x.n_rows() {
            return Err(Error::ShapeMismatch {
                context: "spmm",
                left_rows: self.n_rows,
                left_cols: self.n_cols,
                right_rows: x.n_rows(),
                right_cols: x.n_cols(),
            });
        }
        let mut out = DenseMatrix::zeros(self.n_rows, x.n_cols());
        for r in 0..self.n_rows {
            let acc = out.row_mut(r);
            for (c, v) in self.row(r) {
                for (o, xv) in acc.iter_mut().zip(x.row(c)) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }
}
