//! Compressed sparse row matrices for graph operators.

use crate::error::{Error, Result};

/// CSR matrix. Entries are stored in row-major order with strictly increasing
/// column indices inside each row, so iteration order is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicate positions and
    /// out-of-range indices are rejected. When `symmetric` is set the pattern
    /// and values are verified to be symmetric.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut entries: Vec<(usize, usize, f64)>,
        symmetric: bool,
    ) -> Result<Self> {
        if let Some(&(r, c, _)) = entries.iter().find(|&&(r, c, _)| r >= rows || c >= cols) {
            return Err(Error::invalid(
                "sparse",
                format!("entry ({r}, {c}) outside {rows}x{cols}"),
            ));
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        if let Some(w) = entries
            .windows(2)
            .find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1))
        {
            return Err(Error::invalid(
                "sparse",
                format!("duplicate entry ({}, {})", w[0].0, w[0].1),
            ));
        }
        let mut row_ptr = vec![0; rows + 1];
        for &(r, _, _) in &entries {
            row_ptr[r + 1] += 1;
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let m = SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx: entries.iter().map(|e| e.1).collect(),
            values: entries.iter().map(|e| e.2).collect(),
            symmetric,
        };
        if symmetric && !m.is_symmetric() {
            return Err(Error::invalid("sparse", "matrix flagged symmetric is not"));
        }
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
            symmetric: true,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1])
                .map(move |p| (r, self.col_idx[p], self.values[p]))
        })
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |p| (self.col_idx[p], self.values[p]))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]];
        match span.binary_search(&c) {
            Ok(i) => self.values[self.row_ptr[r] + i],
            Err(_) => 0.0,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.entries().all(|(r, c, v)| self.get(c, r) == v)
    }

    pub fn transpose(&self) -> SparseMatrix {
        if self.symmetric {
            return self.clone();
        }
        let t: Vec<_> = self.entries().map(|(r, c, v)| (c, r, v)).collect();
        SparseMatrix::from_triplets(self.cols, self.rows, t, false)
            .expect("transpose of valid matrix")
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows * self.cols];
        for (r, c, v) in self.entries() {
            d[r * self.cols + c] = v;
        }
        d
    }

    /// `alpha · self + beta · other` on the union pattern; zeros produced by
    /// cancellation are kept as explicit entries.
    pub fn add_scaled(&self, alpha: f64, other: &SparseMatrix, beta: f64) -> Result<SparseMatrix> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::shape(
                "sparse add",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        let mut out = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.rows {
            let mut a = self.row(r).peekable();
            let mut b = other.row(r).peekable();
            loop {
                match (a.peek().copied(), b.peek().copied()) {
                    (Some((ca, va)), Some((cb, vb))) if ca == cb => {
                        out.push((r, ca, alpha * va + beta * vb));
                        a.next();
                        b.next();
                    }
                    (Some((ca, va)), Some((cb, _))) if ca < cb => {
                        out.push((r, ca, alpha * va));
                        a.next();
                    }
                    (_, Some((cb, vb))) => {
                        out.push((r, cb, beta * vb));
                        b.next();
                    }
                    (Some((ca, va)), None) => {
                        out.push((r, ca, alpha * va));
                        a.next();
                    }
                    (None, None) => break,
                }
            }
        }
        SparseMatrix::from_triplets(self.rows, self.cols, out, self.symmetric && other.symmetric)
    }

    pub fn scale(&self, alpha: f64) -> SparseMatrix {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= alpha);
        m
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec length");
        (0..self.rows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `self · x` for a row-major dense `cols × k` block.
    pub fn mul_dense(&self, x: &[f64], k: usize) -> Vec<f64> {
        assert_eq!(x.len(), self.cols * k, "mul_dense length");
        let mut y = vec![0.0; self.rows * k];
        for r in 0..self.rows {
            let dst = &mut y[r * k..(r + 1) * k];
            for (c, v) in self.row(r) {
                let src = &x[c * k..(c + 1) * k];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += v * s);
            }
        }
        y
    }
}
