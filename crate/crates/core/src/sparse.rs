//! Compressed sparse row storage.
//!
//! [`SparseMatrix`] is the container every assembled operator lives in. Rows
//! keep their column indices strictly increasing and duplicates are summed
//! on construction, so two matrices with the same entries have the same
//! layout.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

/// Accumulates `(row, col, value)` triplets for [`SparseMatrix::from_triplets`].
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            ..Default::default()
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            rows: Vec::with_capacity(cap),
            cols: Vec::with_capacity(cap),
            vals: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        self.rows.push(row);
        self.cols.push(col);
        self.vals.push(val);
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn build(self) -> Result<SparseMatrix> {
        SparseMatrix::from_triplets(&self.rows, &self.cols, &self.vals, (self.nrows, self.ncols))
    }
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: diag.to_vec(),
        }
    }

    /// Builds a matrix from coordinate triplets, summing duplicates.
    ///
    /// Explicit zeros are kept so that the sparsity pattern only depends on
    /// which positions were touched.
    pub fn from_triplets(
        rows: &[usize],
        cols: &[usize],
        vals: &[f64],
        shape: (usize, usize),
    ) -> Result<Self> {
        let (nrows, ncols) = shape;
        if rows.len() != cols.len() || rows.len() != vals.len() {
            return Err(Error::Dimension(format!(
                "triplet arrays have lengths {}, {}, {}",
                rows.len(),
                cols.len(),
                vals.len()
            )));
        }
        for (&r, &c) in rows.iter().zip(cols) {
            if r >= nrows || c >= ncols {
                return Err(Error::IndexOutOfBounds {
                    row: r,
                    col: c,
                    nrows,
                    ncols,
                });
            }
        }

        // counting sort by row, then sort each row by column
        let mut counts = vec![0usize; nrows + 1];
        for &r in rows {
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut tmp_cols = vec![0usize; vals.len()];
        let mut tmp_vals = vec![0.0; vals.len()];
        for ((&r, &c), &v) in rows.iter().zip(cols).zip(vals) {
            let slot = next[r];
            tmp_cols[slot] = c;
            tmp_vals[slot] = v;
            next[r] += 1;
        }

        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(vals.len());
        let mut data = Vec::with_capacity(vals.len());
        indptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for i in 0..nrows {
            let (lo, hi) = (counts[i], counts[i + 1]);
            order.clear();
            order.extend(lo..hi);
            order.sort_unstable_by_key(|&k| tmp_cols[k]);
            let mut last: Option<usize> = None;
            for &k in &order {
                let c = tmp_cols[k];
                if last == Some(c) {
                    *data.last_mut().unwrap() += tmp_vals[k];
                } else {
                    indices.push(c);
                    data.push(tmp_vals[k]);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        })
    }

    /// Builds from raw CSR arrays, validating the layout invariants.
    pub fn from_csr(
        nrows: usize,
        ncols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        data: Vec<f64>,
    ) -> Result<Self> {
        if indptr.len() != nrows + 1 || indices.len() != data.len() {
            return Err(Error::Dimension("inconsistent CSR arrays".into()));
        }
        if indptr[0] != 0 || indptr[nrows] != indices.len() {
            return Err(Error::Dimension("row pointer does not span the data".into()));
        }
        for i in 0..nrows {
            let row = &indices[indptr[i]..indptr[i + 1]];
            for (k, &c) in row.iter().enumerate() {
                if c >= ncols {
                    return Err(Error::IndexOutOfBounds {
                        row: i,
                        col: c,
                        nrows,
                        ncols,
                    });
                }
                if k > 0 && row[k - 1] >= c {
                    return Err(Error::Dimension(format!(
                        "row {i} has unsorted or duplicate columns"
                    )));
                }
            }
        }
        Ok(Self {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        })
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[lo..hi], &self.data[lo..hi])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    /// `y = A x`
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.data[k] * x[self.indices[k]];
            }
            *yi = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    /// `y += alpha * A x`
    pub fn matvec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.data[k] * x[self.indices[k]];
            }
            *yi += alpha * acc;
        }
    }

    /// `y += alpha * A^T x`
    pub fn matvec_transpose_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let s = alpha * xi;
            for k in self.indptr[i]..self.indptr[i + 1] {
                y[self.indices[k]] += self.data[k] * s;
            }
        }
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        self.matvec_transpose_add(1.0, x, &mut y);
        y
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut indices = vec![0usize; self.nnz()];
        let mut data = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                let c = self.indices[k];
                let slot = next[c];
                indices[slot] = i;
                data[slot] = self.data[k];
                next[c] += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr: counts,
            indices,
            data,
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// `alpha * A + beta * B` over the union pattern.
    pub fn add_scaled(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "cannot add {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::with_capacity(self.nnz() + other.nnz());
        let mut data = Vec::with_capacity(self.nnz() + other.nnz());
        indptr.push(0);
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                let a = ca.get(p).copied().unwrap_or(usize::MAX);
                let b = cb.get(q).copied().unwrap_or(usize::MAX);
                if a == b {
                    indices.push(a);
                    data.push(alpha * va[p] + beta * vb[q]);
                    p += 1;
                    q += 1;
                } else if a < b {
                    indices.push(a);
                    data.push(alpha * va[p]);
                    p += 1;
                } else {
                    indices.push(b);
                    data.push(beta * vb[q]);
                    q += 1;
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.add_scaled(1.0, other, 1.0)
    }

    /// Sparse product `A B` (row-wise Gustavson).
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.ncols != other.nrows {
            return Err(Error::Dimension(format!(
                "cannot multiply {:?} by {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut marker = vec![usize::MAX; other.ncols];
        let mut acc = vec![0.0; other.ncols];
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        let mut row_cols: Vec<usize> = Vec::new();
        indptr.push(0);
        for i in 0..self.nrows {
            row_cols.clear();
            let (ca, va) = self.row(i);
            for (&k, &a) in ca.iter().zip(va) {
                let (cb, vb) = other.row(k);
                for (&j, &b) in cb.iter().zip(vb) {
                    if marker[j] != i {
                        marker[j] = i;
                        acc[j] = 0.0;
                        row_cols.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            row_cols.sort_unstable();
            for &j in &row_cols {
                indices.push(j);
                data.push(acc[j]);
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            nrows: self.nrows,
            ncols: other.ncols,
            indptr,
            indices,
            data,
        })
    }

    /// Multiplies row `i` by `d[i]`.
    pub fn scale_rows(&self, d: &[f64]) -> Self {
        let mut out = self.clone();
        for i in 0..self.nrows {
            for k in out.indptr[i]..out.indptr[i + 1] {
                out.data[k] *= d[i];
            }
        }
        out
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// Extracts the submatrix with the given (sorted or unsorted) row and
    /// column index lists. Output indices follow list order.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (new, &old) in cols.iter().enumerate() {
            col_map[old] = new;
        }
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        let mut entries: Vec<(usize, f64)> = Vec::new();
        indptr.push(0);
        for &r in rows {
            entries.clear();
            let (c, v) = self.row(r);
            for (&j, &x) in c.iter().zip(v) {
                let nj = col_map[j];
                if nj != usize::MAX {
                    entries.push((nj, x));
                }
            }
            entries.sort_unstable_by_key(|e| e.0);
            for &(j, x) in &entries {
                indices.push(j);
                data.push(x);
            }
            indptr.push(indices.len());
        }
        Self {
            nrows: rows.len(),
            ncols: cols.len(),
            indptr,
            indices,
            data,
        }
    }

    /// Assembles a block matrix. `blocks[i][j]` may be `None` for a zero
    /// block; every block row needs at least one present block to fix its
    /// height, and likewise every block column.
    pub fn from_blocks(blocks: &[Vec<Option<&SparseMatrix>>]) -> Result<Self> {
        let nbr = blocks.len();
        let nbc = blocks.first().map_or(0, |r| r.len());
        let mut heights = vec![None; nbr];
        let mut widths = vec![None; nbc];
        for (bi, row) in blocks.iter().enumerate() {
            if row.len() != nbc {
                return Err(Error::Dimension("ragged block layout".into()));
            }
            for (bj, blk) in row.iter().enumerate() {
                if let Some(b) = blk {
                    for (slot, val) in [(&mut heights[bi], b.nrows), (&mut widths[bj], b.ncols)] {
                        match slot {
                            Some(v) if *v != val => {
                                return Err(Error::Dimension(format!(
                                    "block ({bi}, {bj}) has inconsistent shape"
                                )))
                            }
                            _ => *slot = Some(val),
                        }
                    }
                }
            }
        }
        let heights: Vec<usize> = heights
            .into_iter()
            .map(|h| h.ok_or_else(|| Error::Dimension("empty block row".into())))
            .collect::<Result<_>>()?;
        let widths: Vec<usize> = widths
            .into_iter()
            .map(|w| w.ok_or_else(|| Error::Dimension("empty block column".into())))
            .collect::<Result<_>>()?;
        let col_off: Vec<usize> = widths
            .iter()
            .scan(0, |s, &w| {
                let o = *s;
                *s += w;
                Some(o)
            })
            .collect();
        let nrows: usize = heights.iter().sum();
        let ncols: usize = widths.iter().sum();

        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for (bi, row) in blocks.iter().enumerate() {
            for i in 0..heights[bi] {
                for (bj, blk) in row.iter().enumerate() {
                    if let Some(b) = blk {
                        let (c, v) = b.row(i);
                        indices.extend(c.iter().map(|&j| j + col_off[bj]));
                        data.extend_from_slice(v);
                    }
                }
                indptr.push(indices.len());
            }
        }
        Ok(Self {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        })
    }

    /// Largest absolute entry of `A - A^T`, relative to the largest entry of `A`.
    pub fn relative_asymmetry(&self) -> f64 {
        let t = self.transpose();
        let diff = self.add_scaled(1.0, &t, -1.0).expect("square");
        let num = diff.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let den = self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.iter() {
            d[(i, j)] += v;
        }
        d
    }

    pub fn from_dense(d: &nalgebra::DMatrix<f64>) -> Self {
        let mut b = TripletBuilder::new(d.nrows(), d.ncols());
        for j in 0..d.ncols() {
            for i in 0..d.nrows() {
                if d[(i, j)] != 0.0 {
                    b.push(i, j, d[(i, j)]);
                }
            }
        }
        b.build().expect("in-bounds")
    }

    /// Writes the matrix in Matrix Market coordinate format (1-based).
    pub fn write_matrix_market<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(out, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (i, j, v) in self.iter() {
            writeln!(out, "{} {} {:.17e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }

    pub fn read_matrix_market<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::MatrixMarket("empty input".into()))??;
        let lower = header.to_ascii_lowercase();
        if !lower.starts_with("%%matrixmarket matrix coordinate real") {
            return Err(Error::MatrixMarket(format!("unsupported header: {header}")));
        }
        let symmetric = lower.contains("symmetric");
        let mut shape: Option<(usize, usize, usize)> = None;
        let mut b = TripletBuilder::new(0, 0);
        for line in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('%') {
                continue;
            }
            let parts: Vec<&str> = t.split_whitespace().collect();
            let parse_usize = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| Error::MatrixMarket(format!("{s}: {e}")))
            };
            match shape {
                None => {
                    if parts.len() != 3 {
                        return Err(Error::MatrixMarket(format!("bad size line: {t}")));
                    }
                    let s = (parse_usize(parts[0])?, parse_usize(parts[1])?, parse_usize(parts[2])?);
                    b = TripletBuilder::with_capacity(s.0, s.1, s.2);
                    shape = Some(s);
                }
                Some(_) => {
                    if parts.len() != 3 {
                        return Err(Error::MatrixMarket(format!("bad entry line: {t}")));
                    }
                    let i = parse_usize(parts[0])?;
                    let j = parse_usize(parts[1])?;
                    let v: f64 = parts[2]
                        .parse()
                        .map_err(|e| Error::MatrixMarket(format!("{}: {e}", parts[2])))?;
                    if i == 0 || j == 0 {
                        return Err(Error::MatrixMarket("indices are 1-based".into()));
                    }
                    b.push(i - 1, j - 1, v);
                    if symmetric && i != j {
                        b.push(j - 1, i - 1, v);
                    }
                }
            }
        }
        if shape.is_none() {
            return Err(Error::MatrixMarket("missing size line".into()));
        }
        b.build()
    }
}

// Small dense-vector helpers shared by the solvers.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
