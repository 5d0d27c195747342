//! Compressed-sparse-row matrices and the elementary kernels built on them.
//!
//! [`SparseBinaryMatrix`] stores only the pattern: every stored entry is an
//! implicit `1`. [`SignedSparseMatrix`] adds a `±1` value per entry and
//! carries the train/test sign encoding through the expander.
//! [`SparseRealMatrix`] holds the valued output of a deterministic Kronecker
//! expansion.
//!
//! All three are immutable once built and can be shared between threads.

use std::io::{BufRead, Write};

use crate::dense::DenseSmallMatrix;
use crate::error::{Error, Result};

/// A matrix that can be applied to vectors, as consumed by
/// [`crate::spectral::truncated_svd`].
///
/// Implementations must accumulate in a fixed order so repeated calls give
/// bit-identical results.
pub trait LinearOperator: Sync {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    /// `y = A x`, with `x.len() == n_cols` and `y.len() == n_rows`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// `y = Aᵀ x`, with `x.len() == n_rows` and `y.len() == n_cols`.
    fn apply_t(&self, x: &[f64], y: &mut [f64]);
}

fn check_len(what: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            expected: format!("{what} of length {expected}"),
            actual: format!("length {actual}"),
        });
    }
    Ok(())
}

/// Validates CSR structure shared by every sparse type here.
fn validate_csr(n_rows: usize, n_cols: usize, offsets: &[usize], cols: &[usize]) -> Result<()> {
    if offsets.len() != n_rows + 1 {
        return Err(Error::Malformed(format!(
            "row_offsets has length {}, expected {}",
            offsets.len(),
            n_rows + 1
        )));
    }
    if offsets[0] != 0 || offsets[n_rows] != cols.len() {
        return Err(Error::Malformed("row_offsets must start at 0 and end at nnz".into()));
    }
    for r in 0..n_rows {
        let (lo, hi) = (offsets[r], offsets[r + 1]);
        if lo > hi {
            return Err(Error::Malformed(format!("row_offsets decreases at row {r}")));
        }
        let row = &cols[lo..hi];
        if let Some(&c) = row.iter().find(|&&c| c >= n_cols) {
            return Err(Error::Malformed(format!(
                "column {c} in row {r} exceeds {n_cols} columns"
            )));
        }
        if row.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Malformed(format!(
                "columns in row {r} are not strictly increasing"
            )));
        }
    }
    Ok(())
}

/// Sorts `(row, col, payload)` entries into CSR arrays; later duplicates of a
/// coordinate are dropped.
fn build_csr<T: Copy>(n_rows: usize, mut entries: Vec<(usize, usize, T)>) -> (Vec<usize>, Vec<usize>, Vec<T>) {
    entries.sort_by_key(|&(r, c, _)| (r, c));
    entries.dedup_by_key(|e| (e.0, e.1));
    let mut offsets = vec![0usize; n_rows + 1];
    for &(r, _, _) in &entries {
        offsets[r + 1] += 1;
    }
    for r in 0..n_rows {
        offsets[r + 1] += offsets[r];
    }
    let cols = entries.iter().map(|e| e.1).collect();
    let vals = entries.iter().map(|e| e.2).collect();
    (offsets, cols, vals)
}

/// Inverse of a permutation given as `perm[old] = new`.
fn permute_csr<T: Copy>(
    n_rows: usize,
    offsets: &[usize],
    cols: &[usize],
    vals: &[T],
    row_perm: &[usize],
    col_perm: &[usize],
) -> (Vec<usize>, Vec<usize>, Vec<T>) {
    // Counting sort by new row, then sort each row's columns.
    let mut new_offsets = vec![0usize; n_rows + 1];
    for r in 0..n_rows {
        new_offsets[row_perm[r] + 1] = offsets[r + 1] - offsets[r];
    }
    for r in 0..n_rows {
        new_offsets[r + 1] += new_offsets[r];
    }
    let nnz = cols.len();
    let mut new_cols = vec![0usize; nnz];
    let mut new_vals: Vec<T> = Vec::with_capacity(nnz);
    let mut pairs: Vec<(usize, T)> = Vec::new();
    let mut staged: Vec<Option<T>> = vec![None; nnz];
    for r in 0..n_rows {
        let dst = new_offsets[row_perm[r]];
        pairs.clear();
        pairs.extend((offsets[r]..offsets[r + 1]).map(|k| (col_perm[cols[k]], vals[k])));
        pairs.sort_unstable_by_key(|p| p.0);
        for (t, &(c, v)) in pairs.iter().enumerate() {
            new_cols[dst + t] = c;
            staged[dst + t] = Some(v);
        }
    }
    new_vals.extend(staged.into_iter().map(|v| v.expect("every slot filled")));
    (new_offsets, new_cols, new_vals)
}

/// Keeps the entries whose position in row-major order is flagged in `mask`.
fn select_csr<T: Copy>(
    n_rows: usize,
    offsets: &[usize],
    cols: &[usize],
    vals: &[T],
    mask: &[bool],
) -> (Vec<usize>, Vec<usize>, Vec<T>) {
    let mut new_offsets = Vec::with_capacity(n_rows + 1);
    new_offsets.push(0);
    let mut new_cols = Vec::new();
    let mut new_vals = Vec::new();
    for r in 0..n_rows {
        for k in offsets[r]..offsets[r + 1] {
            if mask[k] {
                new_cols.push(cols[k]);
                new_vals.push(vals[k]);
            }
        }
        new_offsets.push(new_cols.len());
    }
    (new_offsets, new_cols, new_vals)
}

/// Binary matrix in compressed sparse row layout with implicit unit values.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SparseBinaryMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
}

impl SparseBinaryMatrix {
    /// Wraps raw CSR arrays after checking every structural invariant.
    pub fn from_csr(n_rows: usize, n_cols: usize, row_offsets: Vec<usize>, col_indices: Vec<usize>) -> Result<Self> {
        validate_csr(n_rows, n_cols, &row_offsets, &col_indices)?;
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
        })
    }

    /// Builds a matrix from coordinate lists. Duplicate coordinates collapse
    /// to a single entry.
    pub fn from_triplets(rows: &[usize], cols: &[usize], n_rows: usize, n_cols: usize) -> Result<Self> {
        check_len("column list", rows.len(), cols.len())?;
        Self::from_pairs(rows.iter().copied().zip(cols.iter().copied()), n_rows, n_cols)
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>, n_rows: usize, n_cols: usize) -> Result<Self> {
        let mut entries = Vec::new();
        for (position, (row, col)) in pairs.into_iter().enumerate() {
            if row >= n_rows || col >= n_cols {
                return Err(Error::IndexOutOfRange {
                    axis: if row >= n_rows { "row" } else { "column" },
                    position,
                    row,
                    col,
                    n_rows,
                    n_cols,
                });
            }
            entries.push((row, col, ()));
        }
        let (row_offsets, col_indices, _) = build_csr(n_rows, entries);
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
        })
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_offsets: vec![0; n_rows + 1],
            col_indices: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
        }
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

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    /// Sorted column indices of row `i`.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i < self.n_rows && self.row(i).binary_search(&j).is_ok()
    }

    /// Entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_rows).flat_map(move |r| self.row(r).iter().map(move |&c| (r, c)))
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.row_offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn col_sums(&self) -> Vec<usize> {
        let mut sums = vec![0usize; self.n_cols];
        for &c in &self.col_indices {
            sums[c] += 1;
        }
        sums
    }

    pub fn transpose(&self) -> Self {
        let mut offsets = vec![0usize; self.n_cols + 1];
        for &c in &self.col_indices {
            offsets[c + 1] += 1;
        }
        for c in 0..self.n_cols {
            offsets[c + 1] += offsets[c];
        }
        let mut next = offsets.clone();
        let mut rows = vec![0usize; self.nnz()];
        // Rows are visited in increasing order, so each output row stays sorted.
        for (r, c) in self.iter() {
            rows[next[c]] = r;
            next[c] += 1;
        }
        Self {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_offsets: offsets,
            col_indices: rows,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("input vector", self.n_cols, x.len())?;
        let mut y = vec![0.0; self.n_rows];
        self.apply(x, &mut y);
        Ok(y)
    }

    pub fn matvec_t(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("input vector", self.n_rows, x.len())?;
        let mut y = vec![0.0; self.n_cols];
        self.apply_t(x, &mut y);
        Ok(y)
    }

    /// Keeps entry `k` (row-major position) iff `mask[k]`.
    pub fn select(&self, mask: &[bool]) -> Self {
        assert_eq!(mask.len(), self.nnz(), "mask length must equal nnz");
        let vals = vec![(); self.nnz()];
        let (row_offsets, col_indices, _) = select_csr(self.n_rows, &self.row_offsets, &self.col_indices, &vals, mask);
        Self {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_offsets,
            col_indices,
        }
    }

    /// Moves row `r` to `row_perm[r]` and column `c` to `col_perm[c]`.
    pub fn permute(&self, row_perm: &[usize], col_perm: &[usize]) -> Self {
        assert_eq!(row_perm.len(), self.n_rows);
        assert_eq!(col_perm.len(), self.n_cols);
        let vals = vec![(); self.nnz()];
        let (row_offsets, col_indices, _) = permute_csr(
            self.n_rows,
            &self.row_offsets,
            &self.col_indices,
            &vals,
            row_perm,
            col_perm,
        );
        Self {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_offsets,
            col_indices,
        }
    }

    /// Rows `rows` and columns `cols` (in the given order) as a dense matrix.
    pub fn submatrix_dense(&self, rows: &[usize], cols: &[usize]) -> DenseSmallMatrix {
        DenseSmallMatrix::from_fn(rows.len(), cols.len(), |i, j| {
            if self.contains(rows[i], cols[j]) {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn to_dense(&self) -> DenseSmallMatrix {
        let mut d = DenseSmallMatrix::zeros(self.n_rows, self.n_cols);
        for (r, c) in self.iter() {
            d.set(r, c, 1.0);
        }
        d
    }

    /// Parses the triplet text format: a `n_rows<TAB>n_cols` header followed by
    /// one `row<TAB>col` pair per line. Blank lines are ignored.
    pub fn read_triplets<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let (n_rows, n_cols) = loop {
            let Some((idx, line)) = lines.next() else {
                return Err(Error::EmptyInput);
            };
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            break parse_index_pair(line, idx as u64 + 1)?;
        };
        let mut pairs = Vec::new();
        for (idx, line) in lines {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let lineno = idx as u64 + 1;
            let (r, c) = parse_index_pair(line, lineno)?;
            if r >= n_rows || c >= n_cols {
                return Err(Error::parse(
                    lineno,
                    format!("entry ({r}, {c}) outside the {n_rows}x{n_cols} header shape"),
                ));
            }
            pairs.push((r, c));
        }
        Self::from_pairs(pairs, n_rows, n_cols)
    }

    pub fn write_triplets<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}\t{}", self.n_rows, self.n_cols)?;
        for (r, c) in self.iter() {
            writeln!(out, "{r}\t{c}")?;
        }
        out.flush()?;
        Ok(())
    }
}

fn parse_index_pair(line: &str, lineno: u64) -> Result<(usize, usize)> {
    let mut fields = line.split('\t');
    let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
        return Err(Error::parse(lineno, "expected two tab-separated fields"));
    };
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|e| Error::parse(lineno, format!("bad index {s:?}: {e}")))
    };
    Ok((parse(a)?, parse(b)?))
}

impl LinearOperator for SparseBinaryMatrix {
    fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn n_cols(&self) -> usize {
        self.n_cols
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            *out = self.row(r).iter().map(|&c| x[c]).sum();
        }
    }

    fn apply_t(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for r in 0..self.n_rows {
            let xr = x[r];
            for &c in self.row(r) {
                y[c] += xr;
            }
        }
    }
}

/// Sparse matrix with entries in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedSparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<i8>,
}

impl SignedSparseMatrix {
    pub fn from_csr(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<i8>,
    ) -> Result<Self> {
        validate_csr(n_rows, n_cols, &row_offsets, &col_indices)?;
        check_len("values", col_indices.len(), values.len())?;
        if let Some(v) = values.iter().find(|v| !matches!(v, -1 | 1)) {
            return Err(Error::Malformed(format!("signed value {v} is not ±1")));
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Every entry of `b` with sign `+1`.
    pub fn from_binary(b: &SparseBinaryMatrix) -> Self {
        Self {
            n_rows: b.n_rows,
            n_cols: b.n_cols,
            row_offsets: b.row_offsets.clone(),
            col_indices: b.col_indices.clone(),
            values: vec![1; b.nnz()],
        }
    }

    /// `positive − negative`; the two supports must be disjoint.
    pub fn from_difference(positive: &SparseBinaryMatrix, negative: &SparseBinaryMatrix) -> Result<Self> {
        if positive.shape() != negative.shape() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", positive.n_rows, positive.n_cols),
                actual: format!("{}x{}", negative.n_rows, negative.n_cols),
            });
        }
        let mut entries = Vec::with_capacity(positive.nnz() + negative.nnz());
        for (r, c) in negative.iter() {
            if positive.contains(r, c) {
                return Err(Error::OverlappingSupports { row: r, col: c });
            }
            entries.push((r, c, -1i8));
        }
        entries.extend(positive.iter().map(|(r, c)| (r, c, 1i8)));
        let (row_offsets, col_indices, values) = build_csr(positive.n_rows, entries);
        Ok(Self {
            n_rows: positive.n_rows,
            n_cols: positive.n_cols,
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

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, i8)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            (self.row_offsets[r]..self.row_offsets[r + 1]).map(move |k| (r, self.col_indices[k], self.values[k]))
        })
    }

    /// Support with signs dropped.
    pub fn support(&self) -> SparseBinaryMatrix {
        SparseBinaryMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_offsets: self.row_offsets.clone(),
            col_indices: self.col_indices.clone(),
        }
    }

    /// Splits into the `+1` pattern and the `−1` pattern (sign restored).
    pub fn partition(&self) -> (SparseBinaryMatrix, SparseBinaryMatrix) {
        let pos: Vec<bool> = self.values.iter().map(|&v| v > 0).collect();
        let neg: Vec<bool> = pos.iter().map(|p| !p).collect();
        let support = self.support();
        (support.select(&pos), support.select(&neg))
    }

    pub fn select(&self, mask: &[bool]) -> Self {
        assert_eq!(mask.len(), self.nnz(), "mask length must equal nnz");
        let (row_offsets, col_indices, values) =
            select_csr(self.n_rows, &self.row_offsets, &self.col_indices, &self.values, mask);
        Self {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn permute(&self, row_perm: &[usize], col_perm: &[usize]) -> Self {
        assert_eq!(row_perm.len(), self.n_rows);
        assert_eq!(col_perm.len(), self.n_cols);
        let (row_offsets, col_indices, values) = permute_csr(
            self.n_rows,
            &self.row_offsets,
            &self.col_indices,
            &self.values,
            row_perm,
            col_perm,
        );
        Self {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_offsets,
            col_indices,
            values,
        }
    }
}

/// Real-valued CSR matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRealMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseRealMatrix {
    pub fn from_csr(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        validate_csr(n_rows, n_cols, &row_offsets, &col_indices)?;
        check_len("values", col_indices.len(), values.len())?;
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds from `(row, col, value)`; a repeated coordinate keeps its first
    /// value after a stable sort.
    pub fn from_entries(
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
        n_rows: usize,
        n_cols: usize,
    ) -> Result<Self> {
        let mut collected = Vec::new();
        for (position, (row, col, v)) in entries.into_iter().enumerate() {
            if row >= n_rows || col >= n_cols {
                return Err(Error::IndexOutOfRange {
                    axis: if row >= n_rows { "row" } else { "column" },
                    position,
                    row,
                    col,
                    n_rows,
                    n_cols,
                });
            }
            collected.push((row, col, v));
        }
        let (row_offsets, col_indices, values) = build_csr(n_rows, collected);
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            (self.row_offsets[r]..self.row_offsets[r + 1]).map(move |k| (r, self.col_indices[k], self.values[k]))
        })
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|r| self.values[self.row_offsets[r]..self.row_offsets[r + 1]].iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_cols];
        for (_, c, v) in self.iter() {
            sums[c] += v;
        }
        sums
    }

    pub fn to_dense(&self) -> DenseSmallMatrix {
        let mut d = DenseSmallMatrix::zeros(self.n_rows, self.n_cols);
        for (r, c, v) in self.iter() {
            d.set(r, c, v);
        }
        d
    }
}

impl LinearOperator for SparseRealMatrix {
    fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn n_cols(&self) -> usize {
        self.n_cols
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
            *out = (lo..hi).map(|k| self.values[k] * x[self.col_indices[k]]).sum();
        }
    }

    fn apply_t(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for (r, c, v) in self.iter() {
            y[c] += v * x[r];
        }
    }
}

impl LinearOperator for DenseSmallMatrix {
    fn n_rows(&self) -> usize {
        DenseSmallMatrix::n_rows(self)
    }

    fn n_cols(&self) -> usize {
        DenseSmallMatrix::n_cols(self)
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, out) in y.iter_mut().enumerate() {
            *out = self.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn apply_t(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for (i, &xi) in x.iter().enumerate() {
            for (out, a) in y.iter_mut().zip(self.row(i)) {
                *out += a * xi;
            }
        }
    }
}
