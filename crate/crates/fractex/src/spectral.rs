//! Spectral primitives: a randomized truncated SVD for sparse operators, and
//! the small dense kernels used to shrink singular vector blocks while keeping
//! them orthogonal.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dense::DenseSmallMatrix;
use crate::error::{Error, Result};
use crate::sparse::LinearOperator;

/// Rank-k factorization `M ≈ U · diag(sigma) · V`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvd {
    /// m×k, orthonormal columns.
    pub u: DenseSmallMatrix,
    /// Non-increasing, non-negative.
    pub sigma: Vec<f64>,
    /// k×n, orthonormal rows.
    pub v: DenseSmallMatrix,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `U · diag(sigma) · V` as a dense matrix.
    pub fn reconstruct(&self) -> DenseSmallMatrix {
        self.u
            .scale_columns(&self.sigma)
            .matmul(&self.v)
            .expect("factor shapes agree")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SvdParams {
    pub seed: u64,
    pub n_power_iters: usize,
    pub oversample: usize,
}

impl Default for SvdParams {
    fn default() -> Self {
        Self {
            seed: 0,
            n_power_iters: 8,
            oversample: 10,
        }
    }
}

impl SvdParams {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

type Block = Vec<Vec<f64>>;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn apply_block<O: LinearOperator + ?Sized>(op: &O, block: &Block, transpose: bool) -> Block {
    let out_len = if transpose { op.n_cols() } else { op.n_rows() };
    block
        .par_iter()
        .map(|x| {
            let mut y = vec![0.0; out_len];
            if transpose {
                op.apply_t(x, &mut y);
            } else {
                op.apply(x, &mut y);
            }
            y
        })
        .collect()
}

/// Modified Gram-Schmidt with one re-orthogonalization pass. Columns that
/// collapse (numerically inside the span of earlier ones) are dropped; fewer
/// than `min_rank` survivors is a convergence failure.
fn orthonormalize(block: Block, min_rank: usize) -> Result<Block> {
    let mut basis: Block = Vec::with_capacity(block.len());
    let mut dropped = 0usize;
    for mut v in block {
        let initial = norm(&v);
        if initial > 0.0 {
            for _ in 0..2 {
                for q in &basis {
                    let d = dot(q, &v);
                    v.iter_mut().zip(q).for_each(|(x, qi)| *x -= d * qi);
                }
            }
            let residual = norm(&v);
            if residual > 1e-10 * initial {
                v.iter_mut().for_each(|x| *x /= residual);
                basis.push(v);
                continue;
            }
        }
        dropped += 1;
    }
    if basis.len() < min_rank {
        return Err(Error::Convergence(format!(
            "only {} of {} basis vectors survived orthonormalization ({} had zero norm); \
             the matrix has fewer than {} non-zero singular values",
            basis.len(),
            basis.len() + dropped,
            dropped,
            min_rank
        )));
    }
    Ok(basis)
}

/// Randomized subspace iteration for the `k` leading singular triplets.
///
/// A Gaussian test block with `k + oversample` columns (drawn from
/// `ChaCha8Rng::seed_from_u64(seed)`, column by column) is pushed through
/// `n_power_iters` rounds of `M` / `Mᵀ` application, re-orthonormalizing after
/// every half step. The projected problem is then solved exactly and truncated
/// to `k`.
///
/// Each singular pair is sign-normalized so the left vector has a
/// non-negative sum, making the output independent of the small solver's sign
/// choices.
pub fn truncated_svd<O: LinearOperator + ?Sized>(op: &O, k: usize, params: &SvdParams) -> Result<TruncatedSvd> {
    let (m, n) = (op.n_rows(), op.n_cols());
    if k == 0 || k > m.min(n) {
        return Err(Error::RankOutOfRange {
            k,
            n_rows: m,
            n_cols: n,
        });
    }
    let width = (k + params.oversample).min(m.min(n));

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let omega: Block = (0..width)
        .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();

    let mut q = orthonormalize(apply_block(op, &omega, false), k)?;
    for _ in 0..params.n_power_iters {
        let z = orthonormalize(apply_block(op, &q, true), k)?;
        q = orthonormalize(apply_block(op, &z, false), k)?;
    }

    // Bᵀ = Mᵀ Q is n×l; with Bᵀ = W S Xᵀ we get M ≈ (Q X) S Wᵀ.
    let bt_cols = apply_block(op, &q, true);
    let l = bt_cols.len();
    let bt = DMatrix::from_fn(n, l, |r, c| bt_cols[c][r]);
    let svd = bt.svd(true, true);
    let w = svd.u.expect("requested left vectors");
    let x_t = svd.v_t.expect("requested right vectors");
    let s = svd.singular_values;

    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    order.truncate(k);

    let mut u = DenseSmallMatrix::zeros(m, k);
    let mut v = DenseSmallMatrix::zeros(k, n);
    let mut sigma = Vec::with_capacity(k);
    for (t, &idx) in order.iter().enumerate() {
        // Column t of U is Q · x_idx, where x_idx is row idx of Xᵀ.
        let mut col = vec![0.0; m];
        for (c, qc) in q.iter().enumerate() {
            let coef = x_t[(idx, c)];
            col.iter_mut().zip(qc).for_each(|(o, qi)| *o += coef * qi);
        }
        let sum: f64 = col.iter().sum();
        let flip = sum < 0.0 || (sum == 0.0 && col.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0));
        let sign = if flip { -1.0 } else { 1.0 };
        for (r, val) in col.iter().enumerate() {
            u.set(r, t, sign * val);
        }
        for c in 0..n {
            v.set(t, c, sign * w[(c, idx)]);
        }
        sigma.push(s[idx].max(0.0));
    }
    Ok(TruncatedSvd { u, sigma, v })
}

/// `S^{-1/2}` for a symmetric positive definite `S`, via
/// `Q · diag(λ^{-1/2}) · Qᵀ`.
///
/// Eigenvalues at or below `1e-12 · λ_max` are treated as singular.
pub fn inv_sqrt_sym(s: &DenseSmallMatrix) -> Result<DenseSmallMatrix> {
    let n = s.n_rows();
    if n != s.n_cols() {
        return Err(Error::DimensionMismatch {
            expected: "a square matrix".into(),
            actual: format!("{}x{}", s.n_rows(), s.n_cols()),
        });
    }
    let scale = s.data().iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            asym = asym.max((s.get(i, j) - s.get(j, i)).abs());
        }
    }
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    if n == 0 {
        return Ok(DenseSmallMatrix::zeros(0, 0));
    }

    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (s.get(i, j) + s.get(j, i)));
    let eig = SymmetricEigen::new(sym);
    let lambda_max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lambda_min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = 1e-12 * lambda_max.max(0.0);
    if lambda_max <= 0.0 || lambda_min <= threshold {
        return Err(Error::Singular {
            eigenvalue: lambda_min,
            threshold,
        });
    }
    let q = &eig.eigenvectors;
    let inv_root: Vec<f64> = eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()).collect();
    let mut out = DenseSmallMatrix::from_fn(n, n, |i, j| (0..n).map(|t| q[(i, t)] * inv_root[t] * q[(j, t)]).sum());
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (out.get(i, j) + out.get(j, i));
            out.set(i, j, avg);
            out.set(j, i, avg);
        }
    }
    Ok(out)
}

/// Weights mapping `len` source cells onto `out` equal-width target cells:
/// entry `(target, source, weight)` with weights of each target summing to 1.
fn overlap_weights(len: usize, out: usize) -> Vec<Vec<(usize, f64)>> {
    // Work in units of 1/out of a source cell: target i spans [i·len, (i+1)·len)
    // and source r spans [r·out, (r+1)·out).
    (0..out)
        .map(|i| {
            let (lo, hi) = (i * len, (i + 1) * len);
            (lo / out..hi.div_ceil(out))
                .filter_map(|r| {
                    let overlap = hi.min((r + 1) * out).saturating_sub(lo.max(r * out));
                    (overlap > 0).then(|| (r, overlap as f64 / len as f64))
                })
                .collect()
        })
        .collect()
}

/// Down-scales by area averaging: each output cell is the overlap-weighted
/// mean of the input region it covers.
pub fn area_resize(m: &DenseSmallMatrix, out_rows: usize, out_cols: usize) -> Result<DenseSmallMatrix> {
    let (n_rows, n_cols) = m.shape();
    if out_rows > n_rows || out_cols > n_cols || out_rows == 0 || out_cols == 0 {
        return Err(Error::Upscale {
            from_rows: n_rows,
            from_cols: n_cols,
            to_rows: out_rows,
            to_cols: out_cols,
        });
    }
    let row_w = overlap_weights(n_rows, out_rows);
    let col_w = overlap_weights(n_cols, out_cols);

    let mut rows_done = DenseSmallMatrix::zeros(out_rows, n_cols);
    for (i, weights) in row_w.iter().enumerate() {
        for &(r, w) in weights {
            for c in 0..n_cols {
                rows_done.set(i, c, rows_done.get(i, c) + w * m.get(r, c));
            }
        }
    }
    Ok(DenseSmallMatrix::from_fn(out_rows, out_cols, |i, j| {
        col_w[j].iter().map(|&(c, w)| w * rows_done.get(i, c)).sum()
    }))
}

/// Closest matrix with orthonormal columns (Frobenius norm):
/// `Ū (ŪᵀŪ)^{-1/2}`.
pub fn orthogonalize_columns(ubar: &DenseSmallMatrix) -> Result<DenseSmallMatrix> {
    ubar.matmul(&inv_sqrt_sym(&ubar.gram_columns())?)
}

/// Closest matrix with orthonormal rows: `(V̄V̄ᵀ)^{-1/2} V̄`.
pub fn orthogonalize_rows(vbar: &DenseSmallMatrix) -> Result<DenseSmallMatrix> {
    inv_sqrt_sym(&vbar.gram_rows())?.matmul(vbar)
}

/// Writes a `rank<TAB>singular_value` table, ranks starting at 1.
pub fn write_spectrum<W: std::io::Write>(sigma: &[f64], out: W) -> Result<()> {
    crate::stats::write_rank_table("singular_value", sigma, out)
}

pub fn read_spectrum<R: std::io::BufRead>(reader: R) -> Result<Vec<f64>> {
    crate::stats::read_rank_table(reader)
}
