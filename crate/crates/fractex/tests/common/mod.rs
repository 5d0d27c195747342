//! Test-only reference implementations, written independently of the crate.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fractex::SparseBinaryMatrix;

pub type Dense = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_binary(rng: &mut ChaCha8Rng, m: usize, n: usize, density: f64) -> SparseBinaryMatrix {
    let mut pairs = Vec::new();
    for r in 0..m {
        for c in 0..n {
            if rng.random_bool(density) {
                pairs.push((r, c));
            }
        }
    }
    SparseBinaryMatrix::from_pairs(pairs, m, n).unwrap()
}

pub fn binary_to_dense(b: &SparseBinaryMatrix) -> Dense {
    let mut d = vec![vec![0.0; b.n_cols()]; b.n_rows()];
    for (r, c) in b.iter() {
        d[r][c] = 1.0;
    }
    d
}

/// `A ⊗ B` by four nested loops.
pub fn kron(a: &Dense, b: &Dense) -> Dense {
    let (m, n) = (a.len(), a[0].len());
    let (p, q) = (b.len(), b[0].len());
    let mut k = vec![vec![0.0; n * q]; m * p];
    for i in 0..m {
        for j in 0..n {
            for r in 0..p {
                for c in 0..q {
                    k[i * p + r][j * q + c] = a[i][j] * b[r][c];
                }
            }
        }
    }
    k
}

pub fn transpose(a: &Dense) -> Dense {
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

/// Singular values (descending) by one-sided Jacobi rotations on the columns.
pub fn jacobi_singular_values(a: &Dense) -> Vec<f64> {
    let a = if a[0].len() > a.len() { transpose(a) } else { a.clone() };
    let (m, n) = (a.len(), a[0].len());
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a[i][j]).collect()).collect();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = cols[p].iter().map(|x| x * x).sum();
                let beta: f64 = cols[q].iter().map(|x| x * x).sum();
                let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= 1e-14 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (cols[p][i], cols[q][i]);
                    cols[p][i] = c * x - s * y;
                    cols[q][i] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

pub fn row_sums(a: &Dense) -> Vec<f64> {
    a.iter().map(|r| r.iter().sum()).collect()
}

pub fn col_sums(a: &Dense) -> Vec<f64> {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).sum()).collect()
}

pub fn sorted_desc(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Location of the MovieLens-100K ratings file: `$FRACTEX_ML100K`, else
/// `data/ml-100k/u.data` under the workspace root.
pub fn ml100k_path() -> Option<PathBuf> {
    if let Ok(p) = std::env::var("FRACTEX_ML100K") {
        let p = PathBuf::from(p);
        return p.exists().then_some(p);
    }
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k/u.data");
    p.exists().then_some(p)
}

pub const ML100K_HINT: &str = "MovieLens-100K not found; run scripts/fetch-ml100k.sh or set FRACTEX_ML100K";
