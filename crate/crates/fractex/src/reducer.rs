//! Construction of the small multiplier grid `R̂`.
//!
//! [`build_reduced`] keeps the `k = min(m', n')` leading singular values of
//! `R` exactly: the singular vector blocks are shrunk by area averaging and
//! then snapped back to the nearest orthonormal blocks, so
//! `R̂ = Ũ Σ Ṽ` has spectrum `Σ`. [`sketch_reduced`] is the cheap
//! alternative that samples rows and columns.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::DenseSmallMatrix;
use crate::error::{Error, Result};
use crate::sparse::SparseBinaryMatrix;
use crate::spectral::{area_resize, orthogonalize_columns, orthogonalize_rows, truncated_svd, SvdParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescaleMode {
    /// `(x − min) / (max − min)`: every entry lands in `[0, 1]`.
    UnitInterval,
    /// `x / (max − min)`: division only. Entries may fall outside `[0, 1]`.
    PaperRangeOnly,
}

impl RescaleMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RescaleMode::UnitInterval => "unit_interval",
            RescaleMode::PaperRangeOnly => "paper_range_only",
        }
    }
}

impl std::str::FromStr for RescaleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit_interval" | "unit" => Ok(RescaleMode::UnitInterval),
            "paper_range_only" | "paper" => Ok(RescaleMode::PaperRangeOnly),
            other => Err(Error::InvalidArgument(format!("unknown rescale mode {other:?}"))),
        }
    }
}

/// The expansion multiplier grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedMatrix {
    data: DenseSmallMatrix,
    rescale_mode: RescaleMode,
    source_spectrum: Vec<f64>,
    unscaled: Option<DenseSmallMatrix>,
    factors: Option<(DenseSmallMatrix, DenseSmallMatrix)>,
    seed: u64,
}

impl ReducedMatrix {
    /// Wraps an explicit grid of keep probabilities (or Kronecker factors).
    pub fn from_rates(data: DenseSmallMatrix, rescale_mode: RescaleMode, seed: u64) -> Self {
        Self {
            data,
            rescale_mode,
            source_spectrum: Vec::new(),
            unscaled: None,
            factors: None,
            seed,
        }
    }

    pub fn with_source_spectrum(mut self, spectrum: Vec<f64>) -> Self {
        self.source_spectrum = spectrum;
        self
    }

    pub fn data(&self) -> &DenseSmallMatrix {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.shape()
    }

    pub fn rescale_mode(&self) -> RescaleMode {
        self.rescale_mode
    }

    /// Leading singular values of the source matrix this grid was built from.
    pub fn source_spectrum(&self) -> &[f64] {
        &self.source_spectrum
    }

    /// The grid before rescaling, when it was built here.
    pub fn unscaled(&self) -> Option<&DenseSmallMatrix> {
        self.unscaled.as_ref()
    }

    /// `(Ũ, Ṽ)` with `Ũ` m'×k and `Ṽ` k×n', when built by [`build_reduced`].
    pub fn factors(&self) -> Option<(&DenseSmallMatrix, &DenseSmallMatrix)> {
        self.factors.as_ref().map(|(u, v)| (u, v))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Entries as Bernoulli keep probabilities, plus the number of entries
    /// clamped into `[0, 1]`.
    ///
    /// Only [`RescaleMode::PaperRangeOnly`] grids are clamped; a unit-interval
    /// grid with an out-of-range entry is an error.
    pub fn keep_probabilities(&self) -> Result<(DenseSmallMatrix, usize)> {
        match self.rescale_mode {
            RescaleMode::UnitInterval => {
                if let Some(&bad) = self.data.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::InvalidProbability(bad));
                }
                Ok((self.data.clone(), 0))
            }
            RescaleMode::PaperRangeOnly => {
                let clamped = self.data.data().iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
                Ok((self.data.map(|v| v.clamp(0.0, 1.0)), clamped))
            }
        }
    }

    /// Writes the dense table: a `m' n' rescale_mode seed` header, then one
    /// line of space-separated values per row with 17 significant digits.
    pub fn write_table<W: Write>(&self, mut out: W) -> Result<()> {
        let (m, n) = self.data.shape();
        writeln!(out, "{m} {n} {} {}", self.rescale_mode.as_str(), self.seed)?;
        for i in 0..m {
            let line: Vec<String> = self.data.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a table written by [`Self::write_table`]. The source spectrum is
    /// not part of the table; attach it with [`Self::with_source_spectrum`].
    pub fn read_table<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader
            .lines()
            .enumerate()
            .map(|(i, l)| (i as u64 + 1, l))
            .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
        let (lineno, header) = lines.next().ok_or(Error::EmptyInput)?;
        let header = header?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [m, n, mode, seed] = fields[..] else {
            return Err(Error::parse(lineno, "header must be `m' n' rescale_mode seed`"));
        };
        let parse_dim = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::parse(lineno, format!("bad dimension {s:?}: {e}")))
        };
        let (m, n) = (parse_dim(m)?, parse_dim(n)?);
        let rescale_mode: RescaleMode = mode.parse().map_err(|e: Error| Error::parse(lineno, e.to_string()))?;
        let seed: u64 = seed
            .parse()
            .map_err(|e| Error::parse(lineno, format!("bad seed {seed:?}: {e}")))?;

        let mut data = Vec::with_capacity(m.saturating_mul(n).min(1 << 20));
        let mut rows = 0usize;
        for (lineno, line) in lines {
            let line = line?;
            if rows == m {
                return Err(Error::parse(lineno, format!("more than {m} rows")));
            }
            let start = data.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|e| Error::parse(lineno, format!("bad value {tok:?}: {e}")))?;
                if !v.is_finite() {
                    return Err(Error::parse(lineno, "non-finite value"));
                }
                data.push(v);
            }
            if data.len() - start != n {
                return Err(Error::parse(
                    lineno,
                    format!("expected {n} values, found {}", data.len() - start),
                ));
            }
            rows += 1;
        }
        if rows != m {
            return Err(Error::parse(0, format!("expected {m} rows, found {rows}")));
        }
        Ok(Self::from_rates(DenseSmallMatrix::new(m, n, data)?, rescale_mode, seed))
    }
}

/// Rescales the entries of `m` by its value range.
pub fn rescale(m: &DenseSmallMatrix, mode: RescaleMode) -> Result<DenseSmallMatrix> {
    let (lo, hi) = (m.min(), m.max());
    if !(hi > lo) {
        return Err(Error::DegenerateRange(lo));
    }
    let range = hi - lo;
    Ok(match mode {
        RescaleMode::UnitInterval => m.map(|x| (x - lo) / range),
        RescaleMode::PaperRangeOnly => m.map(|x| x / range),
    })
}

/// `R̂` via truncated SVD, area resizing and orthogonal snapping, with
/// default SVD parameters.
pub fn build_reduced(
    r: &SparseBinaryMatrix,
    m_prime: usize,
    n_prime: usize,
    seed: u64,
    rescale_mode: RescaleMode,
) -> Result<ReducedMatrix> {
    build_reduced_with(r, m_prime, n_prime, rescale_mode, &SvdParams::with_seed(seed))
}

pub fn build_reduced_with(
    r: &SparseBinaryMatrix,
    m_prime: usize,
    n_prime: usize,
    rescale_mode: RescaleMode,
    svd_params: &SvdParams,
) -> Result<ReducedMatrix> {
    let (m, n) = r.shape();
    if m_prime == 0 || n_prime == 0 || m_prime >= m || n_prime >= n {
        return Err(Error::NotAReduction {
            m_prime,
            n_prime,
            n_rows: m,
            n_cols: n,
        });
    }
    let k = m_prime.min(n_prime);
    let svd = truncated_svd(r, k, svd_params)?;

    let u_bar = area_resize(&svd.u, m_prime, k)?;
    let v_bar = area_resize(&svd.v, k, n_prime)?;
    let u_tilde = orthogonalize_columns(&u_bar)?;
    let v_tilde = orthogonalize_rows(&v_bar)?;
    let unscaled = u_tilde.scale_columns(&svd.sigma).matmul(&v_tilde)?;

    Ok(ReducedMatrix {
        data: rescale(&unscaled, rescale_mode)?,
        rescale_mode,
        source_spectrum: svd.sigma,
        unscaled: Some(unscaled),
        factors: Some((u_tilde, v_tilde)),
        seed: svd_params.seed,
    })
}

/// Uniformly samples `m'` distinct rows and `n'` distinct columns (kept in
/// ascending order) and rescales the submatrix to `[0, 1]`.
///
/// A constant submatrix has no range to rescale by; its entries are kept
/// as they are (all zeros or all ones).
pub fn sketch_reduced(r: &SparseBinaryMatrix, m_prime: usize, n_prime: usize, seed: u64) -> Result<ReducedMatrix> {
    let (m, n) = r.shape();
    if m_prime == 0 || n_prime == 0 || m_prime > m || n_prime > n {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {m_prime}x{n_prime} from a {m}x{n} matrix"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = rand::seq::index::sample(&mut rng, m, m_prime).into_vec();
    let mut cols = rand::seq::index::sample(&mut rng, n, n_prime).into_vec();
    rows.sort_unstable();
    cols.sort_unstable();

    let sub = r.submatrix_dense(&rows, &cols);
    let mut spectrum = sub.singular_values();
    spectrum.truncate(m_prime.min(n_prime));
    let data = match rescale(&sub, RescaleMode::UnitInterval) {
        Ok(d) => d,
        Err(Error::DegenerateRange(_)) => sub.clone(),
        Err(e) => return Err(e),
    };
    Ok(ReducedMatrix {
        data,
        rescale_mode: RescaleMode::UnitInterval,
        source_spectrum: spectrum,
        unscaled: Some(sub),
        factors: None,
        seed,
    })
}
