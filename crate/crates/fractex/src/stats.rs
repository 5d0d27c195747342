//! Ranked row-sum, column-sum and spectrum distributions, their analytic
//! Kronecker predictions, and a numeric shape comparison.

use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::dense::DenseSmallMatrix;
use crate::error::{Error, Result};
use crate::expander::ExpansionManifest;
use crate::sparse::SparseBinaryMatrix;

/// Number of leading ranks used for the relative-gap metric.
pub const TOP_N: usize = 100;

/// Values sorted in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedDistribution {
    pub label: String,
    values: Vec<f64>,
}

impl RankedDistribution {
    pub fn new(label: impl Into<String>, mut values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "ranked distribution has non-finite values".into(),
            ));
        }
        values.sort_by(|a, b| b.total_cmp(a));
        Ok(Self {
            label: label.into(),
            values,
        })
    }

    pub fn from_counts(label: impl Into<String>, counts: &[usize]) -> Self {
        Self::new(label, counts.iter().map(|&c| c as f64).collect()).expect("counts are finite")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// All pairwise products `{x·y}` as a multiset.
pub fn minkowski_product(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    xs.iter().flat_map(|&x| ys.iter().map(move |&y| x * y)).collect()
}

/// Row and column sum distributions of `A ⊗ B`, from the factors alone.
pub fn predict_expanded_sums(a: &DenseSmallMatrix, b: &SparseBinaryMatrix) -> (RankedDistribution, RankedDistribution) {
    let b_rows: Vec<f64> = b.row_sums().iter().map(|&c| c as f64).collect();
    let b_cols: Vec<f64> = b.col_sums().iter().map(|&c| c as f64).collect();
    let rows = RankedDistribution::new("predicted", minkowski_product(&a.row_sums(), &b_rows)).expect("finite");
    let cols = RankedDistribution::new("predicted", minkowski_product(&a.col_sums(), &b_cols)).expect("finite");
    (rows, cols)
}

/// The `top_k` largest pairwise products of two spectra.
pub fn predict_expanded_spectrum(sig_a: &[f64], sig_b: &[f64], top_k: usize) -> Result<RankedDistribution> {
    if sig_a.iter().chain(sig_b).any(|&s| !(s >= 0.0)) {
        return Err(Error::InvalidArgument("singular values must be non-negative".into()));
    }
    let mut products = minkowski_product(sig_a, sig_b);
    products.sort_by(|a, b| b.total_cmp(a));
    products.truncate(top_k);
    RankedDistribution::new("predicted", products)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    /// Pearson correlation of the two log-value curves sampled at matching
    /// rank quantiles.
    pub pearson_loglog: f64,
    /// `max |a_r − b_r| / |a_r|` over the leading ranks.
    pub max_rel_gap_top_n: f64,
    /// Points entering the correlation (length of the shorter positive part).
    pub compared: usize,
    /// Non-positive values dropped from `(reference, candidate)`.
    pub zeros_excluded: (usize, usize),
}

/// Log value at rank quantile `u ∈ [0, 1]`, interpolating linearly in log space.
fn log_at_quantile(values: &[f64], u: f64) -> f64 {
    let pos = u * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(values.len() - 1);
    let frac = pos - lo as f64;
    let (a, b) = (values[lo].ln(), values[hi].ln());
    if frac == 0.0 {
        a
    } else {
        a + frac * (b - a)
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    match (sxx > 0.0, syy > 0.0) {
        (true, true) => (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        // Two flat curves have the same shape.
        (false, false) => 1.0,
        _ => 0.0,
    }
}

/// Compares the shape of two ranked distributions on log-log axes, using the
/// default [`TOP_N`] for the gap metric.
pub fn compare_ranked(reference: &RankedDistribution, candidate: &RankedDistribution) -> Result<Comparison> {
    compare_ranked_top(reference, candidate, TOP_N)
}

pub fn compare_ranked_top(
    reference: &RankedDistribution,
    candidate: &RankedDistribution,
    top_n: usize,
) -> Result<Comparison> {
    let positive = |d: &RankedDistribution| -> Vec<f64> { d.values.iter().copied().filter(|&v| v > 0.0).collect() };
    let (a, b) = (positive(reference), positive(candidate));
    let compared = a.len().min(b.len());
    if compared < 3 {
        return Err(Error::InvalidArgument(format!(
            "log-log correlation needs at least 3 positive values on both sides ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let quantiles = (0..compared).map(|t| t as f64 / (compared - 1) as f64);
    let (x, y): (Vec<f64>, Vec<f64>) = quantiles
        .map(|u| (log_at_quantile(&a, u), log_at_quantile(&b, u)))
        .unzip();

    let gap_len = top_n.min(reference.len()).min(candidate.len());
    let max_rel_gap_top_n = (0..gap_len)
        .map(|r| {
            let (ra, rb) = (reference.values[r], candidate.values[r]);
            if ra == rb {
                0.0
            } else {
                (ra - rb).abs() / ra.abs().max(f64::MIN_POSITIVE)
            }
        })
        .fold(0.0, f64::max);

    Ok(Comparison {
        pearson_loglog: pearson(&x, &y),
        max_rel_gap_top_n,
        compared,
        zeros_excluded: (reference.len() - a.len(), candidate.len() - b.len()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    RowSums,
    ColSums,
    Spectrum,
}

impl Statistic {
    pub fn name(self) -> &'static str {
        match self {
            Statistic::RowSums => "row_sums",
            Statistic::ColSums => "col_sums",
            Statistic::Spectrum => "spectrum",
        }
    }

    fn value_column(self) -> &'static str {
        match self {
            Statistic::Spectrum => "singular_value",
            _ => "value",
        }
    }
}

/// Distributions to export and the pairwise comparisons to summarize.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub distributions: Vec<(Statistic, RankedDistribution)>,
    /// `(statistic, reference label, candidate label)`.
    pub comparisons: Vec<(Statistic, String, String)>,
}

impl Report {
    pub fn add(&mut self, statistic: Statistic, distribution: RankedDistribution) {
        self.distributions.push((statistic, distribution));
    }

    pub fn compare(&mut self, statistic: Statistic, reference: &str, candidate: &str) {
        self.comparisons
            .push((statistic, reference.to_owned(), candidate.to_owned()));
    }

    fn find(&self, statistic: Statistic, label: &str) -> Option<&RankedDistribution> {
        self.distributions
            .iter()
            .find(|(s, d)| *s == statistic && d.label == label)
            .map(|(_, d)| d)
    }
}

/// Writes one `rank<TAB>value` table per distribution and a `summary.tsv`
/// with the comparison metrics. Returns the files written, in order.
pub fn emit_report(dir: &Path, manifest: Option<&ExpansionManifest>, report: &Report) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (statistic, dist) in &report.distributions {
        let path = dir.join(format!("{}_{}.tsv", statistic.name(), dist.label));
        write_rank_table(
            statistic.value_column(),
            &dist.values,
            BufWriter::new(File::create(&path)?),
        )?;
        written.push(path);
    }

    let path = dir.join("summary.tsv");
    let mut out = BufWriter::new(File::create(&path)?);
    writeln!(
        out,
        "statistic\treference\tcandidate\tpearson_loglog\tmax_rel_gap_top{TOP_N}\tcompared\tzeros_excluded\tstatus"
    )?;
    for (statistic, reference, candidate) in &report.comparisons {
        let name = statistic.name();
        let (a, b) = (report.find(*statistic, reference), report.find(*statistic, candidate));
        match (a, b) {
            (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => match compare_ranked(a, b) {
                Ok(c) => writeln!(
                    out,
                    "{name}\t{reference}\t{candidate}\t{:.16e}\t{:.16e}\t{}\t{}/{}\tok",
                    c.pearson_loglog, c.max_rel_gap_top_n, c.compared, c.zeros_excluded.0, c.zeros_excluded.1
                )?,
                Err(e) => writeln!(out, "{name}\t{reference}\t{candidate}\t-\t-\t-\t-\tundefined: {e}")?,
            },
            _ => writeln!(out, "{name}\t{reference}\t{candidate}\t-\t-\t-\t-\tabsent")?,
        }
    }
    if let Some(m) = manifest {
        let gap = if m.expected_nnz > 0.0 {
            (m.total_nnz as f64 - m.expected_nnz).abs() / m.expected_nnz
        } else {
            0.0
        };
        writeln!(
            out,
            "nnz\texpected\tactual\t-\t{gap:.16e}\t-\t-\texpanded_dims={}x{} expected_nnz={:.1} total_nnz={}",
            m.expanded_dims[0], m.expanded_dims[1], m.expected_nnz, m.total_nnz
        )?;
    }
    out.flush()?;
    written.push(path);
    Ok(written)
}

/// `rank<TAB>{value_column}` header then one line per value, ranks from 1.
pub fn write_rank_table<W: Write>(value_column: &str, values: &[f64], out: W) -> Result<()> {
    let mut out = out;
    writeln!(out, "rank\t{value_column}")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(out, "{}\t{v:.16e}", i + 1)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a rank table written by [`write_rank_table`]. Ranks must run 1, 2, …
pub fn read_rank_table<R: BufRead>(reader: R) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    let mut header_seen = false;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        let lineno = idx as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            header_seen = true;
            if line.starts_with("rank\t") {
                continue;
            }
        }
        let Some((rank, value)) = line.split_once('\t') else {
            return Err(Error::parse(lineno, "expected rank<TAB>value"));
        };
        let rank: usize = rank
            .parse()
            .map_err(|e| Error::parse(lineno, format!("bad rank {rank:?}: {e}")))?;
        if rank != values.len() + 1 {
            return Err(Error::parse(lineno, format!("rank {rank} out of sequence")));
        }
        let value: f64 = value
            .parse()
            .map_err(|e| Error::parse(lineno, format!("bad value {value:?}: {e}")))?;
        if !value.is_finite() {
            return Err(Error::parse(lineno, "non-finite value"));
        }
        values.push(value);
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(|a, b| a.total_cmp(b));
        v
    }

    #[test]
    fn minkowski_examples() {
        assert_eq!(sorted(minkowski_product(&[1.0, 2.0], &[3.0])), vec![3.0, 6.0]);
        assert!(minkowski_product(&[0.0], &[5.0, 7.0]).iter().all(|&v| v == 0.0));
        assert_eq!(
            sorted(minkowski_product(&[1.0, 2.0], &[3.0, 4.0])),
            vec![3.0, 4.0, 6.0, 8.0]
        );
    }

    #[test]
    fn identity_factor_predicts_base_sums() {
        let b = SparseBinaryMatrix::from_pairs([(0, 0), (0, 2), (1, 1), (2, 2)], 3, 3).unwrap();
        let (rows, cols) = predict_expanded_sums(&DenseSmallMatrix::identity(1), &b);
        assert_eq!(
            rows.values(),
            RankedDistribution::from_counts("b", &b.row_sums()).values()
        );
        assert_eq!(
            cols.values(),
            RankedDistribution::from_counts("b", &b.col_sums()).values()
        );
    }

    #[test]
    fn zero_row_gives_zero_block() {
        let a = DenseSmallMatrix::from_rows(&[[1.0, 2.0], [0.0, 0.0]]).unwrap();
        let b = SparseBinaryMatrix::identity(4);
        let (rows, _) = predict_expanded_sums(&a, &b);
        assert_eq!(rows.values().iter().filter(|&&v| v == 0.0).count(), 4);
    }

    #[test]
    fn spectrum_prediction_examples() {
        let s = predict_expanded_spectrum(&[2.0, 1.0], &[3.0, 1.0], 4).unwrap();
        assert_eq!(s.values(), &[6.0, 3.0, 2.0, 1.0]);
        let sig_b = [5.0, 2.0, 0.5];
        assert_eq!(predict_expanded_spectrum(&[1.0], &sig_b, 3).unwrap().values(), &sig_b);
        assert!(predict_expanded_spectrum(&[0.0, 0.0], &sig_b, 6)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
        assert!(predict_expanded_spectrum(&[-1.0], &sig_b, 1).is_err());
    }

    #[test]
    fn comparison_examples() {
        let a = RankedDistribution::new("a", vec![100.0, 40.0, 20.0, 9.0, 3.0, 1.0]).unwrap();
        let same = compare_ranked(&a, &a).unwrap();
        assert_eq!(same.pearson_loglog, 1.0);
        assert_eq!(same.max_rel_gap_top_n, 0.0);

        let doubled = RankedDistribution::new("b", a.values().iter().map(|v| 2.0 * v).collect()).unwrap();
        let c = compare_ranked(&a, &doubled).unwrap();
        assert!((c.pearson_loglog - 1.0).abs() < 1e-12);
        assert!((c.max_rel_gap_top_n - 1.0).abs() < 1e-12);

        let with_zeros = RankedDistribution::new("z", vec![5.0, 3.0, 0.0, 2.0, 0.0]).unwrap();
        let c = compare_ranked(&a, &with_zeros).unwrap();
        assert_eq!(c.zeros_excluded, (0, 2));
        assert_eq!(c.compared, 3);

        let short = RankedDistribution::new("s", vec![1.0, 0.0, 2.0]).unwrap();
        assert!(compare_ranked(&a, &short).is_err());
    }

    #[test]
    fn comparison_resamples_longer_curve() {
        // A power law sampled at 10 and 1000 ranks has the same log-log shape.
        let short: Vec<f64> = (1..=10).map(|r| 1000.0 / r as f64).collect();
        let long: Vec<f64> = (1..=1000).map(|r| 1000.0 / r as f64).collect();
        let c = compare_ranked(
            &RankedDistribution::new("s", short).unwrap(),
            &RankedDistribution::new("l", long).unwrap(),
        )
        .unwrap();
        assert_eq!(c.compared, 10);
        assert!(c.pearson_loglog > 0.9);
    }

    #[test]
    fn report_files_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let mut report = Report::default();
        report.add(
            Statistic::RowSums,
            RankedDistribution::new("orig", vec![3.0, 2.0, 1.0, 1.0]).unwrap(),
        );
        report.add(
            Statistic::RowSums,
            RankedDistribution::new("exp", vec![6.0, 4.0, 2.0, 2.0]).unwrap(),
        );
        report.add(
            Statistic::ColSums,
            RankedDistribution::new("orig", vec![4.0, 3.0]).unwrap(),
        );
        report.add(Statistic::Spectrum, RankedDistribution::new("exp", vec![]).unwrap());
        report.compare(Statistic::RowSums, "orig", "exp");
        report.compare(Statistic::Spectrum, "orig", "exp");

        let files = emit_report(dir.path(), None, &report).unwrap();
        let names: Vec<_> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_str().unwrap().to_owned())
            .collect();
        assert_eq!(
            names,
            [
                "row_sums_orig.tsv",
                "row_sums_exp.tsv",
                "col_sums_orig.tsv",
                "spectrum_exp.tsv",
                "summary.tsv"
            ]
        );
        let summary = std::fs::read_to_string(dir.path().join("summary.tsv")).unwrap();
        let row = summary.lines().find(|l| l.starts_with("row_sums")).unwrap();
        let fields: Vec<&str> = row.split('\t').collect();
        assert_eq!(&fields[..3], ["row_sums", "orig", "exp"]);
        assert!((fields[3].parse::<f64>().unwrap() - 1.0).abs() < 1e-12, "{summary}");
        assert_eq!(fields[7], "ok");
        assert!(summary
            .lines()
            .any(|l| l.starts_with("spectrum") && l.ends_with("absent")));

        let first: Vec<_> = files.iter().map(|p| std::fs::read(p).unwrap()).collect();
        let again = emit_report(dir.path(), None, &report).unwrap();
        let second: Vec<_> = again.iter().map(|p| std::fs::read(p).unwrap()).collect();
        assert_eq!(first, second);
    }

    #[test]
    fn rank_table_rejects_gaps() {
        assert!(read_rank_table("rank\tvalue\n1\t2.0\n3\t1.0\n".as_bytes()).is_err());
        assert!(read_rank_table("rank\tvalue\n1\tinf\n".as_bytes()).is_err());
        assert_eq!(read_rank_table("1\t2.5\n".as_bytes()).unwrap(), vec![2.5]);
    }
}
