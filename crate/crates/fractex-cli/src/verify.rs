use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use fractex::expander::{
    expand_randomized, expand_split, load_expansion, parse_shard, read_shard_bytes, sha256_hex, ExpansionConfig,
    ExpansionManifest, ExpansionMode, MemorySink,
};
use fractex::reducer::ReducedMatrix;
use fractex::stats::minkowski_product;
use fractex::{DenseSmallMatrix, SparseBinaryMatrix, SparseRealMatrix};

use crate::commands::{grid_from_manifest, read_manifest, read_matrix, require, MANIFEST_FILE};
use crate::config::{pick, resolve, FileConfig};
use crate::{Failure, VerifyArgs};

/// Largest expansion (in cells) whose spectrum is checked densely.
const DENSE_SPECTRUM_LIMIT: usize = 1_000_000;

#[derive(Default)]
struct Checks {
    results: Vec<(bool, String)>,
}

impl Checks {
    fn record(&mut self, pass: bool, name: &str, detail: impl AsRef<str>) {
        let line = format!("{name}: {}", detail.as_ref());
        println!("{} {line}", if pass { "PASS" } else { "FAIL" });
        self.results.push((pass, line));
    }

    fn skip(&mut self, name: &str, why: &str) {
        println!("SKIP {name}: {why}");
    }

    fn first_failure(&self) -> Option<&str> {
        self.results.iter().find(|(ok, _)| !ok).map(|(_, l)| l.as_str())
    }
}

fn layout(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    if dir.join(MANIFEST_FILE).exists() {
        return Ok(vec![dir.to_owned()]);
    }
    let split = [dir.join("train"), dir.join("test")];
    if split.iter().all(|d| d.join(MANIFEST_FILE).exists()) {
        return Ok(split.to_vec());
    }
    Err(Failure::Data(anyhow::anyhow!(
        "no {MANIFEST_FILE} in {} or its train/ and test/ subdirectories",
        dir.display()
    )))
}

/// Recounts every shard and compares against the manifest.
fn check_shards(checks: &mut Checks, dir: &Path, m: &ExpansionManifest) {
    let name = format!("{} shards", m.label);
    if !m.complete {
        checks.record(false, &name, "manifest marks the output as incomplete");
    }
    let [p, q] = m.base_dims;
    let mut problems = Vec::new();
    for shard in &m.shards {
        let bytes = match read_shard_bytes(&dir.join(&shard.file)) {
            Ok(b) => b,
            Err(e) => {
                problems.push(format!("{}: {e}", shard.file));
                continue;
            }
        };
        if sha256_hex(&bytes) != shard.sha256 {
            problems.push(format!("{}: checksum mismatch", shard.file));
        }
        let entries = match parse_shard(bytes.as_slice()) {
            Ok(e) => e,
            Err(e) => {
                problems.push(format!("{}: {e}", shard.file));
                continue;
            }
        };
        let mut counts: BTreeMap<[usize; 2], u64> = shard.blocks.iter().map(|&b| (b, 0)).collect();
        for e in &entries {
            let block = [e.row / p.max(1), e.col / q.max(1)];
            match counts.get_mut(&block) {
                Some(c) => *c += 1,
                None => problems.push(format!(
                    "{}: entry ({}, {}) lies in block ({}, {}), which this shard does not hold",
                    shard.file, e.row, e.col, block[0], block[1]
                )),
            }
        }
        for ([i, j], found) in counts {
            let recorded = m.block(i, j).map_or(0, |b| b.kept);
            if found != recorded {
                problems.push(format!(
                    "block ({i}, {j}): manifest records {recorded} entries, {} has {found}",
                    shard.file
                ));
            }
        }
    }
    if problems.is_empty() {
        checks.record(
            true,
            &name,
            format!("{} shards, {} entries match the manifest", m.shards.len(), m.total_nnz),
        );
    } else {
        checks.record(false, &name, problems.join("; "));
    }
}

fn config_from_manifest(m: &ExpansionManifest) -> ExpansionConfig {
    let [mp, np] = m.reduced_dims;
    let mut grid = DenseSmallMatrix::zeros(mp, np);
    for b in &m.blocks {
        grid.set(b.block_row, b.block_col, b.rate);
    }
    let reduced = ReducedMatrix::from_rates(grid, m.config.rescale_mode, m.seed);
    let mut cfg = ExpansionConfig::new(reduced, m.seed)
        .with_mode(m.config.mode)
        .with_shuffle(m.config.shuffle)
        .with_granularity(m.config.shard_granularity);
    if let Some(subset) = &m.config.block_subset {
        cfg = cfg.with_block_subset(subset.iter().map(|&[i, j]| (i, j)).collect());
    }
    cfg
}

/// Re-runs the expansion in memory and compares shard checksums.
fn check_regeneration(
    checks: &mut Checks,
    manifests: &[ExpansionManifest],
    base: &SparseBinaryMatrix,
    test: Option<&SparseBinaryMatrix>,
    workers: usize,
) {
    let cfg = config_from_manifest(&manifests[0]);
    let sinks: Vec<MemorySink> = manifests.iter().map(|_| MemorySink::new()).collect();
    let rerun = match test {
        None => expand_randomized(&cfg, base, &sinks[0], workers).map(|m| vec![m]),
        Some(t) => expand_split(&cfg, base, t, &sinks[0], &sinks[1], workers).map(|(a, b)| vec![a, b]),
    };
    let rerun = match rerun {
        Ok(r) => r,
        Err(e) => {
            checks.record(false, "regeneration", format!("re-running the expansion failed: {e}"));
            return;
        }
    };
    for (m, again) in manifests.iter().zip(&rerun) {
        let differing: Vec<String> = m
            .shards
            .iter()
            .zip(&again.shards)
            .filter(|(a, b)| a.sha256 != b.sha256 || a.nnz != b.nnz)
            .map(|(a, _)| a.file.clone())
            .collect();
        let name = format!("{} regeneration", m.label);
        if m.shards.len() != again.shards.len() {
            checks.record(false, &name, "re-run produced a different shard count");
        } else if differing.is_empty() {
            checks.record(
                true,
                &name,
                format!("{} shards reproduced from seed {}", m.shards.len(), m.seed),
            );
        } else {
            checks.record(
                false,
                &name,
                format!("shards differ from a re-run: {}", differing.join(", ")),
            );
        }
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Largest entrywise gap relative to the largest magnitude.
fn max_rel_gap(a: &[f64], b: &[f64]) -> f64 {
    let scale = a
        .iter()
        .chain(b)
        .fold(0.0f64, |s, v| s.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

fn check_deterministic(
    checks: &mut Checks,
    m: &ExpansionManifest,
    expanded: &SparseRealMatrix,
    base: &SparseBinaryMatrix,
) {
    let Some(grid) = grid_from_manifest(m) else {
        checks.skip(&format!("{} sums", m.label), "only part of the grid was expanded");
        return;
    };
    let counts = |v: Vec<usize>| v.into_iter().map(|c| c as f64).collect::<Vec<_>>();
    for (what, got, want) in [
        (
            "row sums",
            expanded.row_sums(),
            minkowski_product(&grid.row_sums(), &counts(base.row_sums())),
        ),
        (
            "column sums",
            expanded.col_sums(),
            minkowski_product(&grid.col_sums(), &counts(base.col_sums())),
        ),
    ] {
        let gap = max_rel_gap(&sorted(got), &sorted(want));
        checks.record(
            gap <= 1e-12,
            &format!("{} {what}", m.label),
            format!("ranked sums vs pairwise products of the factor sums, max relative gap {gap:.3e}"),
        );
    }

    let [rows, cols] = m.expanded_dims;
    if rows * cols > DENSE_SPECTRUM_LIMIT {
        checks.skip(
            &format!("{} spectrum", m.label),
            "expansion too large for the dense check",
        );
        return;
    }
    let got = expanded.to_dense().singular_values();
    let mut want = minkowski_product(&grid.singular_values(), &base.to_dense().singular_values());
    want = sorted(want);
    want.truncate(got.len());
    let gap = max_rel_gap(&got, &want);
    checks.record(
        gap <= 1e-9,
        &format!("{} spectrum", m.label),
        format!("singular values vs pairwise products of the factor spectra, max relative gap {gap:.3e}"),
    );
}

fn check_concentration(checks: &mut Checks, m: &ExpansionManifest) {
    let n = m.base_nnz as f64;
    let outliers: Vec<String> = m
        .blocks
        .iter()
        .filter(|b| {
            let mean = b.rate * n;
            let sd = (n * b.rate * (1.0 - b.rate)).sqrt();
            (b.kept as f64 - mean).abs() > 4.0 * sd
        })
        .map(|b| {
            format!(
                "({}, {}) kept {} of {} at rate {:.4}",
                b.block_row, b.block_col, b.kept, m.base_nnz, b.rate
            )
        })
        .collect();
    let allowed = m.blocks.len() / 100;
    let detail = if outliers.is_empty() {
        format!("all {} blocks within 4 sigma of their binomial mean", m.blocks.len())
    } else {
        format!(
            "{} of {} blocks outside 4 sigma: {}",
            outliers.len(),
            m.blocks.len(),
            outliers.join("; ")
        )
    };
    checks.record(outliers.len() <= allowed, &format!("{} dropout", m.label), detail);
}

fn check_disjoint(checks: &mut Checks, train: &SparseRealMatrix, test: &SparseRealMatrix) {
    let train_support: HashSet<(usize, usize)> = train.iter().map(|(r, c, _)| (r, c)).collect();
    let shared = test.iter().filter(|&(r, c, _)| train_support.contains(&(r, c))).count();
    checks.record(
        shared == 0,
        "leak",
        format!("{shared} entries shared by the expanded train and test matrices"),
    );
}

pub fn verify(args: VerifyArgs, file: &FileConfig) -> Result<(), Failure> {
    let dir = resolve(&require(pick(args.expanded, file.expanded.clone()), "expanded")?);
    let input = pick(args.input, file.input.clone()).map(|p| resolve(&p));
    let test = pick(args.test, file.test.clone()).map(|p| resolve(&p));
    let workers = pick(args.workers, file.workers).unwrap_or(0);

    let dirs = layout(&dir)?;
    let manifests = dirs
        .iter()
        .map(|d| read_manifest(d))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut checks = Checks::default();
    for (d, m) in dirs.iter().zip(&manifests) {
        check_shards(&mut checks, d, m);
    }
    let expanded = dirs
        .iter()
        .zip(&manifests)
        .map(|(d, m)| load_expansion(d, m))
        .collect::<fractex::Result<Vec<_>>>();
    let expanded = match expanded {
        Ok(e) => Some(e),
        Err(e) => {
            checks.record(false, "load", format!("shards could not be assembled: {e}"));
            None
        }
    };

    if let (Some([train, test]), true) = (expanded.as_deref(), manifests.len() == 2) {
        check_disjoint(&mut checks, train, test);
    }

    if let Some(input) = &input {
        let base = read_matrix(input)?;
        let test_matrix = match (&test, manifests.len()) {
            (Some(t), 2) => Some(read_matrix(t)?),
            (None, 2) => return Err(crate::usage("a split expansion needs --test to be regenerated")),
            _ => None,
        };
        if manifests[0].base_dims != [base.n_rows(), base.n_cols()] {
            checks.record(
                false,
                "input",
                format!(
                    "{} is {}x{} but the expansion was built from {:?}",
                    input.display(),
                    base.n_rows(),
                    base.n_cols(),
                    manifests[0].base_dims
                ),
            );
        } else {
            check_regeneration(&mut checks, &manifests, &base, test_matrix.as_ref(), workers);
            let bases: Vec<&SparseBinaryMatrix> = std::iter::once(&base).chain(test_matrix.as_ref()).collect();
            for (k, m) in manifests.iter().enumerate() {
                match m.config.mode {
                    ExpansionMode::Randomized => check_concentration(&mut checks, m),
                    ExpansionMode::Deterministic if !m.config.shuffle => {
                        if let Some(e) = &expanded {
                            check_deterministic(&mut checks, m, &e[k], bases[k]);
                        }
                    }
                    ExpansionMode::Deterministic => checks.skip(
                        &format!("{} sums", m.label),
                        "shuffled output is checked by regeneration only",
                    ),
                }
            }
        }
    } else {
        checks.skip("regeneration", "no --input given");
    }

    let failed = checks.results.iter().filter(|(ok, _)| !ok).count();
    match checks.first_failure() {
        None => {
            println!("all {} checks passed", checks.results.len());
            Ok(())
        }
        Some(first) => Err(Failure::Verification(format!(
            "{failed} of {} checks failed; first: {first}",
            checks.results.len()
        ))),
    }
}
