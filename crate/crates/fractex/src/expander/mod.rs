//! Fractal expansion of a sparse binary matrix by a small dense grid.
//!
//! Block `(i, j)` of the output is derived from the base matrix `B` and the
//! grid entry `r_ij`:
//!
//! * deterministic mode: `r_ij · B` (a plain Kronecker product);
//! * randomized mode: `B` with each non-zero kept with probability `r_ij`,
//!   then optionally shuffled by a uniform row and column permutation.
//!
//! Each block draws from its own [`BlockRandomStream`], so the result does not
//! depend on how blocks are scheduled across workers.

mod manifest;
mod shard;
mod stream;

use std::io::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::DenseSmallMatrix;
use crate::error::{Error, Result};
use crate::reducer::ReducedMatrix;
use crate::sparse::{SignedSparseMatrix, SparseBinaryMatrix, SparseRealMatrix};

pub use manifest::{BlockRecord, ConfigEcho, ExpansionManifest, ShardRecord, MANIFEST_VERSION};
pub use shard::{
    assemble_shards, load_expansion, parse_shard, read_shard_bytes, sha256_hex, shard_name, DirectorySink, MemorySink,
    ShardEntry, ShardSink,
};
pub use stream::{derive_block_stream, BlockRandomStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionMode {
    Deterministic,
    #[default]
    Randomized,
}

impl ExpansionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ExpansionMode::Deterministic => "deterministic",
            ExpansionMode::Randomized => "randomized",
        }
    }
}

impl std::str::FromStr for ExpansionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(Self::Deterministic),
            "randomized" => Ok(Self::Randomized),
            _ => Err(Error::InvalidArgument(format!(
                "unknown mode {s:?} (expected deterministic or randomized)"
            ))),
        }
    }
}

/// One shard per block, or one per block row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShardGranularity {
    #[default]
    PerBlock,
    PerBlockRow,
}

impl ShardGranularity {
    pub fn as_str(self) -> &'static str {
        match self {
            ShardGranularity::PerBlock => "per_block",
            ShardGranularity::PerBlockRow => "per_block_row",
        }
    }
}

impl std::str::FromStr for ShardGranularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_block" | "block" => Ok(Self::PerBlock),
            "per_block_row" | "row" => Ok(Self::PerBlockRow),
            _ => Err(Error::InvalidArgument(format!(
                "unknown shard granularity {s:?} (expected per_block or per_block_row)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExpansionConfig {
    pub reduced: ReducedMatrix,
    pub mode: ExpansionMode,
    pub shuffle: bool,
    pub master_seed: u64,
    pub shard_granularity: ShardGranularity,
    /// Generate only these blocks (row-major order is imposed).
    pub block_subset: Option<Vec<(usize, usize)>>,
}

impl ExpansionConfig {
    /// Randomized, shuffled, one shard per block.
    pub fn new(reduced: ReducedMatrix, master_seed: u64) -> Self {
        Self {
            reduced,
            mode: ExpansionMode::Randomized,
            shuffle: true,
            master_seed,
            shard_granularity: ShardGranularity::PerBlock,
            block_subset: None,
        }
    }

    pub fn with_mode(mut self, mode: ExpansionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_shuffle(mut self, shuffle: bool) -> Self {
        self.shuffle = shuffle;
        self
    }

    pub fn with_granularity(mut self, granularity: ShardGranularity) -> Self {
        self.shard_granularity = granularity;
        self
    }

    pub fn with_block_subset(mut self, blocks: Vec<(usize, usize)>) -> Self {
        self.block_subset = Some(blocks);
        self
    }
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidProbability(p))
    }
}

/// One Bernoulli(`keep_prob`) draw per entry, in order.
pub fn dropout_mask(nnz: usize, keep_prob: f64, stream: &mut BlockRandomStream) -> Result<Vec<bool>> {
    check_probability(keep_prob)?;
    Ok((0..nnz).map(|_| stream.bernoulli(keep_prob)).collect())
}

/// Keeps each non-zero of `b` independently with probability `keep_prob`.
pub fn block_dropout(
    b: &SparseBinaryMatrix,
    keep_prob: f64,
    stream: &mut BlockRandomStream,
) -> Result<SparseBinaryMatrix> {
    let mask = dropout_mask(b.nnz(), keep_prob, stream)?;
    Ok(b.select(&mask))
}

/// Row permutation then column permutation, both Fisher–Yates.
fn draw_permutations(n_rows: usize, n_cols: usize, stream: &mut BlockRandomStream) -> (Vec<usize>, Vec<usize>) {
    let rows = stream.permutation(n_rows);
    let cols = stream.permutation(n_cols);
    (rows, cols)
}

/// Applies a uniform row permutation and a uniform column permutation.
pub fn block_shuffle(b: &SparseBinaryMatrix, stream: &mut BlockRandomStream) -> SparseBinaryMatrix {
    let (rows, cols) = draw_permutations(b.n_rows(), b.n_cols(), stream);
    b.permute(&rows, &cols)
}

/// Block `(i, j)` of a randomized expansion, in block-local coordinates.
pub fn randomized_block(
    base: &SparseBinaryMatrix,
    keep_prob: f64,
    shuffle: bool,
    master_seed: u64,
    i: usize,
    j: usize,
) -> Result<SparseBinaryMatrix> {
    let mut stream = derive_block_stream(master_seed, i, j);
    let kept = block_dropout(base, keep_prob, &mut stream)?;
    Ok(if shuffle {
        block_shuffle(&kept, &mut stream)
    } else {
        kept
    })
}

/// One block `a_ij · B` of a Kronecker product, in global coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct KronBlock {
    pub block_row: usize,
    pub block_col: usize,
    pub value: f64,
    pub entries: Vec<(usize, usize)>,
}

/// Blocks of `A ⊗ B` in row-major block order. A zero `a_ij` yields a block
/// with no entries.
pub fn kron_deterministic<'a>(
    a: &'a DenseSmallMatrix,
    b: &'a SparseBinaryMatrix,
) -> impl Iterator<Item = KronBlock> + 'a {
    let (p, q) = b.shape();
    (0..a.n_rows()).flat_map(move |i| {
        (0..a.n_cols()).map(move |j| {
            let value = a.get(i, j);
            let entries = if value == 0.0 {
                Vec::new()
            } else {
                b.iter().map(|(k, l)| (i * p + k, j * q + l)).collect()
            };
            KronBlock {
                block_row: i,
                block_col: j,
                value,
                entries,
            }
        })
    })
}

/// `A ⊗ B` as one sparse matrix.
pub fn kron_assemble(a: &DenseSmallMatrix, b: &SparseBinaryMatrix) -> Result<SparseRealMatrix> {
    let entries = kron_deterministic(a, b).flat_map(|blk| {
        let v = blk.value;
        blk.entries.into_iter().map(move |(r, c)| (r, c, v))
    });
    SparseRealMatrix::from_entries(entries, a.n_rows() * b.n_rows(), a.n_cols() * b.n_cols())
}

/// Where entries of one sign end up.
struct Output<'a> {
    label: &'static str,
    sign: i8,
    sink: &'a dyn ShardSink,
}

struct Plan {
    rates: DenseSmallMatrix,
    clamped: usize,
    /// Blocks grouped into shards, each group in row-major order.
    units: Vec<Vec<(usize, usize)>>,
}

fn plan(cfg: &ExpansionConfig) -> Result<Plan> {
    let (mp, np) = cfg.reduced.shape();
    if mp == 0 || np == 0 {
        return Err(Error::InvalidArgument("reduced matrix is empty".into()));
    }
    let (rates, clamped) = match cfg.mode {
        ExpansionMode::Randomized => cfg.reduced.keep_probabilities()?,
        ExpansionMode::Deterministic => (cfg.reduced.data().clone(), 0),
    };
    let blocks: Vec<(usize, usize)> = match &cfg.block_subset {
        None => (0..mp).flat_map(|i| (0..np).map(move |j| (i, j))).collect(),
        Some(subset) => {
            if let Some(&(i, j)) = subset.iter().find(|&&(i, j)| i >= mp || j >= np) {
                return Err(Error::InvalidArgument(format!(
                    "block ({i}, {j}) outside the {mp}x{np} grid"
                )));
            }
            let mut subset = subset.clone();
            subset.sort_unstable();
            subset.dedup();
            subset
        }
    };
    let units = match cfg.shard_granularity {
        ShardGranularity::PerBlock => blocks.into_iter().map(|b| vec![b]).collect(),
        ShardGranularity::PerBlockRow => {
            let mut units: Vec<Vec<(usize, usize)>> = Vec::new();
            for b in blocks {
                match units.last_mut() {
                    Some(u) if u[0].0 == b.0 => u.push(b),
                    _ => units.push(vec![b]),
                }
            }
            units
        }
    };
    Ok(Plan { rates, clamped, units })
}

/// The transformed block `(i, j)` in local coordinates, signs carried along.
fn transform_block(
    cfg: &ExpansionConfig,
    base: &SignedSparseMatrix,
    rate: f64,
    i: usize,
    j: usize,
) -> Result<SignedSparseMatrix> {
    let mut stream = derive_block_stream(cfg.master_seed, i, j);
    let kept = match cfg.mode {
        ExpansionMode::Randomized => base.select(&dropout_mask(base.nnz(), rate, &mut stream)?),
        ExpansionMode::Deterministic if rate == 0.0 => base.select(&vec![false; base.nnz()]),
        ExpansionMode::Deterministic => base.clone(),
    };
    if cfg.shuffle {
        let (rows, cols) = draw_permutations(base.n_rows(), base.n_cols(), &mut stream);
        Ok(kept.permute(&rows, &cols))
    } else {
        Ok(kept)
    }
}

struct ShardOutcome {
    written: io::Result<String>,
    nnz: u64,
    sha256: String,
    kept: Vec<u64>,
}

/// Renders and writes the shard of one output for one unit.
fn write_unit(
    cfg: &ExpansionConfig,
    unit: &[(usize, usize)],
    blocks: &[SignedSparseMatrix],
    rates: &DenseSmallMatrix,
    out: &Output<'_>,
) -> ShardOutcome {
    let (p, q) = (blocks[0].n_rows(), blocks[0].n_cols());
    let valued = cfg.mode == ExpansionMode::Deterministic;
    let mut kept = vec![0u64; unit.len()];
    let mut text = Vec::new();
    // Within a unit every block shares the block row, so walking local rows
    // across blocks in column order yields (row, col)-sorted output.
    let per_row: Vec<Vec<Vec<(usize, i8)>>> = blocks
        .iter()
        .map(|b| {
            let mut rows = vec![Vec::new(); p];
            for (r, c, s) in b.iter() {
                rows[r].push((c, s));
            }
            rows
        })
        .collect();
    let block_row = unit[0].0;
    for k in 0..p {
        for (idx, &(i, j)) in unit.iter().enumerate() {
            let value = rates.get(i, j);
            for &(l, s) in &per_row[idx][k] {
                if s != out.sign {
                    continue;
                }
                kept[idx] += 1;
                let (gr, gc) = (block_row * p + k, j * q + l);
                if valued {
                    writeln!(text, "{gr}\t{gc}\t{value:.16e}").expect("write to Vec");
                } else {
                    writeln!(text, "{gr}\t{gc}").expect("write to Vec");
                }
            }
        }
    }
    let name = shard_name(cfg.shard_granularity, unit[0].0, unit[0].1);
    ShardOutcome {
        written: out.sink.write_shard(&name, &text),
        nnz: kept.iter().sum(),
        sha256: sha256_hex(&text),
        kept,
    }
}

fn run(
    cfg: &ExpansionConfig,
    base: &SignedSparseMatrix,
    outputs: &[Output<'_>],
    workers: usize,
) -> Result<Vec<ExpansionManifest>> {
    let plan = plan(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;

    let results: Vec<Result<Vec<ShardOutcome>>> = pool.install(|| {
        plan.units
            .par_iter()
            .map(|unit| {
                let blocks = unit
                    .iter()
                    .map(|&(i, j)| transform_block(cfg, base, plan.rates.get(i, j), i, j))
                    .collect::<Result<Vec<_>>>()?;
                Ok(outputs
                    .iter()
                    .map(|out| write_unit(cfg, unit, &blocks, &plan.rates, out))
                    .collect())
            })
            .collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;

    let (mp, np) = cfg.reduced.shape();
    let config = ConfigEcho {
        mode: cfg.mode,
        shuffle: cfg.shuffle,
        shard_granularity: cfg.shard_granularity,
        rescale_mode: cfg.reduced.rescale_mode(),
        clamped_rates: plan.clamped,
        block_subset: cfg
            .block_subset
            .as_ref()
            .map(|_| plan.units.iter().flatten().map(|&(i, j)| [i, j]).collect()),
    };
    let mut manifests = Vec::with_capacity(outputs.len());
    let mut failure: Option<(usize, io::Error)> = None;
    for (o, out) in outputs.iter().enumerate() {
        let base_nnz = base.values().iter().filter(|&&s| s == out.sign).count() as u64;
        let mut blocks = Vec::new();
        let mut shards = Vec::new();
        let mut expected = 0.0;
        for (unit, outcomes) in plan.units.iter().zip(&results) {
            let shard = &outcomes[o];
            let file = match &shard.written {
                Ok(file) => file.clone(),
                Err(e) => {
                    if failure.is_none() {
                        failure = Some((o, io::Error::new(e.kind(), e.to_string())));
                    }
                    continue;
                }
            };
            for (&(i, j), &kept) in unit.iter().zip(&shard.kept) {
                let rate = plan.rates.get(i, j);
                expected += match cfg.mode {
                    ExpansionMode::Randomized => rate * base_nnz as f64,
                    ExpansionMode::Deterministic if rate == 0.0 => 0.0,
                    ExpansionMode::Deterministic => base_nnz as f64,
                };
                blocks.push(BlockRecord {
                    block_row: i,
                    block_col: j,
                    rate,
                    kept,
                });
            }
            shards.push(ShardRecord {
                file,
                blocks: unit.iter().map(|&(i, j)| [i, j]).collect(),
                nnz: shard.nnz,
                sha256: shard.sha256.clone(),
            });
        }
        manifests.push(ExpansionManifest {
            format_version: MANIFEST_VERSION,
            label: out.label.to_owned(),
            reduced_dims: [mp, np],
            base_dims: [base.n_rows(), base.n_cols()],
            expanded_dims: [mp * base.n_rows(), np * base.n_cols()],
            seed: cfg.master_seed,
            config: config.clone(),
            base_nnz,
            expected_nnz: expected,
            total_nnz: blocks.iter().map(|b| b.kept).sum(),
            blocks,
            shards,
            complete: true,
            run_config: None,
        });
    }
    if let Some((o, source)) = failure {
        for m in &mut manifests {
            m.complete = false;
        }
        return Err(Error::PartialOutput {
            written: manifests[o].shards.len(),
            total: plan.units.len(),
            manifest: Box::new(manifests.swap_remove(o)),
            source,
        });
    }
    Ok(manifests)
}

/// Expands `base` by the grid in `cfg`, writing shards to `sink` on a pool of
/// `workers` threads (0 picks the number of CPUs).
///
/// A failed shard write yields [`Error::PartialOutput`] carrying a manifest
/// of the shards that were written, marked incomplete.
pub fn expand_randomized(
    cfg: &ExpansionConfig,
    base: &SparseBinaryMatrix,
    sink: &dyn ShardSink,
    workers: usize,
) -> Result<ExpansionManifest> {
    let signed = SignedSparseMatrix::from_binary(base);
    let outputs = [Output {
        label: "expanded",
        sign: 1,
        sink,
    }];
    Ok(run(cfg, &signed, &outputs, workers)?.remove(0))
}

/// Expands train and test together as `train − test` and splits the result
/// by sign, so both see the same dropout draws and permutations and their
/// expansions never share an entry.
pub fn expand_split(
    cfg: &ExpansionConfig,
    train: &SparseBinaryMatrix,
    test: &SparseBinaryMatrix,
    train_sink: &dyn ShardSink,
    test_sink: &dyn ShardSink,
    workers: usize,
) -> Result<(ExpansionManifest, ExpansionManifest)> {
    let signed = SignedSparseMatrix::from_difference(train, test)?;
    let outputs = [
        Output {
            label: "train",
            sign: 1,
            sink: train_sink,
        },
        Output {
            label: "test",
            sign: -1,
            sink: test_sink,
        },
    ];
    let mut manifests = run(cfg, &signed, &outputs, workers)?;
    let test = manifests.pop().expect("two outputs");
    let train = manifests.pop().expect("two outputs");
    Ok((train, test))
}
