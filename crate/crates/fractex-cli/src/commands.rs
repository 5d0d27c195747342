use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde_json::json;

use fractex::expander::{
    expand_randomized, expand_split, load_expansion, DirectorySink, ExpansionConfig, ExpansionManifest, ExpansionMode,
    ShardGranularity,
};
use fractex::ingest::{parse_ratings, prepare, RatingFormat};
use fractex::reducer::{build_reduced_with, sketch_reduced, ReducedMatrix, RescaleMode};
use fractex::spectral::{truncated_svd, write_spectrum, SvdParams};
use fractex::stats::{emit_report, predict_expanded_spectrum, RankedDistribution, Report, Statistic};
use fractex::{DenseSmallMatrix, Error, SparseBinaryMatrix};

use crate::config::{pick, resolve, FileConfig};
use crate::{usage, ExpandArgs, Failure, ReduceArgs, SplitArgs, StatsArgs, SvdArgs};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn require<T>(value: Option<T>, flag: &str) -> Result<T, Failure> {
    value.ok_or_else(|| usage(format!("missing required option --{flag} (flag or config key)")))
}

pub fn parse_choice<T: std::str::FromStr<Err = Error>>(value: Option<&str>, default: T) -> Result<T, Failure> {
    match value {
        None => Ok(default),
        Some(s) => s.parse().map_err(|e: Error| usage(e.to_string())),
    }
}

/// Flag, then config, then `FRACTEX_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64, Failure> {
    if let Some(seed) = pick(flag, file) {
        return Ok(seed);
    }
    match std::env::var("FRACTEX_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|e| usage(format!("FRACTEX_SEED={s:?} is not an unsigned integer: {e}"))),
        Err(_) => Ok(0),
    }
}

fn svd_params(args: &SvdArgs, file: &FileConfig, seed: u64) -> SvdParams {
    let defaults = SvdParams::with_seed(seed);
    SvdParams {
        seed,
        n_power_iters: pick(args.power_iters, file.power_iters).unwrap_or(defaults.n_power_iters),
        oversample: pick(args.oversample, file.oversample).unwrap_or(defaults.oversample),
    }
}

pub fn read_matrix(path: &Path) -> anyhow::Result<SparseBinaryMatrix> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    SparseBinaryMatrix::read_triplets(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn read_reduced(path: &Path) -> anyhow::Result<ReducedMatrix> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    ReducedMatrix::read_table(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

pub fn read_manifest(dir: &Path) -> anyhow::Result<ExpansionManifest> {
    let path = dir.join(MANIFEST_FILE);
    ExpansionManifest::read(&path).with_context(|| format!("reading {}", path.display()))
}

/// The grid of block rates, when the manifest covers every block.
pub fn grid_from_manifest(m: &ExpansionManifest) -> Option<DenseSmallMatrix> {
    let [mp, np] = m.reduced_dims;
    if m.blocks.len() != mp * np {
        return None;
    }
    let mut grid = DenseSmallMatrix::zeros(mp, np);
    for b in &m.blocks {
        grid.set(b.block_row, b.block_col, b.rate);
    }
    Some(grid)
}

pub fn split(args: SplitArgs, file: &FileConfig) -> Result<(), Failure> {
    let input = resolve(&require(pick(args.input, file.input.clone()), "input")?);
    let out = resolve(&require(pick(args.out, file.out.clone()), "out")?);

    let reader = File::open(&input).with_context(|| format!("cannot open {}", input.display()))?;
    let events = parse_ratings(BufReader::new(reader), RatingFormat::from_path(&input))
        .with_context(|| format!("reading {}", input.display()))?;
    let users_in: std::collections::HashSet<&str> = events.iter().map(|e| e.user_id.as_str()).collect();
    let users_in = users_in.len();
    let data = prepare(events)?;
    data.write_to_dir(&out)?;

    println!(
        "users {} (dropped {}), items {}, train nnz {}, test nnz {}",
        data.user_index.len(),
        users_in - data.user_index.len(),
        data.item_index.len(),
        data.train.nnz(),
        data.test.nnz()
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn spectrum_path(table: &Path) -> PathBuf {
    let mut name = table.as_os_str().to_owned();
    name.push(".spectrum.tsv");
    PathBuf::from(name)
}

pub fn reduce(args: ReduceArgs, file: &FileConfig) -> Result<(), Failure> {
    let input = resolve(&require(pick(args.input, file.input.clone()), "input")?);
    let out = resolve(&require(pick(args.out, file.out.clone()), "out")?);
    let rows = require(pick(args.rows, file.rows), "rows")?;
    let cols = require(pick(args.cols, file.cols), "cols")?;
    let seed = resolve_seed(args.seed, file.seed)?;
    let rescale = parse_choice(
        args.rescale.as_deref().or(file.rescale.as_deref()),
        RescaleMode::UnitInterval,
    )?;
    let params = svd_params(&args.svd, file, seed);

    let r = read_matrix(&input)?;
    let reduced = if args.sketch {
        sketch_reduced(&r, rows, cols, seed)?
    } else {
        build_reduced_with(&r, rows, cols, rescale, &params)?
    };
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    reduced.write_table(BufWriter::new(File::create(&out)?))?;
    write_spectrum(
        reduced.source_spectrum(),
        BufWriter::new(File::create(spectrum_path(&out))?),
    )?;

    let (m, n) = reduced.shape();
    println!(
        "reduced {m}x{n} ({}) written to {}",
        reduced.rescale_mode().as_str(),
        out.display()
    );
    Ok(())
}

pub fn expand(args: ExpandArgs, file: &FileConfig) -> Result<(), Failure> {
    let input = resolve(&require(pick(args.input, file.input.clone()), "input")?);
    let out = resolve(&require(pick(args.out, file.out.clone()), "out")?);
    let test = pick(args.test, file.test.clone()).map(|p| resolve(&p));
    let reduced_path = pick(args.reduced, file.reduced.clone()).map(|p| resolve(&p));
    let seed = resolve_seed(args.seed, file.seed)?;
    let mode = parse_choice(args.mode.as_deref().or(file.mode.as_deref()), ExpansionMode::Randomized)?;
    let shuffle = pick(args.shuffle, file.shuffle).unwrap_or(true);
    let rescale = parse_choice(
        args.rescale.as_deref().or(file.rescale.as_deref()),
        RescaleMode::UnitInterval,
    )?;
    let granularity = parse_choice(
        args.granularity.as_deref().or(file.granularity.as_deref()),
        ShardGranularity::PerBlock,
    )?;
    let workers = pick(args.workers, file.workers).unwrap_or(0);
    let gzip = pick(args.gzip, file.gzip).unwrap_or(false);
    let stride = pick(args.subset_stride, file.subset_stride);
    if stride == Some(0) {
        return Err(usage("--subset-stride must be at least 1"));
    }
    let params = svd_params(&args.svd, file, seed);

    let base = read_matrix(&input)?;
    let test_matrix = test.as_deref().map(read_matrix).transpose()?;
    let reduced = match &reduced_path {
        Some(path) => read_reduced(path)?,
        None => {
            let rows = require(pick(args.rows, file.rows), "rows (or --reduced)")?;
            let cols = require(pick(args.cols, file.cols), "cols (or --reduced)")?;
            build_reduced_with(&base, rows, cols, rescale, &params)?
        }
    };
    let (mp, np) = reduced.shape();

    let mut cfg = ExpansionConfig::new(reduced.clone(), seed)
        .with_mode(mode)
        .with_shuffle(shuffle)
        .with_granularity(granularity);
    if let Some(s) = stride {
        let blocks = (0..mp * np).step_by(s).map(|b| (b / np, b % np)).collect();
        cfg = cfg.with_block_subset(blocks);
    }

    // Output location and worker count do not affect the shards, so they stay
    // out of the echo and manifests compare byte for byte across runs.
    let run_config = json!({
        "command": "expand",
        "input": input,
        "test": test,
        "reduced": reduced_path,
        "rows": mp,
        "cols": np,
        "seed": seed,
        "mode": mode.as_str(),
        "shuffle": shuffle,
        "rescale_mode": reduced.rescale_mode().as_str(),
        "shard_granularity": granularity.as_str(),
        "gzip": gzip,
        "subset_stride": stride,
        "svd": { "n_power_iters": params.n_power_iters, "oversample": params.oversample },
    });

    let finish = |dir: &Path, mut m: ExpansionManifest| -> anyhow::Result<ExpansionManifest> {
        m.run_config = Some(run_config.clone());
        m.write(&dir.join(MANIFEST_FILE))?;
        Ok(m)
    };
    let on_partial = |dir: &Path, e: Error| -> Failure {
        if let Error::PartialOutput { manifest, .. } = &e {
            let _ = finish(dir, (**manifest).clone());
        }
        Failure::Data(e.into())
    };

    let summary = |m: &ExpansionManifest| {
        println!(
            "{}: {}x{} from {}x{} grid, {} shards, nnz {} (expected {:.1})",
            m.label,
            m.expanded_dims[0],
            m.expanded_dims[1],
            m.reduced_dims[0],
            m.reduced_dims[1],
            m.shards.len(),
            m.total_nnz,
            m.expected_nnz
        )
    };
    match &test_matrix {
        None => {
            let sink = DirectorySink::new(&out, gzip)?;
            let m = expand_randomized(&cfg, &base, &sink, workers).map_err(|e| on_partial(&out, e))?;
            summary(&finish(&out, m)?);
        }
        Some(test_matrix) => {
            let (train_dir, test_dir) = (out.join("train"), out.join("test"));
            let train_sink = DirectorySink::new(&train_dir, gzip)?;
            let test_sink = DirectorySink::new(&test_dir, gzip)?;
            let (mt, ms) = expand_split(&cfg, &base, test_matrix, &train_sink, &test_sink, workers)
                .map_err(|e| on_partial(&train_dir, e))?;
            summary(&finish(&train_dir, mt)?);
            summary(&finish(&test_dir, ms)?);
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn counts_as_f64(v: &[usize]) -> Vec<f64> {
    v.iter().map(|&c| c as f64).collect()
}

pub fn stats(args: StatsArgs, file: &FileConfig) -> Result<(), Failure> {
    let input = resolve(&require(pick(args.input, file.input.clone()), "input")?);
    let expanded_dir = resolve(&require(pick(args.expanded, file.expanded.clone()), "expanded")?);
    let out = resolve(&require(pick(args.out, file.out.clone()), "out")?);
    let top_k = pick(args.top_k, file.top_k).unwrap_or(20);
    let seed = resolve_seed(args.seed, file.seed)?;
    let workers = pick(args.workers, file.workers).unwrap_or(0);

    let base = read_matrix(&input)?;
    let manifest = read_manifest(&expanded_dir)?;
    if manifest.base_dims != [base.n_rows(), base.n_cols()] {
        return Err(Failure::Data(anyhow::anyhow!(
            "{} is {}x{} but the expansion was built from a {}x{} matrix",
            input.display(),
            base.n_rows(),
            base.n_cols(),
            manifest.base_dims[0],
            manifest.base_dims[1]
        )));
    }
    let expanded = load_expansion(&expanded_dir, &manifest)?;

    let pool = rayon_pool(workers)?;
    let params = SvdParams::with_seed(seed);
    let spectrum = |op: &dyn fractex::LinearOperator| -> anyhow::Result<Vec<f64>> {
        let k = top_k.min(op.n_rows()).min(op.n_cols());
        if k == 0 {
            return Ok(Vec::new());
        }
        Ok(pool.install(|| truncated_svd(op, k, &params))?.sigma)
    };
    let sigma_base = spectrum(&base)?;
    let sigma_expanded = spectrum(&expanded)?;

    let mut report = Report::default();
    report.add(
        Statistic::RowSums,
        RankedDistribution::from_counts("original", &base.row_sums()),
    );
    report.add(
        Statistic::ColSums,
        RankedDistribution::from_counts("original", &base.col_sums()),
    );
    report.add(
        Statistic::Spectrum,
        RankedDistribution::new("original", sigma_base.clone())?,
    );
    report.add(
        Statistic::RowSums,
        RankedDistribution::new("expanded", expanded.row_sums())?,
    );
    report.add(
        Statistic::ColSums,
        RankedDistribution::new("expanded", expanded.col_sums())?,
    );
    report.add(
        Statistic::Spectrum,
        RankedDistribution::new("expanded", sigma_expanded)?,
    );
    for stat in [Statistic::RowSums, Statistic::ColSums, Statistic::Spectrum] {
        report.compare(stat, "original", "expanded");
    }
    if let Some(grid) = grid_from_manifest(&manifest) {
        let rows = fractex::stats::minkowski_product(&grid.row_sums(), &counts_as_f64(&base.row_sums()));
        let cols = fractex::stats::minkowski_product(&grid.col_sums(), &counts_as_f64(&base.col_sums()));
        report.add(Statistic::RowSums, RankedDistribution::new("predicted", rows)?);
        report.add(Statistic::ColSums, RankedDistribution::new("predicted", cols)?);
        report.add(
            Statistic::Spectrum,
            predict_expanded_spectrum(&grid.singular_values(), &sigma_base, top_k)?,
        );
        for stat in [Statistic::RowSums, Statistic::ColSums, Statistic::Spectrum] {
            report.compare(stat, "predicted", "expanded");
        }
    }

    let files = emit_report(&out, Some(&manifest), &report)?;
    let summary = files.last().expect("summary is always written");
    print!("{}", std::fs::read_to_string(summary)?);
    println!("wrote {} files to {}", files.len(), out.display());
    Ok(())
}

pub fn rayon_pool(workers: usize) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}
