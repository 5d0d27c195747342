//! Shard output: sinks, file naming, and the `global_row<TAB>global_col`
//! text format.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sparse::SparseRealMatrix;

use super::manifest::ExpansionManifest;
use super::ShardGranularity;

/// Destination for finished shards. Called concurrently from worker threads,
/// each time with a distinct name.
pub trait ShardSink: Sync {
    /// Stores `content` under `name` and returns the name actually used.
    fn write_shard(&self, name: &str, content: &[u8]) -> io::Result<String>;
}

/// Writes each shard to its own file, optionally gzip-compressed (`.gz`
/// appended). The gzip header carries no timestamp or file name, so
/// compressed output is reproducible too.
#[derive(Debug, Clone)]
pub struct DirectorySink {
    dir: PathBuf,
    gzip: bool,
}

impl DirectorySink {
    pub fn new(dir: impl Into<PathBuf>, gzip: bool) -> io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir, gzip })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl ShardSink for DirectorySink {
    fn write_shard(&self, name: &str, content: &[u8]) -> io::Result<String> {
        if self.gzip {
            let name = format!("{name}.gz");
            let mut enc = GzEncoder::new(File::create(self.dir.join(&name))?, Compression::default());
            enc.write_all(content)?;
            enc.finish()?.sync_data()?;
            Ok(name)
        } else {
            std::fs::write(self.dir.join(name), content)?;
            Ok(name.to_owned())
        }
    }
}

/// Keeps shards in memory, keyed by name.
#[derive(Debug, Default)]
pub struct MemorySink {
    shards: Mutex<BTreeMap<String, Vec<u8>>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_shards(self) -> BTreeMap<String, Vec<u8>> {
        self.shards.into_inner().expect("sink mutex poisoned")
    }
}

impl ShardSink for MemorySink {
    fn write_shard(&self, name: &str, content: &[u8]) -> io::Result<String> {
        self.shards
            .lock()
            .expect("sink mutex poisoned")
            .insert(name.to_owned(), content.to_vec());
        Ok(name.to_owned())
    }
}

/// `part-{row:05}-{col:05}.tsv` per block, or `part-{row:05}.tsv` per block
/// row.
pub fn shard_name(granularity: ShardGranularity, block_row: usize, block_col: usize) -> String {
    match granularity {
        ShardGranularity::PerBlock => format!("part-{block_row:05}-{block_col:05}.tsv"),
        ShardGranularity::PerBlockRow => format!("part-{block_row:05}.tsv"),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// One shard line. `value` is present only for deterministic expansions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShardEntry {
    pub row: usize,
    pub col: usize,
    pub value: Option<f64>,
}

/// Parses shard text. Entries must be strictly increasing in `(row, col)`
/// and either all carry a value column or none do.
pub fn parse_shard<R: BufRead>(reader: R) -> Result<Vec<ShardEntry>> {
    let mut entries: Vec<ShardEntry> = Vec::new();
    let mut valued: Option<bool> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx as u64 + 1;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let parse_index = |s: Option<&str>| -> Result<usize> {
            let s = s.ok_or_else(|| Error::parse(lineno, "expected row<TAB>col"))?;
            s.parse()
                .map_err(|e| Error::parse(lineno, format!("bad index {s:?}: {e}")))
        };
        let row = parse_index(fields.next())?;
        let col = parse_index(fields.next())?;
        let value = match fields.next() {
            None => None,
            Some(s) => {
                let v: f64 = s
                    .parse()
                    .map_err(|e| Error::parse(lineno, format!("bad value {s:?}: {e}")))?;
                if !v.is_finite() {
                    return Err(Error::parse(lineno, "non-finite value"));
                }
                Some(v)
            }
        };
        if fields.next().is_some() {
            return Err(Error::parse(lineno, "too many fields"));
        }
        if *valued.get_or_insert(value.is_some()) != value.is_some() {
            return Err(Error::parse(lineno, "inconsistent number of fields"));
        }
        if let Some(prev) = entries.last() {
            if (prev.row, prev.col) >= (row, col) {
                return Err(Error::parse(lineno, "entries not strictly sorted by (row, col)"));
            }
        }
        entries.push(ShardEntry { row, col, value });
    }
    Ok(entries)
}

/// Raw (decompressed) bytes of a shard file.
pub fn read_shard_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(file).read_to_end(&mut bytes)?;
    } else {
        BufReader::new(file).read_to_end(&mut bytes)?;
    }
    Ok(bytes)
}

/// Assembles the shards listed in `manifest` into one matrix of the
/// expanded shape, fetching each shard's text through `fetch`. Binary shards
/// load with unit values.
pub fn assemble_shards<F>(manifest: &ExpansionManifest, mut fetch: F) -> Result<SparseRealMatrix>
where
    F: FnMut(&str) -> Result<Vec<u8>>,
{
    let [n_rows, n_cols] = manifest.expanded_dims;
    let mut entries = Vec::with_capacity(manifest.total_nnz as usize);
    for shard in &manifest.shards {
        for e in parse_shard(fetch(&shard.file)?.as_slice())? {
            entries.push((e.row, e.col, e.value.unwrap_or(1.0)));
        }
    }
    SparseRealMatrix::from_entries(entries, n_rows, n_cols)
}

/// [`assemble_shards`] over files in `dir`.
pub fn load_expansion(dir: &Path, manifest: &ExpansionManifest) -> Result<SparseRealMatrix> {
    assemble_shards(manifest, |file| read_shard_bytes(&dir.join(file)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names() {
        assert_eq!(shard_name(ShardGranularity::PerBlock, 3, 12), "part-00003-00012.tsv");
        assert_eq!(shard_name(ShardGranularity::PerBlockRow, 7, 0), "part-00007.tsv");
    }

    #[test]
    fn parse_binary_and_valued() {
        let e = parse_shard("0\t3\n1\t0\n".as_bytes()).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(
            e[1],
            ShardEntry {
                row: 1,
                col: 0,
                value: None
            }
        );
        let e = parse_shard("0\t3\t2.5e0\n".as_bytes()).unwrap();
        assert_eq!(e[0].value, Some(2.5));
    }

    #[test]
    fn parse_rejects_disorder_and_mixing() {
        assert!(parse_shard("1\t0\n0\t3\n".as_bytes()).is_err());
        assert!(parse_shard("0\t0\n0\t0\n".as_bytes()).is_err());
        assert!(parse_shard("0\t0\n0\t1\t1.0\n".as_bytes()).is_err());
        assert!(parse_shard("0\t0\t1\t2\n".as_bytes()).is_err());
        assert!(parse_shard("0 0\n".as_bytes()).is_err());
        assert!(parse_shard("0\t0\tinf\n".as_bytes()).is_err());
    }

    #[test]
    fn gzip_sink_is_reproducible_and_readable() {
        let dir = tempfile::tempdir().unwrap();
        let a = DirectorySink::new(dir.path().join("a"), true).unwrap();
        let b = DirectorySink::new(dir.path().join("b"), true).unwrap();
        let content = b"0\t1\n2\t3\n";
        let name = a.write_shard("part-00000.tsv", content).unwrap();
        b.write_shard("part-00000.tsv", content).unwrap();
        assert_eq!(name, "part-00000.tsv.gz");
        let fa = std::fs::read(a.dir().join(&name)).unwrap();
        let fb = std::fs::read(b.dir().join(&name)).unwrap();
        assert_eq!(fa, fb);
        assert_eq!(read_shard_bytes(&a.dir().join(&name)).unwrap(), content);
    }
}
