use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reducer::RescaleMode;

use super::{ExpansionMode, ShardGranularity};

pub const MANIFEST_VERSION: u32 = 1;

/// Settings that shape the output, echoed into every manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub mode: ExpansionMode,
    pub shuffle: bool,
    pub shard_granularity: ShardGranularity,
    pub rescale_mode: RescaleMode,
    /// Grid entries clamped into `[0, 1]` before use as keep probabilities.
    pub clamped_rates: usize,
    /// Blocks generated, when only a subset of the grid was expanded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_subset: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub block_row: usize,
    pub block_col: usize,
    /// Keep probability (randomized) or Kronecker factor (deterministic).
    pub rate: f64,
    pub kept: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardRecord {
    /// File name relative to the output directory.
    pub file: String,
    pub blocks: Vec<[usize; 2]>,
    pub nnz: u64,
    /// SHA-256 of the uncompressed shard text.
    pub sha256: String,
}

/// Run metadata for one expanded matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionManifest {
    pub format_version: u32,
    /// `expanded`, or `train` / `test` for split runs.
    pub label: String,
    pub reduced_dims: [usize; 2],
    pub base_dims: [usize; 2],
    pub expanded_dims: [usize; 2],
    pub seed: u64,
    pub config: ConfigEcho,
    pub base_nnz: u64,
    /// `Σ rate · base_nnz` over generated blocks (randomized), or the exact
    /// count (deterministic).
    pub expected_nnz: f64,
    pub total_nnz: u64,
    pub blocks: Vec<BlockRecord>,
    pub shards: Vec<ShardRecord>,
    /// `false` when a shard write failed and the listing is partial.
    pub complete: bool,
    /// Resolved run configuration supplied by the caller (the CLI).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
}

impl ExpansionManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Parses and checks internal consistency.
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Malformed(format!("manifest: {msg}")));
        if self.format_version != MANIFEST_VERSION {
            return bad(format!("unsupported format_version {}", self.format_version));
        }
        let want = [
            self.reduced_dims[0].checked_mul(self.base_dims[0]),
            self.reduced_dims[1].checked_mul(self.base_dims[1]),
        ];
        if want != [Some(self.expanded_dims[0]), Some(self.expanded_dims[1])] {
            return bad(format!(
                "expanded_dims {:?} do not equal reduced_dims {:?} times base_dims {:?}",
                self.expanded_dims, self.reduced_dims, self.base_dims
            ));
        }
        let block_total = self.blocks.iter().try_fold(0u64, |acc, b| acc.checked_add(b.kept));
        if block_total != Some(self.total_nnz) {
            return bad(format!("total_nnz {} differs from the block counts", self.total_nnz));
        }
        for b in &self.blocks {
            if b.block_row >= self.reduced_dims[0] || b.block_col >= self.reduced_dims[1] {
                return bad(format!("block ({}, {}) outside the grid", b.block_row, b.block_col));
            }
        }
        if self.complete {
            let shard_total = self.shards.iter().try_fold(0u64, |acc, s| acc.checked_add(s.nnz));
            if shard_total != Some(self.total_nnz) {
                return bad("shard counts do not add up to total_nnz".into());
            }
        }
        for s in &self.shards {
            if s.file.contains('/') || s.file.contains('\\') || s.file.starts_with('.') {
                return bad(format!("shard file {:?} must be a plain file name", s.file));
            }
        }
        Ok(())
    }

    /// The record for block `(i, j)`, if it was generated.
    pub fn block(&self, i: usize, j: usize) -> Option<&BlockRecord> {
        self.blocks.iter().find(|b| b.block_row == i && b.block_col == j)
    }
}
