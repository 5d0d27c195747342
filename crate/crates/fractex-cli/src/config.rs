use std::path::{Path, PathBuf};

use serde::Deserialize;

/// Keys accepted in a `--config` TOML file. Every key mirrors a flag of the
/// same name; flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub reduced: Option<PathBuf>,
    pub expanded: Option<PathBuf>,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub seed: Option<u64>,
    pub mode: Option<String>,
    pub shuffle: Option<bool>,
    pub rescale: Option<String>,
    pub granularity: Option<String>,
    pub workers: Option<usize>,
    pub gzip: Option<bool>,
    pub power_iters: Option<usize>,
    pub oversample: Option<usize>,
    pub subset_stride: Option<usize>,
    pub top_k: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
}

impl FileConfig {
    /// Loads `path`, resolving relative paths inside it against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg: FileConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_owned(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.input,
            &mut cfg.out,
            &mut cfg.test,
            &mut cfg.reduced,
            &mut cfg.expanded,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Flag value, else config value.
pub fn pick<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

/// Absolute form of `p` without touching the file system.
pub fn resolve(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_owned())
}
