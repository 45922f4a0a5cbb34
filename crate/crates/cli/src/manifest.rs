//! Provenance record written alongside every run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Config snapshot, input digests, seed, artifacts and tool version.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub seed: Option<u64>,
    pub config: Vec<(String, String)>,
    /// `(path, sha256 hex)` of every file read.
    pub inputs: Vec<(PathBuf, String)>,
    pub artifacts: Vec<PathBuf>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub(crate) fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|source| CliError::File {
        path: path.display().to_string(),
        source,
    })
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            ..Self::default()
        }
    }

    pub fn with_config(mut self, cfg: &RunConfig) -> Self {
        self.seed = Some(cfg.training.seed);
        self.config = cfg
            .to_text()
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        self
    }

    /// Hashes `path` and records it; returns the bytes read.
    pub fn read_input(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = read_bytes(path)?;
        self.inputs.push((path.to_path_buf(), sha256_hex(&bytes)));
        Ok(bytes)
    }

    pub fn read_input_text(&mut self, path: &Path) -> CliResult<String> {
        let bytes = self.read_input(path)?;
        String::from_utf8(bytes).map_err(|e| CliError::File {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })
    }

    pub fn artifact(&mut self, path: impl Into<PathBuf>) {
        self.artifacts.push(path.into());
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "tool: segcvae {TOOL_VERSION}");
        let _ = writeln!(s, "command: {}", self.command);
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed: {seed}");
        }
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k}: {v}");
        }
        for (p, digest) in &self.inputs {
            let _ = writeln!(s, "input {} sha256:{digest}", p.display());
        }
        for p in &self.artifacts {
            let _ = writeln!(s, "artifact {}", p.display());
        }
        s
    }

    /// Writes to `path`, or to stderr when there is none.
    pub fn write(&self, path: Option<&Path>) -> CliResult<()> {
        match path {
            Some(p) => std::fs::write(p, self.to_text()).map_err(|source| CliError::File {
                path: p.display().to_string(),
                source,
            }),
            None => {
                eprint!("{}", self.to_text());
                Ok(())
            }
        }
    }
}
