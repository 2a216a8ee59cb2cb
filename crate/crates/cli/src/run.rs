// SPDX-License-Identifier: MIT OR Apache-2.0

//! Output bookkeeping for one command: atomic writes, the run manifest and
//! `.partial` renaming when the command fails.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::formats::Bundle;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub status: String,
    pub config_hash: String,
    pub artifacts: Vec<String>,
    pub wall_clock_secs: f64,
    pub version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct Run {
    pub root: PathBuf,
    pub command: String,
    pub config: RunConfig,
    written: Vec<PathBuf>,
    started: Instant,
}

/// Write to a sibling temp file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(CliError::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(CliError::io(path))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

impl Run {
    pub fn new(root: PathBuf, command: &str, config: RunConfig) -> Self {
        Self {
            root,
            command: command.to_string(),
            config,
            written: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.path(rel);
        // a stale marker from an earlier failure no longer applies
        let _ = std::fs::remove_file(with_suffix(&path, ".partial"));
        write_atomic(&path, bytes)?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn write_bundle(&mut self, dir: &str, bundle: &Bundle) -> CliResult<()> {
        for (name, bytes) in &bundle.files {
            self.write(&format!("{dir}/{name}"), bytes)?;
        }
        Ok(())
    }

    fn manifest_rel(&self) -> String {
        format!("manifests/{}.json", self.command.replace(' ', "-"))
    }

    fn manifest(&self, status: &str, error: Option<String>) -> RunManifest {
        RunManifest {
            command: self.command.clone(),
            status: status.to_string(),
            config_hash: self.config.hash(),
            artifacts: self
                .written
                .iter()
                .map(|p| {
                    p.strip_prefix(&self.root)
                        .unwrap_or(p)
                        .display()
                        .to_string()
                })
                .collect(),
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            error,
        }
    }

    fn echo_config(&mut self) -> CliResult<()> {
        let rel = format!("config/{}.cfg", self.command.replace(' ', "-"));
        let text = self.config.render();
        self.write(&rel, text.as_bytes())?;
        Ok(())
    }

    /// Echo the config and write the manifest; call once all artifacts exist.
    pub fn finish(mut self) -> CliResult<RunManifest> {
        self.echo_config()?;
        let m = self.manifest("ok", None);
        let json = serde_json::to_vec_pretty(&m).expect("manifest serializes");
        write_atomic(&self.path(&self.manifest_rel()), &json)?;
        Ok(m)
    }

    /// Rename everything written so far to `*.partial` and record the failure.
    pub fn fail(self, err: &CliError) -> RunManifest {
        for p in &self.written {
            let _ = std::fs::rename(p, with_suffix(p, ".partial"));
        }
        let mut m = self.manifest("failed", Some(err.to_string()));
        m.artifacts = m.artifacts.iter().map(|a| format!("{a}.partial")).collect();
        let json = serde_json::to_vec_pretty(&m).expect("manifest serializes");
        let path = with_suffix(&self.path(&self.manifest_rel()), ".partial");
        let _ = write_atomic(&path, &json);
        m
    }
}
