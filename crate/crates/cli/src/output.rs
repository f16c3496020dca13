use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{CmdResult, Failure, Loaded};

/// Everything needed to run a command again.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub config_source: String,
    pub overrides: Vec<String>,
    /// SHA-256 of the effective config (after overrides), as written to `config.toml`.
    pub config_sha256: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<String>,
    /// Equivalent invocation using the saved effective config.
    pub rerun: String,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects output files for one command and writes them atomically.
pub struct OutDir {
    dir: PathBuf,
    command: String,
    started: f64,
    config_toml: String,
    files: Vec<String>,
}

impl OutDir {
    pub fn create(dir: &Path, command: &str, loaded: &Loaded) -> CmdResult<Self> {
        fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("cannot create {}: {e}", dir.display())))?;
        let config_toml = loaded.config.to_toml()?;
        let mut out = Self { dir: dir.to_path_buf(), command: command.into(), started: now(), config_toml, files: Vec::new() };
        let text = out.config_toml.clone();
        out.write("config.toml", text.as_bytes())?;
        Ok(out)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes through a temporary file and a rename.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CmdResult {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, bytes)
            .and_then(|_| fs::rename(&tmp, &target))
            .map_err(|e| Failure::Config(format!("cannot write {}: {e}", target.display())))?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CmdResult {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::Numeric(e.to_string()))?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    /// Writes `manifest.json`; `extra` are the command-specific flags for the rerun line.
    pub fn finish(mut self, loaded: &Loaded, extra: &[String]) -> CmdResult {
        let mut rerun = format!("ghp {} --config {} --out {}", self.command, self.path("config.toml").display(), self.dir.display());
        for e in extra {
            rerun.push(' ');
            rerun.push_str(e);
        }
        let manifest = RunManifest {
            tool: "ghp",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command.clone(),
            args: std::env::args().skip(1).collect(),
            config_source: loaded.source.clone(),
            overrides: loaded.overrides.clone(),
            config_sha256: sha256_hex(self.config_toml.as_bytes()),
            started_unix: self.started,
            finished_unix: now(),
            outputs: self.files.clone(),
            rerun,
        };
        self.write_json("manifest.json", &manifest)
    }
}
