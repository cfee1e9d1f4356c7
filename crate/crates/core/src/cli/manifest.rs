//! The `manifest.txt` written into every output directory.
//!
//! A manifest is a `key=value` file. It records the command, every resolved
//! parameter under its flag name, SHA-256 hashes of input files, the tool
//! version and a status. Because parameters use flag names, a manifest can be
//! passed back through `--config` to rerun the command.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::eigen::hex;
use crate::error::{Error, Result};
use crate::io::write_string;

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Keys that describe a run rather than configure it.
const METADATA_KEYS: &[&str] = &["version", "status"];
const INPUT_PREFIX: &str = "input.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunManifest {
    pub command: String,
    pub params: Vec<(String, String)>,
    /// `(name, sha256 hex)` for each input file.
    pub inputs: Vec<(String, String)>,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, params: Vec<(String, String)>) -> Self {
        Self { command: command.into(), params, inputs: Vec::new(), version: env!("CARGO_PKG_VERSION").into() }
    }

    pub fn add_input(&mut self, name: &str, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push((name.into(), hex(&Sha256::digest(&bytes))));
        Ok(())
    }

    pub fn render(&self, complete: bool) -> String {
        let mut out = format!("command={}\n", self.command);
        for (k, v) in &self.params {
            out.push_str(&format!("{k}={v}\n"));
        }
        for (name, hash) in &self.inputs {
            out.push_str(&format!("{INPUT_PREFIX}{name}.sha256={hash}\n"));
        }
        out.push_str(&format!("version={}\n", self.version));
        out.push_str(&format!("status={}\n", if complete { "complete" } else { "incomplete" }));
        out
    }

    pub fn write(&self, dir: &Path, complete: bool) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        write_string(&path, &self.render(complete))?;
        Ok(path)
    }
}

/// A `key=value` config file: the subcommand, if named, and flag defaults.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile {
    pub command: Option<String>,
    pub flags: Vec<(String, String)>,
}

impl ConfigFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|m| Error::parse(path, m))
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut config = ConfigFile::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "command" {
                config.command = Some(value.into());
            } else if !(METADATA_KEYS.contains(&key) || key.starts_with(INPUT_PREFIX)) {
                config.flags.push((key.into(), value.into()));
            }
        }
        Ok(config)
    }

    /// Flags as `--key=value`; boolean flags appear bare when `true` and are
    /// dropped when `false`.
    pub fn to_args(&self, boolean_flags: &[&str]) -> Vec<String> {
        self.flags
            .iter()
            .filter_map(|(k, v)| {
                if boolean_flags.contains(&k.as_str()) {
                    (v == "true").then(|| format!("--{k}"))
                } else {
                    Some(format!("--{k}={v}"))
                }
            })
            .collect()
    }
}
