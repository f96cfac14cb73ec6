//! Provenance record written next to every artifact set.
//!
//! A manifest holds no timestamps or host details, so identical inputs give
//! identical manifests.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io::{read_json, write_json, IoError};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Formats {
    pub corpus: u32,
    pub checkpoint: u32,
    pub matrix: u32,
    pub metrics: u32,
    pub report: u32,
}

impl Default for Formats {
    fn default() -> Self {
        Formats { corpus: 1, checkpoint: crate::checkpoint::VERSION, matrix: 1, metrics: 1, report: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Status {
    Running,
    Complete,
    Failed { stage: String, error: String },
}

/// One command's contribution to an output directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub artifacts: Vec<String>,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub formats: Formats,
    /// Keyed by command name; a rerun replaces its own entry only.
    pub commands: BTreeMap<String, Entry>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest { tool: env!("CARGO_PKG_NAME").to_string(), version: env!("CARGO_PKG_VERSION").to_string(), formats: Formats::default(), commands: BTreeMap::new() }
    }
}

impl Manifest {
    /// The manifest in `dir`, or a fresh one when there is none.
    pub fn open(dir: &Path) -> Result<Self, IoError> {
        let path = dir.join(FILE_NAME);
        if path.exists() {
            read_json(&path)
        } else {
            Ok(Manifest::default())
        }
    }

    /// Records `entry` under `command` and rewrites the file.
    pub fn record(dir: &Path, command: &str, entry: Entry) -> Result<(), IoError> {
        let mut m = Self::open(dir)?;
        m.tool = env!("CARGO_PKG_NAME").to_string();
        m.version = env!("CARGO_PKG_VERSION").to_string();
        m.commands.insert(command.to_string(), entry);
        write_json(&dir.join(FILE_NAME), &m)
    }
}
