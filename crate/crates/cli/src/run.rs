use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::InputError;

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    library_version: &'a str,
    config: serde_json::Value,
    inputs: &'a BTreeMap<String, String>,
    outputs: &'a [String],
}

/// Output directory of one command, collecting what goes into its manifest.
pub struct Run {
    dir: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Run {
    pub fn create(dir: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_owned(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    /// Reads an input file and records its digest.
    pub fn read_input(&mut self, path: &Path) -> anyhow::Result<Vec<u8>> {
        let bytes = std::fs::read(path)
            .map_err(|e| InputError(format!("cannot read {}: {e}", path.display())))?;
        self.inputs
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn read_input_text(&mut self, path: &Path) -> anyhow::Result<String> {
        let bytes = self.read_input(path)?;
        Ok(String::from_utf8(bytes)
            .map_err(|_| InputError(format!("{} is not UTF-8", path.display())))?)
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents)
            .with_context(|| format!("cannot write {}", path.display()))?;
        self.outputs.push(name.to_owned());
        Ok(path)
    }

    pub fn write_jsonl<T: Serialize>(
        &mut self,
        name: &str,
        items: &[T],
    ) -> anyhow::Result<PathBuf> {
        let mut text = String::new();
        for item in items {
            text.push_str(&serde_json::to_string(item)?);
            text.push('\n');
        }
        self.write(name, text.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn finish<C: Serialize>(self, command: &str, config: &C) -> anyhow::Result<()> {
        let manifest = Manifest {
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            library_version: tcprobe::VERSION,
            config: serde_json::to_value(config)?,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
    }
}
