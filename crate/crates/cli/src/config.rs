use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tcprobe::classifier::{FilterMethod, Profile};

use crate::InputError;

/// Contents of the `--config` TOML file. Every field is optional; command
/// line flags win over it, and it wins over built-in defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub backend: Option<String>,
    /// Characters that start a new word.
    pub boundary_chars: Option<String>,
    pub top_k: Option<usize>,
    pub timeout_secs: Option<u64>,
    pub max_retries: Option<u32>,
    pub gen: GenSection,
    pub classify: ClassifySection,
    pub augment: AugmentSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSection {
    pub n: Option<usize>,
    pub replacements: Option<usize>,
    pub answers_per: Option<usize>,
    pub pool: Option<PathBuf>,
    pub heads: Option<(i64, i64)>,
    pub legs: Option<(i64, i64)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifySection {
    pub profile: Option<Profile>,
    pub threshold: Option<f64>,
    pub filter_tokens: Option<Vec<String>>,
    pub filter_method: Option<FilterMethod>,
    pub redistribute_min_p: Option<f64>,
    pub max_content_tokens: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub k: Option<usize>,
    pub p_replace: Option<f64>,
    pub synonyms: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| InputError(format!("cannot read config {}: {e}", path.display())))?;
        Ok(toml::from_str(&text)
            .map_err(|e| InputError(format!("bad config {}: {e}", path.display())))?)
    }
}

/// `flag`, else `file`, else `default`.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
