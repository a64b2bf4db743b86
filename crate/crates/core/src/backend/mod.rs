//! Next-token distribution providers.

mod noise;
mod oracle;
mod remote;
pub mod wire;

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use noise::{NoiseBackend, NoiseMode};
pub use oracle::OracleBackend;
pub use remote::RemoteBackend;

use crate::oracle::{builtin_grammar, Oracle, OracleConfig, OracleError, TaskGrammar};
use crate::types::{Distribution, DistributionError, TokenRef};

pub const DEFAULT_TOP_K: usize = 50;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("tokenize unsupported")]
    TokenizeUnsupported,
    #[error("empty prefix")]
    EmptyPrefix,
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty text")]
    EmptyText,
    #[error("unknown token id {0}")]
    UnknownToken(u32),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error("invalid backend descriptor: {0}")]
    Descriptor(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub vocab_size: usize,
    pub model_name: String,
    pub max_context: usize,
}

pub trait Backend: Send + Sync {
    fn info(&self) -> Result<BackendInfo, BackendError>;

    fn tokenize(&self, text: &str) -> Result<Vec<TokenRef>, BackendError>;

    /// At most `top_k` entries sorted by descending probability, with the
    /// rest of the mass in `other_mass`.
    fn next_distribution(&self, prefix: &[TokenRef]) -> Result<Distribution, BackendError>;

    /// Element `i` equals `next_distribution(&prefixes[i])`.
    fn batch_next(&self, prefixes: &[Vec<TokenRef>]) -> Result<Vec<Distribution>, BackendError> {
        if prefixes.is_empty() {
            return Err(BackendError::EmptyBatch);
        }
        prefixes.iter().map(|p| self.next_distribution(p)).collect()
    }

    fn eos_token(&self) -> Option<TokenRef>;

    /// Text of a token id, for servers that receive bare ids.
    fn token_text(&self, _id: u32) -> Option<String> {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// A built-in grammar name or a grammar file path.
    Oracle(String),
    Remote(String),
    Noise {
        seed: u64,
        mode: NoiseMode,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub top_k: usize,
    pub timeout: Duration,
    pub max_retries: u32,
}

impl BackendDescriptor {
    pub fn new(kind: BackendKind) -> Self {
        Self {
            kind,
            top_k: DEFAULT_TOP_K,
            timeout: Duration::from_secs(30),
            max_retries: 3,
        }
    }

    /// Parses `oracle:<grammar>`, `remote:<url>`, `noise:<seed>` or
    /// `noise-position:<seed>`.
    pub fn parse(spec: &str) -> Result<Self, BackendError> {
        let bad = || BackendError::Descriptor(format!("cannot parse {spec:?}"));
        let (kind, rest) = spec.split_once(':').ok_or_else(bad)?;
        let kind = match kind {
            "oracle" if !rest.is_empty() => BackendKind::Oracle(rest.to_owned()),
            "remote" if !rest.is_empty() => BackendKind::Remote(rest.to_owned()),
            "noise" => BackendKind::Noise {
                seed: rest.parse().map_err(|_| bad())?,
                mode: NoiseMode::Prefix,
            },
            "noise-position" => BackendKind::Noise {
                seed: rest.parse().map_err(|_| bad())?,
                mode: NoiseMode::Position,
            },
            _ => return Err(bad()),
        };
        Ok(Self::new(kind))
    }

    pub fn connect(&self) -> Result<Arc<dyn Backend>, BackendError> {
        if self.top_k == 0 {
            return Err(BackendError::Descriptor("top_k must be at least 1".into()));
        }
        Ok(match &self.kind {
            BackendKind::Oracle(name) => {
                let grammar = load_grammar(name)?;
                Arc::new(OracleBackend::new(
                    Oracle::new(grammar, OracleConfig::default())?,
                    self.top_k,
                ))
            }
            BackendKind::Remote(url) => Arc::new(RemoteBackend::new(
                url,
                self.top_k,
                self.timeout,
                self.max_retries,
            )?),
            BackendKind::Noise { seed, mode } => {
                Arc::new(NoiseBackend::new(*seed, *mode, self.top_k))
            }
        })
    }
}

/// A built-in grammar by name, otherwise a grammar file.
pub fn load_grammar(name_or_path: &str) -> Result<TaskGrammar, BackendError> {
    match builtin_grammar(name_or_path) {
        Ok(g) => Ok(g),
        Err(_) if Path::new(name_or_path).exists() => {
            Ok(TaskGrammar::from_file(Path::new(name_or_path)).map_err(OracleError::from)?)
        }
        Err(e) => Err(OracleError::from(e).into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_parsing() {
        let d = BackendDescriptor::parse("oracle:concat-last-letter").unwrap();
        assert_eq!(d.kind, BackendKind::Oracle("concat-last-letter".into()));
        assert_eq!(d.top_k, 50);
        let d = BackendDescriptor::parse("noise-position:7").unwrap();
        assert_eq!(
            d.kind,
            BackendKind::Noise {
                seed: 7,
                mode: NoiseMode::Position
            }
        );
        assert!(BackendDescriptor::parse("noise:x").is_err());
        assert!(BackendDescriptor::parse("magic:1").is_err());
        assert!(BackendDescriptor::parse("oracle:").is_err());
    }

    #[test]
    fn zero_top_k_is_rejected() {
        let mut d = BackendDescriptor::parse("noise:1").unwrap();
        d.top_k = 0;
        assert!(d.connect().is_err());
    }
}
