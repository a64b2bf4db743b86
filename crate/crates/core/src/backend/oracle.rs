use super::{Backend, BackendError, BackendInfo};
use crate::oracle::Oracle;
use crate::types::{Distribution, TokenRef};

/// The grammar oracle behind the [`Backend`] interface.
#[derive(Debug)]
pub struct OracleBackend {
    oracle: Oracle,
    top_k: usize,
}

impl OracleBackend {
    pub fn new(oracle: Oracle, top_k: usize) -> Self {
        Self { oracle, top_k }
    }

    pub fn oracle(&self) -> &Oracle {
        &self.oracle
    }
}

impl Backend for OracleBackend {
    fn info(&self) -> Result<BackendInfo, BackendError> {
        Ok(BackendInfo {
            vocab_size: self.oracle.vocab().size(),
            model_name: format!("oracle:{}", self.oracle.grammar().name),
            max_context: 4096,
        })
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenRef>, BackendError> {
        if text.is_empty() {
            return Err(BackendError::EmptyText);
        }
        Ok(self.oracle.tokenize(text)?)
    }

    fn next_distribution(&self, prefix: &[TokenRef]) -> Result<Distribution, BackendError> {
        if prefix.is_empty() {
            return Err(BackendError::EmptyPrefix);
        }
        Ok(self.oracle.next(prefix)?.truncate_top_k(self.top_k))
    }

    fn eos_token(&self) -> Option<TokenRef> {
        Some(self.oracle.eos())
    }

    fn token_text(&self, id: u32) -> Option<String> {
        self.oracle.vocab().text_of(id)
    }
}
