use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder};
use serde::de::DeserializeOwned;

use super::wire::{
    BatchNextRequest, BatchNextResponse, ErrorBody, NextRequest, NextResponse, TokenizeRequest,
    TokenizeResponse,
};
use super::{Backend, BackendError, BackendInfo};
use crate::oracle::{EOS_ID, EOS_TEXT};
use crate::types::{Distribution, TokenRef};

const BACKOFF_BASE: Duration = Duration::from_millis(100);

/// Client for a server speaking the [`wire`](super::wire) protocol.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    base: String,
    top_k: usize,
    max_retries: u32,
    client: Client,
}

impl RemoteBackend {
    pub fn new(
        base_url: &str,
        top_k: usize,
        timeout: Duration,
        max_retries: u32,
    ) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Descriptor(e.to_string()))?;
        Ok(Self {
            base: base_url.trim_end_matches('/').to_owned(),
            top_k,
            max_retries,
            client,
        })
    }

    fn call<T: DeserializeOwned>(
        &self,
        build: impl Fn() -> RequestBuilder,
    ) -> Result<T, BackendError> {
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(BACKOFF_BASE * 2u32.pow(attempt - 1));
            }
            match build().send() {
                Ok(resp) if resp.status().is_success() => {
                    return resp
                        .json::<T>()
                        .map_err(|e| BackendError::Protocol(format!("bad response body: {e}")));
                }
                Ok(resp) if resp.status().is_client_error() => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    let message = serde_json::from_str::<ErrorBody>(&text)
                        .map(|b| format!("{}: {}", b.error.code, b.error.message))
                        .unwrap_or(text);
                    return Err(BackendError::Protocol(format!("{status}: {message}")));
                }
                Ok(resp) => last = format!("server returned {}", resp.status()),
                Err(e) => last = e.to_string(),
            }
            tracing::debug!(attempt, error = %last, "remote call failed");
        }
        Err(BackendError::Unavailable(format!(
            "{} after {} retries: {last}",
            self.base, self.max_retries
        )))
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }
}

impl Backend for RemoteBackend {
    fn info(&self) -> Result<BackendInfo, BackendError> {
        self.call(|| self.client.get(self.url("/v1/info")))
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenRef>, BackendError> {
        if text.is_empty() {
            return Err(BackendError::EmptyText);
        }
        let req = TokenizeRequest { text: text.into() };
        let resp: TokenizeResponse =
            self.call(|| self.client.post(self.url("/v1/tokenize")).json(&req))?;
        let joined: String = resp.tokens.iter().map(|t| t.text.as_str()).collect();
        if joined != text {
            return Err(BackendError::Protocol(
                "tokens do not reconstruct the text".into(),
            ));
        }
        Ok(resp.tokens)
    }

    fn next_distribution(&self, prefix: &[TokenRef]) -> Result<Distribution, BackendError> {
        if prefix.is_empty() {
            return Err(BackendError::EmptyPrefix);
        }
        let req = NextRequest {
            token_ids: prefix.iter().map(|t| t.id).collect(),
            top_k: self.top_k,
        };
        let resp: NextResponse = self.call(|| self.client.post(self.url("/v1/next")).json(&req))?;
        let d = resp.into_distribution()?;
        if d.support.len() > self.top_k {
            return Err(BackendError::Protocol("support larger than top_k".into()));
        }
        Ok(d)
    }

    fn batch_next(&self, prefixes: &[Vec<TokenRef>]) -> Result<Vec<Distribution>, BackendError> {
        if prefixes.is_empty() {
            return Err(BackendError::EmptyBatch);
        }
        if prefixes.iter().any(Vec::is_empty) {
            return Err(BackendError::EmptyPrefix);
        }
        let req = BatchNextRequest {
            prefixes: prefixes
                .iter()
                .map(|p| p.iter().map(|t| t.id).collect())
                .collect(),
            top_k: self.top_k,
        };
        let resp: BatchNextResponse =
            self.call(|| self.client.post(self.url("/v1/batch_next")).json(&req))?;
        if resp.results.len() != prefixes.len() {
            return Err(BackendError::Protocol(format!(
                "{} results for {} prefixes",
                resp.results.len(),
                prefixes.len()
            )));
        }
        resp.results
            .into_iter()
            .map(NextResponse::into_distribution)
            .collect()
    }

    /// The protocol carries no end-of-text marker; the conventional
    /// `<|endoftext|>` token is assumed.
    fn eos_token(&self) -> Option<TokenRef> {
        Some(TokenRef::new(EOS_ID, EOS_TEXT))
    }
}
