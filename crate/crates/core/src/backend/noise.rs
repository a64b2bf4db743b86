use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendInfo};
use crate::oracle::{fnv1a64, EOS_ID, EOS_TEXT};
use crate::types::{Distribution, TokenProb, TokenRef};
use crate::wordseg::{split_words, BoundaryRule};

const NOISE_VOCAB: usize = 50_257;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Output depends only on the prefix length.
    Position,
    /// Output depends on the token ids of the full prefix.
    Prefix,
}

/// Uniform distributions over `top_k` pseudo-random token ids.
#[derive(Clone, Debug)]
pub struct NoiseBackend {
    seed: u64,
    mode: NoiseMode,
    top_k: usize,
    rule: BoundaryRule,
}

impl NoiseBackend {
    pub fn new(seed: u64, mode: NoiseMode, top_k: usize) -> Self {
        Self {
            seed,
            mode,
            top_k: top_k.clamp(1, NOISE_VOCAB - 1),
            rule: BoundaryRule::default(),
        }
    }
}

fn noise_text(id: u32) -> String {
    format!(" tok{id}")
}

impl Backend for NoiseBackend {
    fn info(&self) -> Result<BackendInfo, BackendError> {
        Ok(BackendInfo {
            vocab_size: NOISE_VOCAB,
            model_name: "noise".into(),
            max_context: 4096,
        })
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenRef>, BackendError> {
        if text.is_empty() {
            return Err(BackendError::EmptyText);
        }
        Ok(split_words(text, &self.rule)
            .into_iter()
            .map(|w| TokenRef::new(1 + (fnv1a64(w) % (NOISE_VOCAB as u64 - 1)) as u32, w))
            .collect())
    }

    fn next_distribution(&self, prefix: &[TokenRef]) -> Result<Distribution, BackendError> {
        if prefix.is_empty() {
            return Err(BackendError::EmptyPrefix);
        }
        let stream = match self.mode {
            NoiseMode::Position => prefix.len() as u64,
            NoiseMode::Prefix => {
                let joined: String = prefix.iter().map(|t| format!("{}|", t.id)).collect();
                fnv1a64(&joined)
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let p = 1.0 / self.top_k as f64;
        let mut ids: Vec<u32> = rand::seq::index::sample(&mut rng, NOISE_VOCAB - 1, self.top_k)
            .into_iter()
            .map(|i| i as u32 + 1)
            .collect();
        ids.sort_unstable();
        let support = ids
            .into_iter()
            .map(|id| TokenProb {
                id,
                text: noise_text(id),
                p,
            })
            .collect();
        let mut d = Distribution::new(support, 0.0)?;
        d.sort_desc();
        Ok(d)
    }

    fn eos_token(&self) -> Option<TokenRef> {
        Some(TokenRef::new(EOS_ID, EOS_TEXT))
    }

    fn token_text(&self, id: u32) -> Option<String> {
        match id {
            EOS_ID => Some(EOS_TEXT.into()),
            i if (i as usize) < NOISE_VOCAB => Some(noise_text(i)),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_queries_agree() {
        let b = NoiseBackend::new(3, NoiseMode::Prefix, 50);
        let p = b.tokenize("a b c").unwrap();
        let d1 = b.next_distribution(&p).unwrap();
        assert_eq!(d1, b.next_distribution(&p).unwrap());
        assert_eq!(d1.support.len(), 50);
        assert!((d1.total_mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn position_mode_ignores_content() {
        let b = NoiseBackend::new(3, NoiseMode::Position, 10);
        let x = b.next_distribution(&b.tokenize("a b c").unwrap()).unwrap();
        let y = b.next_distribution(&b.tokenize("x y z").unwrap()).unwrap();
        assert_eq!(x, y);
        let z = b.next_distribution(&b.tokenize("x y").unwrap()).unwrap();
        assert_ne!(x, z);
    }

    #[test]
    fn prefix_mode_depends_on_content() {
        let b = NoiseBackend::new(3, NoiseMode::Prefix, 10);
        let x = b.next_distribution(&b.tokenize("a b c").unwrap()).unwrap();
        let y = b.next_distribution(&b.tokenize("x y z").unwrap()).unwrap();
        assert_ne!(x, y);
    }
}
