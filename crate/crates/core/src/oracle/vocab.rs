//! Token vocabulary of the oracle.
//!
//! Words the grammar can name up front (fixed words, distractors, values of
//! small role domains) get dense ids in sorted order. Anything else, such as
//! a computed concatenation, gets a stable hashed id above the dense range.
//! Every id handed out is remembered so it can be mapped back to its text.

use std::collections::{BTreeSet, HashMap};
use std::sync::Mutex;

pub fn fnv1a64(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[derive(Debug)]
pub struct Vocab {
    dense: HashMap<String, u32>,
    texts: Vec<String>,
    dynamic: Mutex<HashMap<u32, String>>,
}

impl Vocab {
    /// `reserved` are placed first, in order; `words` follow sorted.
    pub fn new(reserved: &[&str], words: BTreeSet<String>) -> Self {
        let mut texts: Vec<String> = reserved.iter().map(|s| s.to_string()).collect();
        for w in words {
            if !reserved.contains(&w.as_str()) {
                texts.push(w);
            }
        }
        let dense = texts
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            dense,
            texts,
            dynamic: Mutex::new(HashMap::new()),
        }
    }

    /// Number of densely numbered tokens.
    pub fn size(&self) -> usize {
        self.texts.len()
    }

    pub fn id_of(&self, text: &str) -> u32 {
        if let Some(&id) = self.dense.get(text) {
            return id;
        }
        let base = self.texts.len() as u64;
        let id = (base + fnv1a64(text) % (u64::from(u32::MAX) - base)) as u32;
        self.dynamic
            .lock()
            .expect("vocab lock poisoned")
            .entry(id)
            .or_insert_with(|| text.to_owned());
        id
    }

    pub fn text_of(&self, id: u32) -> Option<String> {
        if let Some(t) = self.texts.get(id as usize) {
            return Some(t.clone());
        }
        self.dynamic
            .lock()
            .expect("vocab lock poisoned")
            .get(&id)
            .cloned()
    }
}
