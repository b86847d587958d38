use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::TaskError;

pub const PAD: u32 = 0;
pub const MASK: u32 = 1;
pub const CLS: u32 = 2;
pub const UNK: u32 = 3;
pub const N_RESERVED: usize = 4;

const RESERVED: [&str; N_RESERVED] = ["[PAD]", "[MASK]", "[CLS]", "[UNK]"];

/// Token ↔ id bijection with fixed reserved ids `PAD=0, MASK=1, CLS=2, UNK=3`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Reserved tokens followed by `content` in the given order (duplicates dropped).
    pub fn from_tokens<I, S>(content: I) -> Result<Self, TaskError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut seen: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        for t in content {
            let t = t.into();
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(TaskError::Config(format!("invalid token {t:?}")));
            }
            if !seen.contains_key(&t) {
                seen.insert(t.clone(), tokens.len() as u32);
                tokens.push(t);
            }
        }
        Ok(Self { tokens, index: seen })
    }

    /// Vocabulary from whitespace-tokenized training documents, keeping tokens
    /// seen at least `min_freq` times. Ordered by descending frequency, then
    /// lexicographically.
    pub fn build<'a, I>(docs: I, min_freq: usize) -> Result<Self, TaskError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in docs {
            for tok in doc.split_whitespace() {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq.max(1) && !RESERVED.contains(t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or(RESERVED[UNK as usize])
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < N_RESERVED
    }

    /// `[CLS]` followed by the ids of `words`, truncated to `max_len` total.
    pub fn encode<'a>(&self, words: impl IntoIterator<Item = &'a str>, max_len: usize) -> Vec<u32> {
        std::iter::once(CLS)
            .chain(words.into_iter().map(|w| self.id(w)))
            .take(max_len)
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i)).collect()
    }
}
