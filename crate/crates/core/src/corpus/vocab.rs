use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];
pub const UNK_TOKEN: &str = "<unk>";

/// Token/id bijection with the four reserved ids first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    ids: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..4].iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(Error::InvalidArgument("vocabulary must start with the reserved tokens".into()));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(UNK_TOKEN)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Content tokens, i.e. everything after the reserved ids.
    pub fn content(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// Hex SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

/// Keeps the `max_size - 4` most frequent tokens, ties broken
/// lexicographically.
pub fn build_vocab<'a, I>(sentences: I, max_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a [String]>,
{
    if max_size <= RESERVED.len() {
        return Err(Error::InvalidArgument(format!("max_size must exceed 4, got {max_size}")));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for sentence in sentences {
        for tok in sentence {
            if !RESERVED.contains(&tok.as_str()) {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().take(max_size - RESERVED.len()).map(|(t, _)| t.to_string()))
        .collect();
    Vocabulary::from_tokens(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(words: &str) -> Vec<String> {
        words.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn keeps_all_when_room() {
        let corpus = [s("a a b")];
        let v = build_vocab(corpus.iter().map(Vec::as_slice), 6).unwrap();
        assert_eq!(v.len(), 6);
        assert!(v.contains("a") && v.contains("b"));
        assert_eq!(&v.tokens()[..4], RESERVED.map(String::from).as_slice());
        assert_eq!(v.id("a"), 4);
    }

    #[test]
    fn ties_break_lexicographically() {
        let corpus = [s("y x")];
        let v = build_vocab(corpus.iter().map(Vec::as_slice), 5).unwrap();
        assert!(v.contains("x"));
        assert!(!v.contains("y"));
    }

    #[test]
    fn unknowns_encode_to_unk_and_decode_to_unk_token() {
        let corpus = [s("a b")];
        let v = build_vocab(corpus.iter().map(Vec::as_slice), 10).unwrap();
        let ids = v.encode(&s("a zzz b"));
        assert_eq!(ids, vec![4, UNK, 5]);
        assert_eq!(v.decode(&ids), s("a <unk> b"));
    }

    #[test]
    fn rejects_tiny_max_size() {
        assert!(build_vocab(std::iter::empty(), 4).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let corpus = [s("b a a c")];
        let v = build_vocab(corpus.iter().map(Vec::as_slice), 10).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("c"), v.id("c"));
    }
}
