use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const BOS_ID: usize = 2;
pub const EOS_ID: usize = 3;

/// Lowercases and splits on whitespace; every other non-alphanumeric
/// character becomes its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// Token inventory with reserved ids for padding, unknown, start and end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds from token streams; ordered by descending count, then lexically.
    pub fn build<'a, I>(texts: I) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for text in texts {
            for t in text {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ordered: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, _)| ![PAD, UNK, BOS, EOS].contains(t))
            .collect();
        ordered.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = [PAD, UNK, BOS, EOS]
            .into_iter()
            .chain(ordered.into_iter().map(|(t, _)| t))
            .map(str::to_string)
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    /// Restores the lookup table after deserialisation.
    pub fn reindex(mut self) -> Self {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(UNK)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_lowercases_and_splits_punctuation() {
        assert_eq!(
            tokenize("Book Golden Palace, for 2?"),
            vec!["book", "golden", "palace", ",", "for", "2", "?"]
        );
        assert_eq!(tokenize("17:15"), vec!["17", ":", "15"]);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn vocab_reserves_specials_and_falls_back_to_unk() {
        let a = tokenize("b a a");
        let v = Vocab::build([a.as_slice()]);
        assert_eq!(v.token(PAD_ID), PAD);
        assert_eq!(v.token(EOS_ID), EOS);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
        assert_eq!(v.id("zzz"), UNK_ID);
        let restored: Vocab = serde_json::from_str::<Vocab>(&serde_json::to_string(&v).unwrap())
            .unwrap()
            .reindex();
        assert_eq!(restored, v);
    }
}
