//! Dialogue data model, synthetic corpus generation, target-domain
//! splitting, few-shot sampling and knowledge-base entity matching.

mod entities;
mod generate;
mod io;
mod split;
mod text;

use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use entities::{extract_entities, EntityMatcher};
pub use generate::{generate_corpus, CorpusSpec, DomainDef, Exchange, SlotDef};
pub use io::{read_corpus, read_kb, write_corpus, write_corpus_string, write_kb};
pub use split::{fewshot_count, sample_fewshot, split_for_target, SplitFractions, TargetSplit, DEFAULT_FEWSHOT_SEED};
pub use text::{detokenize, tokenize, Vocab, BOS, BOS_ID, EOS, EOS_ID, PAD, PAD_ID, UNK, UNK_ID};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error("invalid dialogue `{id}`: {reason}")]
    InvalidDialogue { id: String, reason: String },
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("only {remaining} source domain(s) remain after excluding `{target}`; need at least 2")]
    TooFewSourceDomains { target: String, remaining: usize },
    #[error("few-shot fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("few-shot pool is empty")]
    EmptyPool,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Usr,
    Sys,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Entity {
    pub slot: String,
    pub value: String,
}

impl Entity {
    pub fn new(slot: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            slot: slot.into(),
            value: value.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub domain: String,
    pub text: String,
    #[serde(default)]
    pub entities: Vec<Entity>,
}

impl Turn {
    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.text)
    }

    pub fn entity_set(&self) -> BTreeSet<Entity> {
        self.entities.iter().cloned().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub domains: Vec<String>,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    pub fn has_domain(&self, domain: &str) -> bool {
        self.domains.iter().any(|d| d == domain)
    }

    /// Checks alternation, pairing, domain union and verbatim entities.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |reason: String| CorpusError::InvalidDialogue {
            id: self.dialogue_id.clone(),
            reason,
        };
        if self.turns.is_empty() {
            return Err(fail("no turns".into()));
        }
        if self.turns.len() % 2 != 0 {
            return Err(fail(format!("odd number of turns ({})", self.turns.len())));
        }
        for (i, t) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Speaker::Usr } else { Speaker::Sys };
            if t.speaker != expected {
                return Err(fail(format!("turn {i} should be {expected:?}")));
            }
            let tokens = t.tokens();
            for e in &t.entities {
                let value = tokenize(&e.value);
                if value.is_empty() || !tokens.windows(value.len()).any(|w| w == value.as_slice()) {
                    return Err(fail(format!("turn {i}: entity `{}` not in text", e.value)));
                }
            }
        }
        let declared: BTreeSet<&str> = self.domains.iter().map(String::as_str).collect();
        let used: BTreeSet<&str> = self.turns.iter().map(|t| t.domain.as_str()).collect();
        if declared.is_empty() || declared != used {
            return Err(fail(format!("domains {declared:?} differ from turn domains {used:?}")));
        }
        Ok(())
    }

    /// Number of system turns.
    pub fn sys_turns(&self) -> usize {
        self.turns.iter().filter(|t| t.speaker == Speaker::Sys).count()
    }
}

/// Per-domain entity tables (`slot -> value`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KnowledgeBase {
    pub domains: IndexMap<String, Vec<IndexMap<String, String>>>,
}

impl KnowledgeBase {
    pub fn domain(&self, name: &str) -> Option<&[IndexMap<String, String>]> {
        self.domains.get(name).map(Vec::as_slice)
    }

    pub fn domain_names(&self) -> impl Iterator<Item = &str> {
        self.domains.keys().map(String::as_str)
    }

    /// Every `(slot, value)` pair of a domain, first occurrence order.
    pub fn entities(&self, domain: &str) -> Vec<Entity> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for row in self.domain(domain).unwrap_or(&[]) {
            for (slot, value) in row {
                let e = Entity::new(slot, value);
                if seen.insert(e.clone()) {
                    out.push(e);
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        for (name, rows) in &self.domains {
            let Some(first) = rows.first() else { continue };
            let slots: Vec<&String> = first.keys().collect();
            for row in rows {
                if row.keys().collect::<Vec<_>>() != slots {
                    return Err(CorpusError::InvalidSpec(format!("domain `{name}` has inconsistent slots")));
                }
                if row.values().any(|v| v.trim().is_empty()) {
                    return Err(CorpusError::InvalidSpec(format!("domain `{name}` has an empty value")));
                }
            }
        }
        Ok(())
    }
}

/// Ordered dialogue collection.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
}

impl Corpus {
    pub fn new(dialogues: Vec<Dialogue>) -> Self {
        Self { dialogues }
    }

    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    /// Distinct domains in first-appearance order.
    pub fn domains(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for d in &self.dialogues {
            for name in &d.domains {
                if !out.contains(name) {
                    out.push(name.clone());
                }
            }
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = &Dialogue> {
        self.dialogues.iter()
    }
}

/// Vocabulary over every turn of `dialogues`.
pub fn build_vocab<'a>(dialogues: impl IntoIterator<Item = &'a Dialogue>) -> Vocab {
    let tokenized: Vec<Vec<String>> = dialogues
        .into_iter()
        .flat_map(|d| d.turns.iter().map(Turn::tokens))
        .collect();
    Vocab::build(tokenized.iter().map(Vec::as_slice))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(speaker: Speaker, text: &str, entities: Vec<Entity>) -> Turn {
        Turn {
            speaker,
            domain: "restaurant".into(),
            text: text.into(),
            entities,
        }
    }

    #[test]
    fn validation_catches_broken_dialogues() {
        let good = Dialogue {
            dialogue_id: "d1".into(),
            domains: vec!["restaurant".into()],
            turns: vec![
                turn(Speaker::Usr, "find food", vec![]),
                turn(Speaker::Sys, "Golden Palace is nice", vec![Entity::new("name", "golden palace")]),
            ],
        };
        good.validate().unwrap();

        let mut odd = good.clone();
        odd.turns.pop();
        assert!(odd.validate().is_err());

        let mut swapped = good.clone();
        swapped.turns.swap(0, 1);
        assert!(swapped.validate().is_err());

        let mut missing = good.clone();
        missing.turns[1].entities = vec![Entity::new("name", "curry garden")];
        assert!(missing.validate().is_err());

        let mut partial = good.clone();
        partial.turns[1].text = "goldenpalace".into();
        partial.turns[1].entities = vec![Entity::new("name", "palace")];
        assert!(partial.validate().is_err());

        let mut wrong_domains = good;
        wrong_domains.domains.push("hotel".into());
        assert!(wrong_domains.validate().is_err());
    }
}
