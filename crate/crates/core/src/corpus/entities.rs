use std::collections::BTreeSet;

use super::{tokenize, Entity, KnowledgeBase};

/// Surface matcher for one domain's knowledge-base values.
#[derive(Clone, Debug)]
pub struct EntityMatcher {
    // longest value first; equal lengths keep knowledge-base order
    patterns: Vec<(Vec<String>, Entity)>,
}

impl EntityMatcher {
    pub fn new(kb: &KnowledgeBase, domain: &str) -> Self {
        let mut patterns: Vec<(Vec<String>, Entity)> = kb
            .entities(domain)
            .into_iter()
            .map(|e| (tokenize(&e.value), e))
            .filter(|(t, _)| !t.is_empty())
            .collect();
        // a value listed under two slots matches the first slot only
        let mut seen = BTreeSet::new();
        patterns.retain(|(t, _)| seen.insert(t.clone()));
        patterns.sort_by(|a, b| b.0.len().cmp(&a.0.len()));
        Self { patterns }
    }

    /// Left-to-right scan taking the longest value at each position.
    pub fn extract(&self, tokens: &[String]) -> BTreeSet<Entity> {
        let tokens: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
        let mut found = BTreeSet::new();
        let mut i = 0;
        while i < tokens.len() {
            let hit = self.patterns.iter().find(|(p, _)| {
                p.len() <= tokens.len() - i && tokens[i..i + p.len()] == p[..]
            });
            match hit {
                Some((p, e)) => {
                    found.insert(e.clone());
                    i += p.len();
                }
                None => i += 1,
            }
        }
        found
    }
}

/// Knowledge-base values of `domain` occurring verbatim in `tokens`.
pub fn extract_entities(tokens: &[String], domain: &str, kb: &KnowledgeBase) -> BTreeSet<Entity> {
    EntityMatcher::new(kb, domain).extract(tokens)
}
