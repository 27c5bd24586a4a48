use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Dialogue};

pub const DEFAULT_FEWSHOT_SEED: u64 = 271;

/// Shares of the target-domain pool held out for validation and test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            validation: 0.1,
            test: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetSplit {
    pub target: String,
    pub source: Vec<Dialogue>,
    pub train_pool: Vec<Dialogue>,
    pub validation: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
}

impl TargetSplit {
    pub fn source_domains(&self) -> BTreeSet<String> {
        self.source.iter().flat_map(|d| d.domains.iter().cloned()).collect()
    }
}

/// Removes every dialogue touching `target` from the source set and divides
/// those dialogues into disjoint train/validation/test pools.
pub fn split_for_target(
    corpus: &Corpus,
    target: &str,
    fractions: SplitFractions,
    seed: u64,
) -> Result<TargetSplit, CorpusError> {
    if !corpus.domains().iter().any(|d| d == target) {
        return Err(CorpusError::UnknownDomain(target.to_string()));
    }
    let (pool, source): (Vec<&Dialogue>, Vec<&Dialogue>) = corpus.iter().partition(|d| d.has_domain(target));
    let remaining: BTreeSet<&str> = source.iter().flat_map(|d| d.domains.iter().map(String::as_str)).collect();
    if remaining.len() < 2 {
        return Err(CorpusError::TooFewSourceDomains {
            target: target.to_string(),
            remaining: remaining.len(),
        });
    }
    for f in [fractions.validation, fractions.test] {
        if !(0.0..1.0).contains(&f) {
            return Err(CorpusError::InvalidFraction(f));
        }
    }
    if fractions.validation + fractions.test >= 1.0 {
        return Err(CorpusError::InvalidFraction(fractions.validation + fractions.test));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = pool.len();
    let n_test = (n as f64 * fractions.test).round() as usize;
    let n_val = (n as f64 * fractions.validation).round() as usize;
    let take = |range: &[usize]| -> Vec<Dialogue> {
        let mut idx = range.to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| pool[i].clone()).collect()
    };
    Ok(TargetSplit {
        target: target.to_string(),
        source: source.into_iter().cloned().collect(),
        test: take(&order[..n_test]),
        validation: take(&order[n_test..n_test + n_val]),
        train_pool: take(&order[n_test + n_val..]),
    })
}

/// Number of dialogues drawn for `fraction` of a pool of `n`.
pub fn fewshot_count(fraction: f64, n: usize) -> usize {
    (((fraction * n as f64) - 1e-9).ceil() as usize).clamp(1, n)
}

/// Uniform sample without replacement of `ceil(fraction * |pool|)` dialogues,
/// returned in pool order.
pub fn sample_fewshot(pool: &[Dialogue], fraction: f64, seed: u64) -> Result<Vec<Dialogue>, CorpusError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CorpusError::InvalidFraction(fraction));
    }
    if pool.is_empty() {
        return Err(CorpusError::EmptyPool);
    }
    let count = fewshot_count(fraction, pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, pool.len(), count).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| pool[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Speaker, Turn};

    fn dialogue(id: &str, domains: &[&str]) -> Dialogue {
        let turns = domains
            .iter()
            .flat_map(|d| {
                [Speaker::Usr, Speaker::Sys].map(|s| Turn {
                    speaker: s,
                    domain: d.to_string(),
                    text: "hello".into(),
                    entities: vec![],
                })
            })
            .collect();
        Dialogue {
            dialogue_id: id.into(),
            domains: domains.iter().map(|s| s.to_string()).collect(),
            turns,
        }
    }

    fn abc() -> Corpus {
        let mut ds = Vec::new();
        for i in 0..20 {
            ds.push(dialogue(&format!("a{i}"), &["A"]));
            ds.push(dialogue(&format!("b{i}"), &["B"]));
            ds.push(dialogue(&format!("c{i}"), &["C"]));
        }
        ds.push(dialogue("ab", &["A", "B"]));
        ds.push(dialogue("bc", &["B", "C"]));
        Corpus::new(ds)
    }

    #[test]
    fn source_excludes_target_including_multi_domain() {
        let s = split_for_target(&abc(), "C", SplitFractions::default(), 1).unwrap();
        assert!(s.source.iter().all(|d| !d.has_domain("C")));
        assert!(s.source.iter().any(|d| d.dialogue_id == "ab"));
        assert!(!s.source.iter().any(|d| d.dialogue_id == "bc"));
        let pool: Vec<&str> = s
            .train_pool
            .iter()
            .chain(&s.validation)
            .chain(&s.test)
            .map(|d| d.dialogue_id.as_str())
            .collect();
        assert!(pool.contains(&"bc"));
        assert_eq!(pool.len(), 21);
        let unique: BTreeSet<&str> = pool.iter().copied().collect();
        assert_eq!(unique.len(), pool.len());
        assert_eq!(s.test.len(), 6);
        assert_eq!(s.validation.len(), 2);
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            split_for_target(&abc(), "Z", SplitFractions::default(), 1),
            Err(CorpusError::UnknownDomain(_))
        ));
        let two = Corpus::new(vec![dialogue("a", &["A"]), dialogue("b", &["B"])]);
        assert!(matches!(
            split_for_target(&two, "B", SplitFractions::default(), 1),
            Err(CorpusError::TooFewSourceDomains { remaining: 1, .. })
        ));
    }

    #[test]
    fn fewshot_counts_use_ceiling() {
        let pool: Vec<Dialogue> = (0..200).map(|i| dialogue(&i.to_string(), &["A"])).collect();
        assert_eq!(sample_fewshot(&pool, 0.10, 271).unwrap().len(), 20);
        assert_eq!(sample_fewshot(&pool[..150], 0.01, 271).unwrap().len(), 2);
        assert_eq!(sample_fewshot(&pool[..7], 1.0, 271).unwrap().len(), 7);
        for n in 1..300 {
            for pct in 1..=10 {
                let f = pct as f64 / 100.0;
                let exact = (pct * n + 99) / 100;
                assert_eq!(fewshot_count(f, n), exact.max(1), "n={n} pct={pct}");
            }
        }
    }

    #[test]
    fn fewshot_is_deterministic_subset() {
        let pool: Vec<Dialogue> = (0..50).map(|i| dialogue(&i.to_string(), &["A"])).collect();
        let a = sample_fewshot(&pool, 0.1, DEFAULT_FEWSHOT_SEED).unwrap();
        let b = sample_fewshot(&pool, 0.1, DEFAULT_FEWSHOT_SEED).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|d| pool.contains(d)));
    }

    #[test]
    fn fewshot_errors() {
        let pool = vec![dialogue("x", &["A"])];
        assert!(sample_fewshot(&pool, 0.0, 1).is_err());
        assert!(sample_fewshot(&pool, 1.5, 1).is_err());
        assert!(matches!(sample_fewshot(&[], 0.5, 1), Err(CorpusError::EmptyPool)));
    }
}
