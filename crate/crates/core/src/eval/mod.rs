//! Turn-level response scoring: corpus BLEU-4 and micro entity F1, plus the
//! per-domain report.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, Entity, EntityMatcher, KnowledgeBase, Speaker};
use crate::error::{Error, Result};

/// Identifies the BLEU variant in reports.
pub const BLEU_CONVENTION: &str = "corpus-bleu4 add-one-on-zero brevity-penalty";

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Corpus-level BLEU-4 over aligned pairs. A zero clipped-match count for
/// order `n` is replaced by `1 / (candidate n-grams + 1)`.
pub fn bleu(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::LengthMismatch(candidates.len(), references.len()));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=4 {
            let rc = ngrams(r, n);
            for (g, count) in ngrams(c, n) {
                matches[n - 1] += count.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let log_precision: f64 = (0..4)
        .map(|i| {
            let (m, t) = if matches[i] == 0 { (1, totals[i] + 1) } else { (matches[i], totals[i]) };
            (m as f64 / t as f64).ln()
        })
        .sum::<f64>()
        / 4.0;
    let bp = if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(bp * log_precision.exp())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

/// Micro-averaged precision, recall and F1 over aligned turns.
pub fn entity_f1(predicted: &[BTreeSet<Entity>], gold: &[BTreeSet<Entity>]) -> Result<EntityScore> {
    if predicted.len() != gold.len() {
        return Err(Error::LengthMismatch(predicted.len(), gold.len()));
    }
    let mut s = EntityScore::default();
    for (p, g) in predicted.iter().zip(gold) {
        s.predicted += p.len();
        s.gold += g.len();
        s.correct += p.intersection(g).count();
    }
    if s.predicted == 0 && s.gold == 0 {
        s.precision = 1.0;
        s.recall = 1.0;
        s.f1 = 1.0;
        return Ok(s);
    }
    s.precision = if s.predicted == 0 { 0.0 } else { s.correct as f64 / s.predicted as f64 };
    s.recall = if s.gold == 0 { 0.0 } else { s.correct as f64 / s.gold as f64 };
    s.f1 = if s.precision + s.recall == 0.0 {
        0.0
    } else {
        2.0 * s.precision * s.recall / (s.precision + s.recall)
    };
    Ok(s)
}

/// One system turn to respond to, with gold history.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnQuery<'a> {
    pub dialogue_id: &'a str,
    pub turn_index: usize,
    pub domain: &'a str,
    pub context: Vec<Vec<String>>,
    pub user: Vec<String>,
}

pub trait ResponseGenerator: Sync {
    fn respond(&self, query: &TurnQuery<'_>) -> Result<Vec<String>>;
}

/// Returns the gold response; scores perfectly.
pub struct EchoGenerator {
    gold: HashMap<(String, usize), Vec<String>>,
}

impl EchoGenerator {
    pub fn new(dialogues: &[Dialogue]) -> Self {
        let gold = dialogues
            .iter()
            .flat_map(|d| d.turns.iter().enumerate().map(move |(i, t)| ((d.dialogue_id.clone(), i), t.tokens())))
            .collect();
        Self { gold }
    }
}

impl ResponseGenerator for EchoGenerator {
    fn respond(&self, q: &TurnQuery<'_>) -> Result<Vec<String>> {
        Ok(self
            .gold
            .get(&(q.dialogue_id.to_string(), q.turn_index))
            .cloned()
            .unwrap_or_default())
    }
}

/// Returns the same tokens for every turn.
pub struct FixedGenerator(pub Vec<String>);

impl ResponseGenerator for FixedGenerator {
    fn respond(&self, _: &TurnQuery<'_>) -> Result<Vec<String>> {
        Ok(self.0.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainScore {
    pub label: String,
    pub domain: String,
    /// Percentage, one decimal.
    pub bleu: f64,
    /// Percentage, one decimal.
    pub entity_f1: f64,
    pub turns: usize,
    pub entities_gold: usize,
    pub entities_predicted: usize,
    pub entities_correct: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fingerprint: String,
    pub fewshot_fraction: Option<f64>,
    pub bleu_convention: String,
    pub rows: Vec<DomainScore>,
}

impl EvalReport {
    pub fn new(fingerprint: impl Into<String>, fewshot_fraction: Option<f64>) -> Self {
        Self {
            fingerprint: fingerprint.into(),
            fewshot_fraction,
            bleu_convention: BLEU_CONVENTION.to_string(),
            rows: Vec::new(),
        }
    }

    pub fn row(&self, label: &str, domain: &str) -> Option<&DomainScore> {
        self.rows.iter().find(|r| r.label == label && r.domain == domain)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    /// Aligned text table: model, domain, BLEU %, Entity F1 %.
    pub fn to_table(&self) -> String {
        let headers = ["Model", "Domain", "BLEU", "Entity F1", "Turns"];
        let cells: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.label.clone(),
                    r.domain.clone(),
                    format!("{:.1}", r.bleu),
                    format!("{:.1}", r.entity_f1),
                    r.turns.to_string(),
                ]
            })
            .collect();
        let mut widths = headers.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, row: [&str; 5]| {
            let parts: Vec<String> = row
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, headers);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        let _ = writeln!(out, "{}", rule.join("  "));
        for row in &cells {
            line(&mut out, [&row[0], &row[1], &row[2], &row[3], &row[4]]);
        }
        if let Some(f) = self.fewshot_fraction {
            let _ = writeln!(out, "few-shot fraction: {f}");
        }
        let _ = writeln!(out, "config: {}", self.fingerprint);
        out
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Evaluation thread count from `DATML_THREADS` (default 1).
pub fn eval_threads() -> usize {
    std::env::var("DATML_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

fn queries(dialogues: &[Dialogue]) -> Vec<(TurnQuery<'_>, &crate::corpus::Turn)> {
    let mut out = Vec::new();
    for d in dialogues {
        let tokens: Vec<Vec<String>> = d.turns.iter().map(|t| t.tokens()).collect();
        for (i, turn) in d.turns.iter().enumerate() {
            if turn.speaker != Speaker::Sys || i == 0 {
                continue;
            }
            out.push((
                TurnQuery {
                    dialogue_id: &d.dialogue_id,
                    turn_index: i,
                    domain: &turn.domain,
                    context: tokens[..i - 1].to_vec(),
                    user: tokens[i - 1].clone(),
                },
                turn,
            ));
        }
    }
    out
}

/// Generates every system turn of `test` from gold history and scores the
/// responses. Turns whose domain differs from `domain` are skipped.
pub fn evaluate_model<G: ResponseGenerator + ?Sized>(
    generator: &G,
    test: &[Dialogue],
    kb: &KnowledgeBase,
    domain: &str,
    label: &str,
) -> Result<DomainScore> {
    let items: Vec<_> = queries(test).into_iter().filter(|(q, _)| q.domain == domain).collect();
    if items.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let threads = eval_threads().min(items.len());
    let chunk = items.len().div_ceil(threads);
    let responses: Vec<Vec<String>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|(q, _)| generator.respond(q)).collect::<Result<Vec<_>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?
    .into_iter()
    .flatten()
    .collect();
    let matcher = EntityMatcher::new(kb, domain);
    let references: Vec<Vec<String>> = items.iter().map(|(_, t)| t.tokens()).collect();
    let predicted: Vec<BTreeSet<Entity>> = responses.iter().map(|r| matcher.extract(r)).collect();
    let gold: Vec<BTreeSet<Entity>> = items.iter().map(|(_, t)| t.entity_set()).collect();
    let b = bleu(&responses, &references)?;
    let f = entity_f1(&predicted, &gold)?;
    Ok(DomainScore {
        label: label.to_string(),
        domain: domain.to_string(),
        bleu: round1(100.0 * b),
        entity_f1: round1(100.0 * f.f1),
        turns: items.len(),
        entities_gold: f.gold,
        entities_predicted: f.predicted,
        entities_correct: f.correct,
    })
}
