use std::fs;
use std::path::Path;

use super::{Corpus, CorpusError, Dialogue, KnowledgeBase};

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// JSON Lines rendering, one dialogue per line.
pub fn write_corpus_string(corpus: &Corpus) -> String {
    let mut out = String::new();
    for d in corpus.iter() {
        out.push_str(&serde_json::to_string(d).expect("dialogue serialises"));
        out.push('\n');
    }
    out
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<(), CorpusError> {
    fs::write(path, write_corpus_string(corpus)).map_err(|e| io_err(path, e))
}

/// Reads and validates a JSON Lines corpus; blank lines are skipped.
pub fn read_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut dialogues = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let d: Dialogue = serde_json::from_str(line).map_err(|source| CorpusError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        d.validate()?;
        dialogues.push(d);
    }
    Ok(Corpus::new(dialogues))
}

pub fn write_kb(path: &Path, kb: &KnowledgeBase) -> Result<(), CorpusError> {
    let text = serde_json::to_string_pretty(kb).expect("kb serialises");
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn read_kb(path: &Path) -> Result<KnowledgeBase, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let kb: KnowledgeBase = serde_json::from_str(&text).map_err(|source| CorpusError::Parse {
        path: path.display().to_string(),
        line: 0,
        source,
    })?;
    kb.validate()?;
    Ok(kb)
}
