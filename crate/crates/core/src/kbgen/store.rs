//! JSONL persistence: one header line, then one record per QA pair and per
//! atomic fact.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AtomicFact, KbError, KnowledgeBase, QaPair};

pub const KB_FORMAT_VERSION: &str = "1";

#[derive(Serialize, Deserialize)]
struct Header {
    version: String,
    corpus_id: String,
    offline_token_cost: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Qa(QaPair),
    Fact(AtomicFact),
}

pub fn kb_to_string(kb: &KnowledgeBase) -> String {
    let mut out = String::new();
    let header = Header {
        version: KB_FORMAT_VERSION.to_string(),
        corpus_id: kb.source_corpus_id.clone(),
        offline_token_cost: kb.offline_token_cost,
    };
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for pair in &kb.pairs {
        out.push_str(&serde_json::to_string(&Record::Qa(pair.clone())).expect("record serializes"));
        out.push('\n');
    }
    for fact in &kb.facts {
        out.push_str(&serde_json::to_string(&Record::Fact(fact.clone())).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn kb_from_str(raw: &str) -> Result<KnowledgeBase, KbError> {
    let mut lines = raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(KbError::Format { line: 1, message: "missing header".into() })?;
    let header: Header =
        serde_json::from_str(first).map_err(|e| KbError::Format { line: 1, message: format!("bad header: {e}") })?;
    if header.version != KB_FORMAT_VERSION {
        return Err(KbError::Version { found: header.version, expected: KB_FORMAT_VERSION.into() });
    }
    let mut kb = KnowledgeBase {
        source_corpus_id: header.corpus_id,
        offline_token_cost: header.offline_token_cost,
        ..Default::default()
    };
    let mut ids = HashSet::new();
    for (i, line) in lines {
        let record: Record =
            serde_json::from_str(line).map_err(|e| KbError::Format { line: i + 1, message: e.to_string() })?;
        match record {
            Record::Qa(pair) => {
                if !ids.insert(pair.qa_id.clone()) {
                    return Err(KbError::Format { line: i + 1, message: format!("duplicate qa_id {}", pair.qa_id) });
                }
                kb.pairs.push(pair);
            }
            Record::Fact(fact) => kb.facts.push(fact),
        }
    }
    Ok(kb)
}

pub fn save_kb(kb: &KnowledgeBase, path: &Path) -> Result<(), KbError> {
    let mut file = fs::File::create(path).map_err(|e| KbError::io(path, e))?;
    file.write_all(kb_to_string(kb).as_bytes()).map_err(|e| KbError::io(path, e))
}

pub fn load_kb(path: &Path) -> Result<KnowledgeBase, KbError> {
    let raw = fs::read_to_string(path).map_err(|e| KbError::io(path, e))?;
    kb_from_str(&raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> KnowledgeBase {
        KnowledgeBase {
            source_corpus_id: "demo".into(),
            offline_token_cost: 1234,
            pairs: vec![QaPair {
                qa_id: "p#0".into(),
                passage_id: "p".into(),
                question: "Who directed Lilli's Marriage?".into(),
                answer: "directed by \"Jaap\" Speyer".into(),
                entities: vec!["Jaap Speyer".into()],
                valid: false,
            }],
            facts: vec![AtomicFact { passage_id: "p".into(), statement: "Jaap Speyer directed it".into() }],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.jsonl");
        save_kb(&sample(), &path).unwrap();
        let back = load_kb(&path).unwrap();
        assert_eq!(back, sample());
        assert_eq!(kb_to_string(&back), fs::read_to_string(&path).unwrap());
    }

    #[test]
    fn header_layout() {
        let text = kb_to_string(&sample());
        let first = text.lines().next().unwrap();
        assert_eq!(first, r#"{"version":"1","corpus_id":"demo","offline_token_cost":1234}"#);
        assert!(text.lines().nth(1).unwrap().starts_with(r#"{"kind":"qa","qa_id":"p#0""#));
        assert!(text.lines().nth(2).unwrap().starts_with(r#"{"kind":"fact""#));
    }

    #[test]
    fn empty_round_trip() {
        let kb = KnowledgeBase::default();
        assert_eq!(kb_from_str(&kb_to_string(&kb)).unwrap(), kb);
    }

    #[test]
    fn unknown_version_rejected() {
        let raw = r#"{"version":"v9","corpus_id":"x","offline_token_cost":0}"#;
        assert!(matches!(kb_from_str(raw), Err(KbError::Version { .. })));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut kb = sample();
        kb.pairs.push(kb.pairs[0].clone());
        assert!(matches!(kb_from_str(&kb_to_string(&kb)), Err(KbError::Format { line: 3, .. })));
    }
}
