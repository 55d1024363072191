use serde::Deserialize;

use super::{AtomicFact, KbError, QaDraft};

#[derive(Deserialize)]
struct ReaderOutput {
    atomic_facts: Vec<String>,
    qa: Vec<QaDraft>,
}

/// Contents of the first ``` fenced block, with any language tag dropped.
pub fn first_fenced_block(raw: &str) -> Option<&str> {
    let open = raw.find("```")?;
    let after = &raw[open + 3..];
    let body_start = after.find('\n').map(|i| i + 1)?;
    let body = &after[body_start..];
    let close = body.find("```")?;
    Some(&body[..close])
}

/// Parses a reader reply into facts and QA drafts. Facts are returned
/// without a passage id; the caller fills it in.
pub fn parse_reader_output(raw: &str) -> Result<(Vec<AtomicFact>, Vec<QaDraft>), KbError> {
    let body = first_fenced_block(raw).unwrap_or(raw).trim();
    let parsed: ReaderOutput = serde_json::from_str(body).map_err(|e| KbError::ReaderOutput(e.to_string()))?;
    let facts = parsed
        .atomic_facts
        .into_iter()
        .filter(|s| !s.trim().is_empty())
        .map(|statement| AtomicFact { passage_id: String::new(), statement })
        .collect();
    Ok((facts, parsed.qa))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kbgen::EXAMPLE_READER_OUTPUT;

    #[test]
    fn parses_worked_example() {
        let (facts, qa) = parse_reader_output(EXAMPLE_READER_OUTPUT).unwrap();
        assert_eq!(facts.len(), 7);
        assert_eq!(qa.len(), 5);
        assert_eq!(qa[0].question, "What is Lilli's Marriage?");
        assert_eq!(qa[2].answer, "It is a sequel to the film \"Lilli\"");
        assert_eq!(qa[4].answer, " Hans Dreier");
    }

    #[test]
    fn empty_arrays_are_fine() {
        let (facts, qa) = parse_reader_output(r#"{"atomic_facts":[],"qa":[]}"#).unwrap();
        assert!(facts.is_empty() && qa.is_empty());
    }

    #[test]
    fn prose_wrapped_fence_parses_like_bare_json() {
        let bare = first_fenced_block(EXAMPLE_READER_OUTPUT).unwrap();
        let wrapped = format!("Sure! Here is the output:\n\n{EXAMPLE_READER_OUTPUT}\n\nLet me know if you need more.");
        assert_eq!(parse_reader_output(bare).unwrap(), parse_reader_output(&wrapped).unwrap());
    }

    #[test]
    fn missing_key_is_an_error() {
        assert!(parse_reader_output(r#"{"atomic_facts":[]}"#).is_err());
        assert!(parse_reader_output("not json at all").is_err());
        assert!(parse_reader_output("```json\n{broken\n```").is_err());
    }
}
