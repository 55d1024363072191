use std::collections::BTreeMap;

use super::{placeholder, placeholders_in, Mode, PipelineError, SubQuestion};
use crate::backends::mock::has_pronoun;
use crate::backends::{BackendError, Rewriter};
use crate::ledger::CallLedger;

/// Makes a sub-question self-contained using its parents' answers.
///
/// Placeholders are substituted first. Then, by mode:
/// * `Full`: if a pronoun remains or a parent answer is still absent, the
///   rewriter grounds the question with the parent answers (in parent-id
///   order); a reply that drops an entity falls back to concatenation.
/// * `NoRewriter`: parent answers not already present are appended.
/// * `RetrievalOnly`: the raw text is returned untouched.
pub fn ground_subquestion(
    sub: &SubQuestion,
    parent_answers: &BTreeMap<u32, String>,
    mode: Mode,
    rewriter: &dyn Rewriter,
    ledger: &mut CallLedger,
) -> Result<String, PipelineError> {
    let mut parents: Vec<u32> = sub.depends_on.clone();
    parents.extend(placeholders_in(&sub.text));
    parents.sort_unstable();
    parents.dedup();
    if let Some(missing) = parents.iter().find(|id| !parent_answers.contains_key(id)) {
        return Err(PipelineError::Scheduling(format!(
            "sub-question {} needs answer {missing}, which is not resolved yet",
            sub.id
        )));
    }
    if mode == Mode::RetrievalOnly || mode == Mode::VanillaRag {
        return Ok(sub.text.clone());
    }

    let mut text = sub.text.clone();
    for id in &parents {
        text = text.replace(&placeholder(*id), &parent_answers[id]);
    }
    if parents.is_empty() {
        return Ok(text);
    }
    let entities: Vec<String> = parents.iter().map(|id| parent_answers[id].clone()).collect();

    match mode {
        Mode::Full => {
            let missing_entity = entities.iter().any(|e| !text.contains(e.as_str()));
            if !has_pronoun(&text) && !missing_entity {
                return Ok(text);
            }
            ledger.record_rewrite();
            match rewriter.rewrite(&text, &entities) {
                Ok(r) if r.satisfies(&entities) => Ok(r.rewritten),
                Ok(r) => {
                    tracing::warn!(rewritten = %r.rewritten, "rewrite dropped a grounding entity, concatenating instead");
                    Ok(concatenate(&text, &entities))
                }
                Err(e @ BackendError::Transport(_)) => Err(e.into()),
                Err(e) => {
                    tracing::warn!(error = %e, "rewriter failed, concatenating instead");
                    Ok(concatenate(&text, &entities))
                }
            }
        }
        _ => Ok(concatenate(&text, &entities)),
    }
}

/// `"{question} {a1} {a2}..."`, skipping answers already in the question.
fn concatenate(text: &str, entities: &[String]) -> String {
    let mut out = text.to_string();
    for e in entities {
        if !text.contains(e.as_str()) {
            out.push(' ');
            out.push_str(e);
        }
    }
    out
}
