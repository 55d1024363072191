//! Query decomposition (the first large-model call) and dependency ordering.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::backends::{ChatBackend, ChatMessage};
use crate::kbgen::first_fenced_block;
use crate::ledger::{CallLedger, Stage};

pub const DECOMPOSE_MARKER: &str = "You break a complex question into simple sub-questions";

const DECOMPOSE_SYSTEM: &str = r#"You break a complex question into simple sub-questions that can each be answered by a single fact lookup.
Reply with a JSON array only. Each element is {"id": <integer starting at 1>, "question": "<sub-question>", "depends_on": [<ids whose answers this sub-question needs>]}.
When a sub-question needs an earlier answer, write the placeholder {answer:i} where i is the id of that earlier sub-question, and list i in depends_on.
A question that needs only one fact gets a single sub-question with an empty depends_on.

Example:
Question: Where was the scientist who discovered penicillin born?
[{"id": 1, "question": "Who discovered penicillin?", "depends_on": []}, {"id": 2, "question": "Where was {answer:1} born?", "depends_on": [1]}]"#;

static PLACEHOLDER_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{answer:(\d+)\}").unwrap());

/// Placeholder text standing for the answer of sub-question `id`.
pub fn placeholder(id: u32) -> String {
    format!("{{answer:{id}}}")
}

/// Ids of every `{answer:i}` placeholder in `text`, in order of appearance.
pub fn placeholders_in(text: &str) -> Vec<u32> {
    PLACEHOLDER_RE.captures_iter(text).filter_map(|c| c[1].parse().ok()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQuestion {
    pub id: u32,
    #[serde(rename = "question")]
    pub text: String,
    #[serde(default)]
    pub depends_on: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionPlan {
    pub original: String,
    pub sub_questions: Vec<SubQuestion>,
    /// True when the decomposer's output was unusable and the plan is the
    /// original question as a single hop.
    #[serde(default)]
    pub fallback: bool,
}

impl DecompositionPlan {
    pub fn single_hop(question: &str) -> Self {
        Self {
            original: question.to_string(),
            sub_questions: vec![SubQuestion { id: 1, text: question.to_string(), depends_on: Vec::new() }],
            fallback: false,
        }
    }

    /// Validates a parsed list of sub-questions into a plan. Placeholders
    /// that reference an id missing from `depends_on` are added to it.
    pub fn new(original: &str, mut subs: Vec<SubQuestion>) -> Result<Self, PipelineError> {
        if subs.is_empty() {
            return Err(PipelineError::Decomposition("plan has no sub-questions".into()));
        }
        let ids: HashSet<u32> = subs.iter().map(|s| s.id).collect();
        if ids.len() != subs.len() {
            return Err(PipelineError::Decomposition("duplicate sub-question ids".into()));
        }
        for sub in &mut subs {
            if sub.id == 0 {
                return Err(PipelineError::Decomposition("sub-question ids start at 1".into()));
            }
            if sub.text.trim().is_empty() {
                return Err(PipelineError::Decomposition(format!("sub-question {} is empty", sub.id)));
            }
            for p in placeholders_in(&sub.text) {
                if !sub.depends_on.contains(&p) {
                    sub.depends_on.push(p);
                }
            }
            sub.depends_on.sort_unstable();
            sub.depends_on.dedup();
            if sub.depends_on.contains(&sub.id) {
                return Err(PipelineError::Decomposition(format!("sub-question {} depends on itself", sub.id)));
            }
            if let Some(missing) = sub.depends_on.iter().find(|d| !ids.contains(d)) {
                return Err(PipelineError::Decomposition(format!(
                    "sub-question {} depends on unknown id {missing}",
                    sub.id
                )));
            }
        }
        let plan = Self { original: original.to_string(), sub_questions: subs, fallback: false };
        topo_order(&plan)?;
        Ok(plan)
    }
}

/// Orders sub-questions so every dependency comes first. Among ready
/// sub-questions the smallest id goes first. A cycle is reported with the
/// ids on it.
pub fn topo_order(plan: &DecompositionPlan) -> Result<Vec<&SubQuestion>, PipelineError> {
    let by_id: BTreeMap<u32, &SubQuestion> = plan.sub_questions.iter().map(|s| (s.id, s)).collect();
    let mut pending: BTreeMap<u32, usize> = BTreeMap::new();
    let mut dependents: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for sub in &plan.sub_questions {
        for dep in &sub.depends_on {
            if !by_id.contains_key(dep) {
                return Err(PipelineError::Decomposition(format!(
                    "sub-question {} depends on unknown id {dep}",
                    sub.id
                )));
            }
            dependents.entry(*dep).or_default().push(sub.id);
        }
        let unique: BTreeSet<_> = sub.depends_on.iter().collect();
        pending.insert(sub.id, unique.len());
    }
    let mut ready: BTreeSet<u32> = pending.iter().filter(|(_, n)| **n == 0).map(|(id, _)| *id).collect();
    let mut order = Vec::with_capacity(by_id.len());
    while let Some(id) = ready.pop_first() {
        order.push(by_id[&id]);
        pending.remove(&id);
        for next in dependents.get(&id).into_iter().flatten() {
            if let Some(n) = pending.get_mut(next) {
                *n -= 1;
                if *n == 0 {
                    ready.insert(*next);
                }
            }
        }
    }
    if !pending.is_empty() {
        let cycle = find_cycle(&by_id, &pending);
        return Err(PipelineError::Cycle(cycle));
    }
    Ok(order)
}

/// Every unscheduled node still waits on another unscheduled node, so
/// following those edges from any of them must revisit a node.
fn find_cycle(by_id: &BTreeMap<u32, &SubQuestion>, pending: &BTreeMap<u32, usize>) -> Vec<u32> {
    let mut path: Vec<u32> = Vec::new();
    let mut current = *pending.keys().next().expect("pending is non-empty");
    loop {
        if let Some(pos) = path.iter().position(|&n| n == current) {
            let mut cycle = path[pos..].to_vec();
            cycle.sort_unstable();
            return cycle;
        }
        path.push(current);
        current = *by_id[&current]
            .depends_on
            .iter()
            .find(|d| pending.contains_key(d))
            .expect("unscheduled node has an unscheduled dependency");
    }
}

fn parse_plan(question: &str, raw: &str) -> Result<DecompositionPlan, PipelineError> {
    let body = first_fenced_block(raw).unwrap_or(raw).trim();
    let subs: Vec<SubQuestion> = match serde_json::from_str(body) {
        Ok(subs) => subs,
        Err(first_err) => {
            let (Some(open), Some(close)) = (body.find('['), body.rfind(']')) else {
                return Err(PipelineError::Decomposition(format!("not a JSON array: {first_err}")));
            };
            if close <= open {
                return Err(PipelineError::Decomposition(format!("not a JSON array: {first_err}")));
            }
            serde_json::from_str(&body[open..=close]).map_err(|e| PipelineError::Decomposition(e.to_string()))?
        }
    };
    DecompositionPlan::new(question, subs)
}

pub fn decomposition_messages(question: &str) -> Vec<ChatMessage> {
    vec![ChatMessage::system(DECOMPOSE_SYSTEM), ChatMessage::user(format!("Question: {question}"))]
}

/// Asks the chat model for a plan. Unusable replies are retried up to
/// `retries` times; after that the plan is the question itself as a single
/// hop. Transport failures are errors.
pub fn decompose(
    question: &str,
    chat: &dyn ChatBackend,
    retries: u32,
    temperature: f32,
    ledger: &mut CallLedger,
) -> Result<DecompositionPlan, PipelineError> {
    if question.trim().is_empty() {
        return Err(PipelineError::EmptyQuestion);
    }
    let messages = decomposition_messages(question);
    for attempt in 0..=retries {
        let response = chat.chat(&messages, temperature)?;
        ledger.record_chat(Stage::Decompose, &response);
        match parse_plan(question, &response.text) {
            Ok(plan) => return Ok(plan),
            Err(e) => tracing::warn!(attempt, error = %e, "unusable decomposition"),
        }
    }
    tracing::warn!(question, "decomposition failed, falling back to a single hop");
    Ok(DecompositionPlan { fallback: true, ..DecompositionPlan::single_hop(question) })
}
