use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, ChatBackend, ChatMessage};
use crate::ledger::{CallLedger, Stage};

pub const JUDGE_MARKER: &str = "You are an experienced linguist who is responsible for evaluating";

pub fn judge_prompt(question: &str, prediction: &str, gold: &str) -> String {
    format!(
        "You are an experienced linguist who is responsible for evaluating the correctness of the generated responses.\n\
         You are provided with question, the generated responses and the corresponding ground truth answer.\n\
         Your task is to compare the generated responses with the ground truth responses and evaluate the correctness of the generated responses. Response directly \"yes\" or \"no\".\n\
         \n\
         Question: {question}\n\
         Prediction: {prediction}\n\
         Ground-truth Answer: {gold}\n\
         Your response:"
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Yes,
    No,
    /// The judge replied with neither; the raw reply is kept.
    Unscored(String),
}

impl Verdict {
    /// Reads the first word of the reply, case-insensitively.
    pub fn parse(reply: &str) -> Verdict {
        let first = reply
            .split_whitespace()
            .next()
            .unwrap_or_default()
            .trim_matches(|c: char| !c.is_alphanumeric())
            .to_lowercase();
        match first.as_str() {
            "yes" => Verdict::Yes,
            "no" => Verdict::No,
            _ => Verdict::Unscored(reply.to_string()),
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Verdict::Yes => Some(true),
            Verdict::No => Some(false),
            Verdict::Unscored(_) => None,
        }
    }
}

/// One judge call. Its tokens go to `ledger` under [`Stage::Judge`], which
/// callers keep apart from inference cost.
pub fn llm_judge(
    question: &str,
    prediction: &str,
    gold: &str,
    chat: &dyn ChatBackend,
    ledger: &mut CallLedger,
) -> Result<Verdict, BackendError> {
    let response = chat.chat(&[ChatMessage::user(judge_prompt(question, prediction, gold))], 0.0)?;
    ledger.record_chat(Stage::Judge, &response);
    let verdict = Verdict::parse(&response.text);
    if let Verdict::Unscored(raw) = &verdict {
        tracing::warn!(reply = %raw, "judge reply is neither yes nor no; item left unscored");
    }
    Ok(verdict)
}
