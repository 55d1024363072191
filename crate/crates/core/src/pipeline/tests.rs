use super::*;
use crate::backends::mock::{MockEmbedder, OverlapExtractor, PronounRewriter, RuleChat, ScriptedChat};
use crate::backends::{ChatBackend, SpanResult};

fn pair(id: &str, q: &str, a: &str) -> QaPair {
    QaPair {
        qa_id: id.into(),
        passage_id: "p".into(),
        question: q.into(),
        answer: a.into(),
        entities: vec![],
        valid: true,
    }
}

fn kb(pairs: Vec<QaPair>) -> KnowledgeBase {
    KnowledgeBase { source_corpus_id: "t".into(), pairs, ..Default::default() }
}

fn eiffel_kb() -> KnowledgeBase {
    kb(vec![
        pair("e#0", "Where is the Eiffel Tower situated?", "Paris, France"),
        pair("e#1", "What is the height of the Eiffel Tower?", "324 meters"),
        pair("e#2", "Which city hosts the Colosseum?", "Rome, Italy"),
    ])
}

fn fleming_kb() -> KnowledgeBase {
    kb(vec![
        pair("f#0", "Who discovered penicillin?", "Alexander Fleming"),
        pair("f#1", "Where was Alexander Fleming born?", "Darvel, Scotland"),
        pair("f#2", "In which country is Darvel?", "Scotland"),
        pair("f#3", "Who wrote Hamlet?", "William Shakespeare"),
        pair("f#4", "Where was William Shakespeare born?", "Stratford-upon-Avon"),
        pair("f#5", "What is the capital of Scotland?", "Edinburgh"),
    ])
}

struct Fixture {
    kb: KnowledgeBase,
    index: VectorIndex,
    embedder: MockEmbedder,
}

impl Fixture {
    fn new(kb: KnowledgeBase) -> Self {
        let embedder = MockEmbedder::new(128, 5);
        let index = VectorIndex::build(&kb, &embedder, 1).unwrap();
        Self { kb, index, embedder }
    }

    fn pipeline<'a>(
        &'a self,
        chat: &'a dyn ChatBackend,
        extractor: &'a dyn SpanExtractor,
        config: PipelineConfig,
    ) -> Pipeline<'a> {
        Pipeline::new(chat, &self.embedder, extractor, &PronounRewriter, &self.kb, &self.index, config).unwrap()
    }
}

const FLEMING_Q: &str = "Where was the scientist who discovered penicillin born?";
const FLEMING_PLAN: &str = r#"[{"id":1,"question":"Who discovered penicillin?","depends_on":[]},{"id":2,"question":"Where was he born?","depends_on":[1]}]"#;

#[test]
fn eiffel_hop_extracts_country() {
    let fx = Fixture::new(eiffel_kb());
    let chat = RuleChat::new();
    let p = fx.pipeline(&chat, &OverlapExtractor, PipelineConfig::default());
    let sub = SubQuestion { id: 1, text: "Which country is the Eiffel Tower located in?".into(), depends_on: vec![] };
    let mut ledger = CallLedger::new();
    let hop = p.resolve_hop(&sub, sub.text.clone(), Mode::Full, &mut ledger).unwrap();
    assert_eq!(hop.extracted_answer, "France");
    assert!(!hop.fallback_used);
    assert_eq!(hop.retrieved.len(), 3);
    assert!(hop.retrieved.windows(2).all(|w| w[0].score >= w[1].score));
    assert_eq!((ledger.extractor_calls(), ledger.embed_calls(), ledger.chat_calls()), (1, 1, 0));
}

#[test]
fn single_pair_index_with_k_one() {
    let fx = Fixture::new(kb(vec![pair("x#0", "Who wrote Hamlet?", "William Shakespeare")]));
    let chat = RuleChat::new();
    let p = fx.pipeline(&chat, &OverlapExtractor, PipelineConfig { k: 1, ..Default::default() });
    let sub = SubQuestion { id: 1, text: "Who wrote Hamlet?".into(), depends_on: vec![] };
    let hop = p.resolve_hop(&sub, sub.text.clone(), Mode::Full, &mut CallLedger::new()).unwrap();
    assert_eq!(hop.retrieved.len(), 1);
    assert_eq!(hop.retrieved[0].pair.qa_id, "x#0");
}

struct ZeroScore;

impl SpanExtractor for ZeroScore {
    fn extract_span(&self, _: &str, contexts: &[String]) -> Result<SpanResult, BackendError> {
        Ok(SpanResult { answer_text: contexts[0].clone(), context_index: 0, start: 0, end: 0, score: 0.0 })
    }
}

#[test]
fn low_score_falls_back_to_top_answer() {
    let fx = Fixture::new(fleming_kb());
    let chat = RuleChat::new();
    let p = fx.pipeline(&chat, &ZeroScore, PipelineConfig::default());
    let sub = SubQuestion { id: 1, text: "Who discovered penicillin?".into(), depends_on: vec![] };
    let hop = p.resolve_hop(&sub, sub.text.clone(), Mode::Full, &mut CallLedger::new()).unwrap();
    assert!(hop.fallback_used);
    assert_eq!(hop.extracted_answer, hop.retrieved[0].pair.answer);
    assert_eq!(hop.extracted_answer, "Alexander Fleming");
}

#[test]
fn synthesis_passes_reply_through_and_costs_one_call() {
    let fx = Fixture::new(fleming_kb());
    let chat = ScriptedChat::new(["  Scotland \n"]);
    let p = fx.pipeline(&chat, &OverlapExtractor, PipelineConfig::default());
    let evidence = EvidenceBundle { plan: DecompositionPlan::single_hop("q"), hops: vec![] };
    let mut ledger = CallLedger::new();
    assert_eq!(p.synthesize("q", &evidence, &mut ledger).unwrap(), "Scotland");
    assert_eq!(ledger.chat_calls(), 1);
    assert_eq!(ledger.usage(Stage::Synthesize).chat_calls, 1);
}

#[test]
fn two_hop_synthesis_prompt_lists_each_sub_answer_once() {
    let fx = Fixture::new(fleming_kb());
    let chat = RuleChat::new().with_plan(FLEMING_Q, FLEMING_PLAN);
    let p = fx.pipeline(&chat, &OverlapExtractor, PipelineConfig::default());
    let result = p.answer_query("q1", FLEMING_Q, Mode::Full).unwrap();
    let prompt = &synthesis_messages(FLEMING_Q, &result.evidence)[1].content;
    assert_eq!(result.evidence.hops.len(), 2);
    for hop in &result.evidence.hops {
        let line = format!("Sub-answer {}: {}\n", hop.sub_id, hop.extracted_answer);
        assert_eq!(prompt.matches(&line).count(), 1, "{prompt}");
        assert_eq!(prompt.matches("Sub-answer ").count(), 2);
    }
    assert!(prompt.starts_with(&format!("Question: {FLEMING_Q}\n\n")));
    assert!(prompt.contains("- Q: Who discovered penicillin? A: Alexander Fleming\n"));
}

#[test]
fn fleming_end_to_end() {
    let fx = Fixture::new(fleming_kb());
    let chat = RuleChat::new().with_plan(FLEMING_Q, FLEMING_PLAN);
    let p = fx.pipeline(&chat, &OverlapExtractor, PipelineConfig::default());
    let result = p.answer_query("q1", FLEMING_Q, Mode::Full).unwrap();
    assert_eq!(result.evidence.hops[0].extracted_answer, "Alexander Fleming");
    assert_eq!(result.evidence.hops[1].resolved_text, "Where was Alexander Fleming born?");
    assert_eq!(result.answer, "Scotland");
    assert_eq!(result.ledger.chat_calls(), 2);
    assert_eq!(result.ledger.rewriter_calls(), 1);
    assert!(result.evidence.respects_dependencies());
}

#[test]
fn mode_call_budgets() {
    let fx = Fixture::new(fleming_kb());
    let plan = r#"[{"id":1,"question":"Who discovered penicillin?","depends_on":[]},
        {"id":2,"question":"Where was he born?","depends_on":[1]},
        {"id":3,"question":"What is the capital of {answer:2}?","depends_on":[2]}]"#;
    let q = "What is the capital of the country where the discoverer of penicillin was born?";
    let chat = RuleChat::new().with_plan(q, plan);
    let p = fx.pipeline(&chat, &OverlapExtractor, PipelineConfig::default());

    let full = p.answer_query("a", q, Mode::Full).unwrap();
    assert_eq!(full.ledger.chat_calls(), 2);
    assert_eq!(full.ledger.extractor_calls(), 3);

    let no_rw = p.answer_query("a", q, Mode::NoRewriter).unwrap();
    assert_eq!(no_rw.ledger.chat_calls(), 2);
    assert_eq!(no_rw.ledger.rewriter_calls(), 0);
    assert_eq!(no_rw.evidence.hops[1].resolved_text, "Where was he born? Alexander Fleming");

    let ret = p.answer_query("a", q, Mode::RetrievalOnly).unwrap();
    assert_eq!(ret.ledger.chat_calls(), 2);
    assert_eq!((ret.ledger.rewriter_calls(), ret.ledger.extractor_calls()), (0, 0));
    assert_eq!(ret.evidence.hops[2].resolved_text, "What is the capital of {answer:2}?");

    let van = p.answer_query("a", q, Mode::VanillaRag).unwrap();
    assert_eq!(van.ledger.chat_calls(), 1);
    assert_eq!(van.ledger.extractor_calls(), 0);
}

#[test]
fn placeholders_gone_after_grounding() {
    let fx = Fixture::new(fleming_kb());
    let q = "What is the capital of the birth country of the discoverer of penicillin?";
    let plan = r#"[{"id":1,"question":"Who discovered penicillin?","depends_on":[]},
        {"id":2,"question":"Where was {answer:1} born?","depends_on":[1]},
        {"id":3,"question":"What is the capital of {answer:2}?","depends_on":[2]}]"#;
    let chat = RuleChat::new().with_plan(q, plan);
    let p = fx.pipeline(&chat, &OverlapExtractor, PipelineConfig::default());
    for mode in [Mode::Full, Mode::NoRewriter] {
        let r = p.answer_query("x", q, mode).unwrap();
        assert!(r.evidence.hops.iter().all(|h| placeholders_in(&h.resolved_text).is_empty()));
    }
}

#[test]
fn deterministic_results() {
    let fx = Fixture::new(fleming_kb());
    let chat = RuleChat::new().with_plan(FLEMING_Q, FLEMING_PLAN);
    let p = fx.pipeline(&chat, &OverlapExtractor, PipelineConfig::default());
    for mode in Mode::ALL {
        let a = serde_json::to_string(&p.answer_query("x", FLEMING_Q, mode).unwrap()).unwrap();
        let b = serde_json::to_string(&p.answer_query("x", FLEMING_Q, mode).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn errors_carry_query_id() {
    let fx = Fixture::new(fleming_kb());
    let chat = ScriptedChat::new(Vec::<String>::new());
    let p = fx.pipeline(&chat, &OverlapExtractor, PipelineConfig::default());
    let err = p.answer_query("item-7", "Who wrote Hamlet?", Mode::Full).unwrap_err();
    assert!(err.to_string().starts_with("query item-7:"), "{err}");
    let err = p.answer_query("item-8", "  ", Mode::Full).unwrap_err();
    assert!(matches!(err, PipelineError::Query { source, .. } if matches!(*source, PipelineError::EmptyQuestion)));
}

#[test]
fn fallback_plan_still_answers() {
    let fx = Fixture::new(fleming_kb());
    let chat = ScriptedChat::new(["garbage", "more garbage", "still garbage", "William Shakespeare"]);
    let p = fx.pipeline(&chat, &OverlapExtractor, PipelineConfig::default());
    let r = p.answer_query("x", "Who wrote Hamlet?", Mode::Full).unwrap();
    assert!(r.evidence.plan.fallback);
    assert_eq!(r.answer, "William Shakespeare");
    assert_eq!(r.ledger.usage(Stage::Decompose).chat_calls, 3);
}

#[test]
fn query_json_shape() {
    let fx = Fixture::new(fleming_kb());
    let chat = RuleChat::new();
    let p = fx.pipeline(&chat, &OverlapExtractor, PipelineConfig::default());
    let r = p.answer_query("x", "Who wrote Hamlet?", Mode::Full).unwrap();
    let compact = serde_json::to_string(&r.to_json(false)).unwrap();
    assert!(compact.contains("\"chat_calls\":2"));
    assert!(!compact.contains("\"evidence\""));
    assert!(serde_json::to_string(&r.to_json(true)).unwrap().contains("\"evidence\""));
}

#[test]
fn mode_strings_round_trip() {
    for m in Mode::ALL {
        assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
    }
    assert!("fast".parse::<Mode>().is_err());
}
