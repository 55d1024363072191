//! Synthetic fixtures shared by the benchmarks.

use compactrag_core::backends::mock::{MockEmbedder, RuleChat};
use compactrag_core::{KnowledgeBase, QaPair, VectorIndex};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "river", "mountain", "city", "king", "film", "novel", "painter", "bridge", "castle", "island", "war", "treaty",
    "poet", "church", "village", "harbour", "forest", "desert", "lake", "tower", "Arden", "Belmont", "Corvin",
    "Dunmore",
];

pub fn phrase(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// `n` random pairs; the same seed always gives the same KB.
pub fn random_kb(n: usize, seed: u64) -> KnowledgeBase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = (0..n)
        .map(|i| {
            let ql = rng.random_range(3..8);
            QaPair {
                qa_id: format!("b#{i}"),
                passage_id: "bench".into(),
                question: format!("Which {}?", phrase(&mut rng, ql)),
                answer: phrase(&mut rng, 2),
                entities: vec![],
                valid: true,
            }
        })
        .collect();
    KnowledgeBase { source_corpus_id: "bench".into(), pairs, ..Default::default() }
}

pub fn random_index(kb: &KnowledgeBase, embedder: &MockEmbedder) -> VectorIndex {
    VectorIndex::build(kb, embedder, 4).expect("bench index builds")
}

/// A chat mock holding a `hops`-long chain plan for `question`, and a KB in
/// which every hop resolves.
pub fn chain_fixture(hops: usize) -> (KnowledgeBase, RuleChat, String) {
    let mut kb = random_kb(2000, 1);
    let names: Vec<String> = (0..=hops).map(|i| format!("Entity{i} Name{i}")).collect();
    let mut plan = Vec::new();
    for j in 0..hops {
        kb.pairs.push(QaPair {
            qa_id: format!("chain#{j}"),
            passage_id: "chain".into(),
            question: format!("What is linked to {}?", names[j]),
            answer: names[j + 1].clone(),
            entities: vec![],
            valid: true,
        });
        let text =
            if j == 0 { format!("What is linked to {}?", names[0]) } else { "What is linked to it?".to_string() };
        let deps: Vec<usize> = if j == 0 { vec![] } else { vec![j] };
        plan.push(serde_json::json!({ "id": j + 1, "question": text, "depends_on": deps }));
    }
    let question = format!("Where do {hops} links from {} lead?", names[0]);
    let chat = RuleChat::new().with_plan(question.clone(), serde_json::Value::Array(plan).to_string());
    (kb, chat, question)
}
