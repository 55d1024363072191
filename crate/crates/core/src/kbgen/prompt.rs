//! The reader prompt that turns one passage into atomic facts and QA pairs.

use crate::backends::EntityMention;

use super::Passage;

/// First line of every reader prompt; mocks use it to recognize the prompt.
pub const READER_MARKER: &str = "System Role: Knowledge extraction and question generation system.";

/// The worked example's reply, fence included.
pub const EXAMPLE_READER_OUTPUT: &str = r#"```json
{
  "atomic_facts": [
    "Lilli's Marriage is a 1919 German silent film",
    "Lilli's Marriage is also known as Lillis Ehe in German",
    "Jaap Speyer directed Lilli's Marriage",
    "Lilli's Marriage is a sequel to the film Lilli",
    "Lilli's Marriage premiered at the Marmorhaus in Berlin",
    "Hans Dreier was responsible for the art direction of Lilli's Marriage",
    "Lilli's Marriage was released in 1919"
  ],
  "qa": [
    {"question": "What is Lilli's Marriage?", "answer": "a 1919 German silent film"},
    {"question": "Who directed Lilli's Marriage?", "answer": "directed by Jaap Speyer"},
    {"question": "Which film is Lilli's Marriage a sequel to?", "answer": "It is a sequel to the film \"Lilli\""},
    {"question": "Where did Lilli's Marriage premiere?", "answer": "premiered at the Marmorhaus in Berlin"},
    {"question": "Who was responsible for the art direction of Lilli's Marriage?", "answer": " Hans Dreier"}
  ]
}
```"#;

/// The worked example's passage.
pub const EXAMPLE_PASSAGE: &str = "Lilli's Marriage (German: Lillis Ehe) is a 1919 German silent film directed by Jaap Speyer. It is a sequel to the film \"Lilli\", and premiered at the Marmorhaus in Berlin. The film's art direction was by Hans Dreier.";

/// The worked example's entity list.
pub const EXAMPLE_ENTITIES: &str = "Lilli's Marriage (WORK_OF_ART), Lillis Ehe (WORK_OF_ART), Jaap Speyer (PERSON), Lilli (WORK_OF_ART), Marmorhaus in Berlin (FAC), Hans Dreier (PERSON), 1919 (DATE)";

const INSTRUCTIONS: &str = r#"Task Description: You will receive:
1. Original passage text
2. Extracted entities and relationships from the passage

Your task is to generate atomic knowledge facts and corresponding QA pairs.

Output Format:
A single JSON object only (nothing else) enclosed in a ```json ... ``` code block with exactly two keys:
- "atomic_facts": an array of atomic knowledge facts (each fact should be independent, complete, and self-contained)
- "qa": an array of objects {"question": "...", "answer": "..."}

Rules for Atomic Facts:
1. Each fact should be an independent, complete statement that can stand alone.
2. Cover both explicit and implicit relationships mentioned in the text.
3. Include background knowledge and context that help understand the entities.
4. Each fact should be concise but informative (preferably one sentence).
5. Do not duplicate facts or add information not present in the passage.

Rules for QA Generation:
1. Each question must be short (≤ 12 words) and start with a question word (Who, What, When, Where, Which, How, How many).
2. Use explicit entity names from the entities list; avoid pronouns or vague references.
3. Each answer must be an exact verbatim substring from the original passage.
4. Ensure coverage of all important entities and relationships.
5. Avoid duplicate questions or answers.

Example:

[Original Text]:
"#;

const TAIL_HEADER: &str = "Now process the following passage:\n[Original Text]:\n";
const ENTITY_HEADER: &str = "\n\n[Entity List]:\n";

/// The fixed part of the prompt, everything before the passage.
pub fn reader_prompt_prefix() -> String {
    format!(
        "{READER_MARKER}\n\n{INSTRUCTIONS}{EXAMPLE_PASSAGE}\n\n[Entity List]:\n{EXAMPLE_ENTITIES}\n\n[Output JSON]:\n{EXAMPLE_READER_OUTPUT}\n\n{TAIL_HEADER}"
    )
}

/// Renders mentions as `surface (LABEL)`, comma-joined, first occurrence of
/// each (surface, label) pair only. An empty list renders as `(none)`.
pub fn entity_info(mentions: &[EntityMention]) -> String {
    let mut seen = Vec::new();
    for m in mentions {
        let item = format!("{} ({})", m.surface, m.label);
        if !seen.contains(&item) {
            seen.push(item);
        }
    }
    if seen.is_empty() {
        "(none)".to_string()
    } else {
        seen.join(", ")
    }
}

pub fn build_reader_prompt(passage: &Passage, mentions: &[EntityMention]) -> String {
    let mut out = reader_prompt_prefix();
    out.push_str(&passage.text);
    out.push_str(ENTITY_HEADER);
    out.push_str(&entity_info(mentions));
    out.push('\n');
    out
}

/// Recovers the passage text from a prompt made by [`build_reader_prompt`].
pub fn passage_from_prompt(prompt: &str) -> Option<&str> {
    let start = prompt.rfind(TAIL_HEADER)? + TAIL_HEADER.len();
    let end = start + prompt[start..].rfind(ENTITY_HEADER)?;
    Some(&prompt[start..end])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn passage(id: &str, text: &str) -> Passage {
        Passage { id: id.into(), title: String::new(), text: text.into() }
    }

    fn m(surface: &str, label: &str) -> EntityMention {
        EntityMention { surface: surface.into(), label: label.into(), char_start: 0, char_end: surface.len() }
    }

    #[test]
    fn renders_worked_example_entities_in_tail() {
        let mentions = [
            m("Lilli's Marriage", "WORK_OF_ART"),
            m("Lillis Ehe", "WORK_OF_ART"),
            m("Jaap Speyer", "PERSON"),
            m("Lilli", "WORK_OF_ART"),
            m("Marmorhaus in Berlin", "FAC"),
            m("Hans Dreier", "PERSON"),
            m("1919", "DATE"),
        ];
        let prompt = build_reader_prompt(&passage("p", EXAMPLE_PASSAGE), &mentions);
        let tail = &prompt[prompt.rfind("Now process the following passage:").unwrap()..];
        assert!(tail.contains("[Entity List]:\nLilli's Marriage (WORK_OF_ART), Lillis Ehe (WORK_OF_ART), "));
        assert!(tail.ends_with(&format!("{EXAMPLE_ENTITIES}\n")));
        assert!(prompt.starts_with(READER_MARKER));
        assert!(prompt.contains(EXAMPLE_READER_OUTPUT));
    }

    #[test]
    fn empty_mentions_render_none() {
        let prompt = build_reader_prompt(&passage("p", "some text"), &[]);
        assert!(prompt.ends_with("[Entity List]:\n(none)\n"));
    }

    #[test]
    fn only_substituted_fields_differ() {
        let a = build_reader_prompt(&passage("a", "First passage."), &[m("Alpha", "PROPN")]);
        let b = build_reader_prompt(&passage("b", "Second, longer passage text."), &[m("Beta Gamma", "PERSON")]);
        let prefix = reader_prompt_prefix();
        assert!(a.starts_with(&prefix) && b.starts_with(&prefix));
        let strip = |p: &str, text: &str, info: &str| {
            p.replacen(text, "{passage}", 1).replace(&format!("{ENTITY_HEADER}{info}\n"), "{entity_info}")
        };
        let ta = strip(&a[prefix.len()..], "First passage.", "Alpha (PROPN)");
        let tb = strip(&b[prefix.len()..], "Second, longer passage text.", "Beta Gamma (PERSON)");
        assert_eq!(ta, tb);
        assert_eq!(ta, "{passage}{entity_info}");
    }

    #[test]
    fn passage_round_trips_through_prompt() {
        let text = "Text mentioning [Entity List]:\n inline.";
        let prompt = build_reader_prompt(&passage("p", text), &[]);
        assert_eq!(passage_from_prompt(&prompt), Some(text));
    }
}
