//! Prompt templates with `{name}` placeholders.
//!
//! Defaults are compiled in from `prompts/*.txt`; [`PromptSet::load_dir`]
//! overrides any template found on disk under the same file name.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub extract_entities: String,
    pub extract_labels: String,
    pub extract_relations: String,
    pub answer: String,
    pub summarise: String,
    pub verify: String,
    pub generate_questions: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            extract_entities: include_str!("../prompts/extract_entities.txt").to_string(),
            extract_labels: include_str!("../prompts/extract_labels.txt").to_string(),
            extract_relations: include_str!("../prompts/extract_relations.txt").to_string(),
            answer: include_str!("../prompts/answer.txt").to_string(),
            summarise: include_str!("../prompts/summarise.txt").to_string(),
            verify: include_str!("../prompts/verify.txt").to_string(),
            generate_questions: include_str!("../prompts/generate_questions.txt").to_string(),
        }
    }
}

impl PromptSet {
    pub fn load_dir(dir: impl AsRef<Path>) -> io::Result<Self> {
        let dir = dir.as_ref();
        let mut set = Self::default();
        let slots: [(&str, &mut String); 7] = [
            ("extract_entities.txt", &mut set.extract_entities),
            ("extract_labels.txt", &mut set.extract_labels),
            ("extract_relations.txt", &mut set.extract_relations),
            ("answer.txt", &mut set.answer),
            ("summarise.txt", &mut set.summarise),
            ("verify.txt", &mut set.verify),
            ("generate_questions.txt", &mut set.generate_questions),
        ];
        for (name, slot) in slots {
            let path = dir.join(name);
            if path.exists() {
                *slot = std::fs::read_to_string(path)?;
            }
        }
        Ok(set)
    }
}

/// Single-pass placeholder substitution. Values are inserted verbatim and
/// never rescanned; braces that do not name a known placeholder are kept.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitutes_known_placeholders_once() {
        let t = "Claim: {claim}\nQ: {contrastive question} {unknown} {\"json\": 1}";
        let out = render(t, &[("claim", "{contrastive question}"), ("contrastive question", "why?")]);
        assert_eq!(out, "Claim: {contrastive question}\nQ: why? {unknown} {\"json\": 1}");
    }

    #[test]
    fn defaults_carry_expected_placeholders() {
        let p = PromptSet::default();
        assert!(p.extract_entities.contains("{text}"));
        assert!(p.answer.contains("{context}") && p.answer.contains("{claim}"));
        assert!(p.answer.contains("{contrastive question}"));
        assert!(p.summarise.contains("{qa pairs}"));
        assert!(p.verify.contains("{veracity labels}"));
        assert!(p.generate_questions.contains("{reports}"));
    }

    #[test]
    fn load_dir_overrides_present_files_only() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("verify.txt"), "V {claim}").unwrap();
        let p = PromptSet::load_dir(dir.path()).unwrap();
        assert_eq!(p.verify, "V {claim}");
        assert_eq!(p.answer, PromptSet::default().answer);
    }
}
