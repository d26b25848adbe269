//! Small text helpers shared across modules.

use sha2::{Digest, Sha256};

/// Case-folded, whitespace-collapsed form used for identity comparisons.
pub fn normalize_key(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Normalization applied to free-text labels: lowercase, every character
/// other than alphanumerics and `-` becomes a space, whitespace collapsed.
/// Hyphens stay because several labels (`half-true`, `pants-fire`) carry them.
pub fn normalize_label(s: &str) -> String {
    let mapped: String = s
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() || c == '-' { c } else { ' ' })
        .collect();
    mapped
        .split_whitespace()
        .map(|tok| tok.trim_matches('-'))
        .filter(|tok| !tok.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Splits on `.`, `?` or `!` followed by whitespace.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '?' | '!') {
            if let Some(&(_, next)) = chars.peek() {
                if next.is_whitespace() {
                    let end = i + c.len_utf8();
                    push_trimmed(&mut out, &text[start..end]);
                    start = end;
                }
            }
        }
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// Truncates to at most `max_bytes`, backing off to a char boundary.
pub fn truncate_at_boundary(s: &str, max_bytes: usize) -> &str {
    if s.len() <= max_bytes {
        return s;
    }
    let mut end = max_bytes;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn label_normalization() {
        assert_eq!(normalize_label("  Half-True."), "half-true");
        assert_eq!(normalize_label("The claim is: FALSE!"), "the claim is false");
        assert_eq!(normalize_label("-- true --"), "true");
    }

    #[test]
    fn sentences() {
        assert_eq!(
            split_sentences("One. Two? Three! 3.5 stays"),
            ["One.", "Two?", "Three!", "3.5 stays"]
        );
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn truncation_respects_char_boundaries() {
        assert_eq!(truncate_at_boundary("héllo", 2), "h");
        assert_eq!(truncate_at_boundary("abc", 10), "abc");
    }

    proptest! {
        #[test]
        fn label_normalization_is_idempotent(s in ".{0,40}") {
            let once = normalize_label(&s);
            prop_assert_eq!(normalize_label(&once), once.clone());
        }

        #[test]
        fn key_normalization_is_idempotent(s in ".{0,40}") {
            let once = normalize_key(&s);
            prop_assert_eq!(normalize_key(&once), once.clone());
        }
    }
}
