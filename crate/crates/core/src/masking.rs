//! Attribute word lists, masking and explicit-mention detection.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::AttributeSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Plural {
    /// Regular English rule (see [`regular_plural`]).
    Rule,
    Irregular(String),
    /// Pronouns, adjectives and other words without a plural.
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordEntry {
    pub word: String,
    pub plural: Plural,
}

impl WordEntry {
    pub fn regular(word: &str) -> Self {
        Self {
            word: word.to_lowercase(),
            plural: Plural::Rule,
        }
    }

    pub fn irregular(word: &str, plural: &str) -> Self {
        Self {
            word: word.to_lowercase(),
            plural: Plural::Irregular(plural.to_lowercase()),
        }
    }
}

/// Parses `value<TAB>word[<TAB>irregular_plural]` lines. `#` starts a
/// comment line; an irregular plural of `-` means the word has none.
pub fn parse_word_list(text: &str, origin: &Path) -> Result<Vec<(String, WordEntry)>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').map(str::trim).collect();
        let bad = |message: &str| Error::Format {
            path: origin.to_path_buf(),
            line: idx + 1,
            message: message.to_string(),
        };
        let (value, word, plural) = match fields.as_slice() {
            [value, word] => (*value, *word, Plural::Rule),
            [value, word, "-"] => (*value, *word, Plural::None),
            [value, word, plural] if !plural.is_empty() => {
                (*value, *word, Plural::Irregular(plural.to_lowercase()))
            }
            _ => return Err(bad("expected value<TAB>word[<TAB>plural]")),
        };
        if value.is_empty() || word.is_empty() || word.contains(char::is_whitespace) {
            return Err(bad("empty value or malformed word"));
        }
        out.push((
            value.to_string(),
            WordEntry {
                word: word.to_lowercase(),
                plural,
            },
        ));
    }
    Ok(out)
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

/// `s`/`x`/`ch`/`sh` endings take "es", consonant + "y" becomes "ies",
/// everything else takes "s".
pub fn regular_plural(word: &str) -> String {
    if word.ends_with('s') || word.ends_with('x') || word.ends_with("ch") || word.ends_with("sh") {
        return format!("{word}es");
    }
    let mut chars = word.chars().rev();
    if let (Some('y'), Some(prev)) = (chars.next(), chars.next()) {
        if !is_vowel(prev) {
            return format!("{}ies", &word[..word.len() - 1]);
        }
    }
    format!("{word}s")
}

/// Each word followed by its plural, duplicates removed, order kept.
pub fn expand_plurals(words: &[WordEntry]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(words.len() * 2);
    let mut push = |w: String| {
        if !out.contains(&w) {
            out.push(w);
        }
    };
    for entry in words {
        push(entry.word.clone());
        match &entry.plural {
            Plural::Rule => push(regular_plural(&entry.word)),
            Plural::Irregular(p) => push(p.clone()),
            Plural::None => {}
        }
    }
    out
}

/// The attribute value revealed by `token`, if any.
///
/// A trailing possessive `'s` (or a bare trailing apostrophe) is ignored, so
/// "woman's" matches "woman".
pub fn word_value(token: &str, spec: &AttributeSpec) -> Option<usize> {
    if let Some(v) = spec.value_of_word(token) {
        return Some(v);
    }
    let stem = token
        .strip_suffix("'s")
        .or_else(|| token.strip_suffix("’s"))
        .or_else(|| token.strip_suffix('\''))?;
    spec.value_of_word(stem)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedCaption {
    pub tokens: Vec<String>,
    pub n_masked: usize,
    pub origin: String,
}

/// Replaces every attribute word with the spec's mask token.
///
/// Matching is whole-token; an attribute without words leaves the caption
/// unchanged.
pub fn mask_tokens(tokens: &[String], spec: &AttributeSpec) -> (Vec<String>, usize) {
    if !spec.has_words() {
        return (tokens.to_vec(), 0);
    }
    let mut n_masked = 0;
    let masked = tokens
        .iter()
        .map(|t| {
            if word_value(t, spec).is_some() {
                n_masked += 1;
                spec.mask_token().to_string()
            } else {
                t.clone()
            }
        })
        .collect();
    (masked, n_masked)
}

pub fn mask_caption(caption_id: &str, tokens: &[String], spec: &AttributeSpec) -> MaskedCaption {
    let (tokens, n_masked) = mask_tokens(tokens, spec);
    MaskedCaption {
        tokens,
        n_masked,
        origin: caption_id.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MentionLabel {
    OnlyValue(usize),
    Mixed,
    None,
}

impl MentionLabel {
    pub fn value(self) -> Option<usize> {
        match self {
            MentionLabel::OnlyValue(a) => Some(a),
            _ => None,
        }
    }
}

/// Which attribute values a caption mentions explicitly.
pub fn mention_label(tokens: &[String], spec: &AttributeSpec) -> MentionLabel {
    let mut found: Option<usize> = None;
    for t in tokens {
        if let Some(v) = word_value(t, spec) {
            match found {
                Some(prev) if prev != v => return MentionLabel::Mixed,
                _ => found = Some(v),
            }
        }
    }
    found.map_or(MentionLabel::None, MentionLabel::OnlyValue)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;
    use proptest::prelude::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn plural_examples() {
        assert_eq!(
            expand_plurals(&[WordEntry::irregular("woman", "women")]),
            toks(&["woman", "women"])
        );
        assert!(expand_plurals(&[]).is_empty());
        assert_eq!(
            expand_plurals(&[WordEntry::regular("waitress")]),
            toks(&["waitress", "waitresses"])
        );
        assert_eq!(regular_plural("lady"), "ladies");
        assert_eq!(regular_plural("boy"), "boys");
        assert_eq!(regular_plural("church"), "churches");
        assert_eq!(regular_plural("box"), "boxes");
        assert_eq!(regular_plural("son"), "sons");
    }

    #[test]
    fn word_list_parsing() {
        let text = "# comment\nfemale\twoman\twomen\nmale\the\t-\nmale\tson\n\n";
        let parsed = parse_word_list(text, Path::new("w")).unwrap();
        assert_eq!(parsed.len(), 3);
        assert_eq!(parsed[0].1, WordEntry::irregular("woman", "women"));
        assert_eq!(parsed[1].1.plural, Plural::None);
        assert_eq!(parsed[2].1.plural, Plural::Rule);
        let err = parse_word_list("female woman\n", Path::new("w")).unwrap_err();
        assert!(err.to_string().contains("w:1"));
    }

    #[test]
    fn masking_examples() {
        let spec = AttributeSpec::gender();
        let m = mask_caption("c", &toks(&["a", "girl", "is", "playing", "piano"]), &spec);
        assert_eq!(m.tokens, toks(&["a", "<gender>", "is", "playing", "piano"]));
        assert_eq!(m.n_masked, 1);

        let m = mask_caption("c", &toks(&["the", "man", "and", "his", "sons"]), &spec);
        assert_eq!(
            m.tokens,
            toks(&["the", "<gender>", "and", "<gender>", "<gender>"])
        );
        assert_eq!(m.n_masked, 3);

        let race = AttributeSpec::unmasked("race", &["darker", "lighter"], "<race>").unwrap();
        let caption = toks(&["a", "woman", "on", "a", "bench"]);
        let m = mask_caption("c", &caption, &race);
        assert_eq!(m.tokens, caption);
        assert_eq!(m.n_masked, 0);
    }

    #[test]
    fn masking_is_whole_token() {
        let spec = AttributeSpec::gender();
        let caption = toks(&["a", "mandate", "for", "heroes", "woman's", "hat"]);
        let (masked, n) = mask_tokens(&caption, &spec);
        assert_eq!(masked, toks(&["a", "mandate", "for", "heroes", "<gender>", "hat"]));
        assert_eq!(n, 1);
    }

    #[test]
    fn mention_examples() {
        let spec = AttributeSpec::gender();
        let female = spec.value_index("female").unwrap();
        assert_eq!(
            mention_label(&toks(&["a", "woman", "cooking"]), &spec),
            MentionLabel::OnlyValue(female)
        );
        assert_eq!(
            mention_label(&toks(&["a", "man", "and", "a", "woman"]), &spec),
            MentionLabel::Mixed
        );
        assert_eq!(
            mention_label(&toks(&["a", "dog", "running"]), &spec),
            MentionLabel::None
        );
    }

    fn caption_strategy() -> impl Strategy<Value = Vec<String>> {
        let spec = AttributeSpec::gender();
        let mut pool: Vec<String> = spec.expanded_words().iter().flatten().cloned().collect();
        pool.extend(toks(&["a", "dog", "mandate", "kitchen", "hero", "woman's", "sons'"]));
        prop::collection::vec(prop::sample::select(pool), 1..12)
    }

    proptest! {
        #[test]
        fn masking_is_idempotent_and_complete(caption in caption_strategy()) {
            let spec = AttributeSpec::gender();
            let (once, _) = mask_tokens(&caption, &spec);
            let (twice, n_again) = mask_tokens(&once, &spec);
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(n_again, 0);
            prop_assert!(once.iter().all(|t| word_value(t, &spec).is_none()));
            prop_assert_eq!(mention_label(&once, &spec), MentionLabel::None);
            prop_assert_eq!(once.len(), caption.len());
        }
    }

    #[test]
    fn mask_token_survives_tokenizer_round_trip_checks() {
        // The tokenizer strips angle brackets, so it can never emit the mask.
        assert_eq!(tokenize("<gender>").unwrap(), toks(&["gender"]));
    }
}
