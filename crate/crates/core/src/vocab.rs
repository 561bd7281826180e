//! Vocabularies and alignment of human captions to a model's vocabulary.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::hashing;
use crate::{Error, Result};

pub const OOV_TOKEN: &str = "<oov>";
pub const PAD_TOKEN: &str = "<pad>";

pub const MASK_INDEX: usize = 0;
pub const OOV_INDEX: usize = 1;
pub const PAD_INDEX: usize = 2;

/// Token ↔ index map. Indices 0, 1, 2 are reserved for the mask, OOV and
/// padding tokens; the rest follow in frequency order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its tokens in index order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3 || tokens[OOV_INDEX] != OOV_TOKEN || tokens[PAD_INDEX] != PAD_TOKEN {
            return Err(Error::validation(
                "vocabulary must start with <mask>, <oov>, <pad>",
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate vocabulary token '{t}'")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Counts tokens over `captions` and keeps those seen at least
    /// `min_count` times, most frequent first, ties broken lexicographically.
    pub fn build<'a, I>(captions: I, mask_token: &str, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut n_captions = 0usize;
        for caption in captions {
            n_captions += 1;
            for t in caption {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        if n_captions == 0 {
            return Err(Error::validation("cannot build a vocabulary from no captions"));
        }
        let specials = [mask_token, OOV_TOKEN, PAD_TOKEN];
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count.max(1) && !specials.contains(t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = specials
            .iter()
            .copied()
            .chain(kept.into_iter().map(|(t, _)| t))
            .map(str::to_string)
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn mask_token(&self) -> &str {
        &self.tokens[MASK_INDEX]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Indices for `tokens`, unknown tokens mapped to the OOV index.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.index_of(t).unwrap_or(OOV_INDEX))
            .collect()
    }

    /// SHA-256 over the tokens in index order.
    pub fn hash(&self) -> String {
        hashing::sha256_lines(self.tokens.iter().map(String::as_str))
    }

    /// `{token: index}` for audits.
    pub fn to_json(&self) -> serde_json::Value {
        let map: BTreeMap<&str, usize> = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        serde_json::to_value(map).expect("string keys serialize")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: BTreeMap<String, usize> = serde_json::from_str(&text)?;
        let mut tokens = vec![String::new(); map.len()];
        for (token, idx) in map {
            let slot = tokens.get_mut(idx).ok_or_else(|| {
                Error::validation(format!("{}: index {idx} is not contiguous", path.display()))
            })?;
            *slot = token;
        }
        Self::from_tokens(tokens)
    }
}

/// Replaces tokens missing from the prediction vocabulary with the OOV
/// token. The mask token is always kept.
pub fn align_to_prediction_vocab(tokens: &[String], v_pre: &Vocabulary) -> Vec<String> {
    tokens
        .iter()
        .map(|t| {
            if t == v_pre.mask_token() || v_pre.contains(t) {
                t.clone()
            } else {
                OOV_TOKEN.to_string()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    fn build(captions: &[Vec<String>], min_count: usize) -> Result<Vocabulary> {
        Vocabulary::build(captions.iter().map(Vec::as_slice), "<gender>", min_count)
    }

    #[test]
    fn build_examples() {
        let v = build(&[toks(&["a", "cat"])], 1).unwrap();
        assert_eq!(v.tokens(), toks(&["<gender>", "<oov>", "<pad>", "a", "cat"]));

        let v = build(&[toks(&["a", "cat"]), toks(&["a", "dog"])], 2).unwrap();
        assert_eq!(v.tokens(), toks(&["<gender>", "<oov>", "<pad>", "a"]));

        assert!(build(&[], 1).is_err());
    }

    #[test]
    fn build_orders_by_frequency_then_lexically() {
        let v = build(
            &[toks(&["b", "c", "a", "c"]), toks(&["<gender>", "b", "c"])],
            1,
        )
        .unwrap();
        assert_eq!(v.tokens()[3..], toks(&["c", "b", "a"]));
        assert_eq!(v.index_of("<gender>"), Some(MASK_INDEX));
    }

    #[test]
    fn alignment_examples() {
        let v_pre = build(&[toks(&["a", "racquet", "holding"])], 1).unwrap();
        let caption = toks(&["a", "<gender>", "holding", "racquet"]);
        assert_eq!(align_to_prediction_vocab(&caption, &v_pre), caption);

        let caption = toks(&["a", "<gender>", "wields", "racquet"]);
        assert_eq!(
            align_to_prediction_vocab(&caption, &v_pre),
            toks(&["a", "<gender>", "<oov>", "racquet"])
        );

        let caption = toks(&["two", "<gender>", "surfing"]);
        assert_eq!(
            align_to_prediction_vocab(&caption, &v_pre),
            toks(&["<oov>", "<gender>", "<oov>"])
        );
    }

    #[test]
    fn json_round_trip() {
        let v = build(&[toks(&["x", "y", "y"])], 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.json");
        v.write_json(&path).unwrap();
        assert_eq!(Vocabulary::read_json(&path).unwrap(), v);
    }

    proptest! {
        #[test]
        fn alignment_properties(
            pre in prop::collection::vec("[a-e]", 1..8),
            caption in prop::collection::vec(prop::sample::select(toks(&["a", "b", "c", "d", "e", "f", "<gender>", "<oov>"])), 1..10),
        ) {
            let v_pre = build(&[pre], 1).unwrap();
            let aligned = align_to_prediction_vocab(&caption, &v_pre);
            prop_assert_eq!(aligned.len(), caption.len());
            prop_assert!(aligned.iter().all(|t| v_pre.contains(t)));
            prop_assert_eq!(align_to_prediction_vocab(&aligned, &v_pre), aligned);
        }
    }
}
