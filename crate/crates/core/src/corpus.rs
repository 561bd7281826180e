//! Caption corpora: tokenization, JSON Lines ingestion and balanced splits.
//!
//! Attribute values are referred to by their index into
//! [`AttributeSpec::values`]; the ordering of that list is significant, it is
//! what breaks argmax ties downstream.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::masking::{self, WordEntry};
use crate::{Error, Result};

/// Lowercase, split on whitespace, strip punctuation from token boundaries.
///
/// Apostrophes and hyphens inside a token survive ("woman's", "t-shirt").
/// Fails when nothing is left.
pub fn tokenize(text: &str) -> Result<Vec<String>> {
    let tokens: Vec<String> = text
        .split_whitespace()
        .filter_map(|raw| {
            let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
            (!trimmed.is_empty()).then(|| trimmed.to_lowercase())
        })
        .collect();
    if tokens.is_empty() {
        return Err(Error::EmptyCaption(None));
    }
    Ok(tokens)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Human,
    Model,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub caption_id: String,
    pub image_id: String,
    pub tokens: Vec<String>,
    pub source: Source,
    /// Index into the corpus' [`AttributeSpec::values`].
    pub attribute: Option<usize>,
}

/// A protected attribute with its value set and maskable word lists.
#[derive(Debug, Clone)]
pub struct AttributeSpec {
    name: String,
    values: Vec<String>,
    mask_token: String,
    word_lists: Vec<Vec<WordEntry>>,
    expanded: Vec<BTreeSet<String>>,
    lookup: HashMap<String, usize>,
}

/// Feminine and masculine word lists for the gender attribute, in word-list
/// file format. Pronouns and adjectives are marked as having no plural.
pub const DEFAULT_GENDER_WORDS: &str = "\
# value\tword\t[irregular plural, '-' for none]
female\twoman\twomen
female\tfemale
female\tlady
female\tmother
female\tgirl
female\taunt
female\twife\twives
female\tactress
female\tprincess
female\twaitress
female\tsister
female\tqueen
female\tpregnant\t-
female\tdaughter
female\tshe\t-
female\ther\t-
female\thers\t-
female\therself\t-
male\tman\tmen
male\tmale
male\tfather
male\tgentleman\tgentlemen
male\tboy
male\tuncle
male\thusband
male\tactor
male\tprince
male\twaiter
male\tson
male\tbrother
male\tguy
male\temperor
male\tdude
male\tcowboy
male\the\t-
male\this\t-
male\thim\t-
male\thimself\t-
";

impl AttributeSpec {
    pub fn new(
        name: impl Into<String>,
        values: Vec<String>,
        mask_token: impl Into<String>,
        word_lists: Vec<Vec<WordEntry>>,
    ) -> Result<Self> {
        let name = name.into();
        let mask_token = mask_token.into();
        if values.len() < 2 {
            return Err(Error::validation(format!(
                "attribute '{name}' needs at least two values, got {}",
                values.len()
            )));
        }
        let distinct: HashSet<&String> = values.iter().collect();
        if distinct.len() != values.len() {
            return Err(Error::validation(format!(
                "attribute '{name}' has duplicate values"
            )));
        }
        if word_lists.len() != values.len() {
            return Err(Error::validation(format!(
                "attribute '{name}': {} word lists for {} values",
                word_lists.len(),
                values.len()
            )));
        }
        // The tokenizer must never be able to produce the mask token.
        if tokenize(&mask_token).ok().as_deref() == Some(std::slice::from_ref(&mask_token)) {
            return Err(Error::validation(format!(
                "mask token '{mask_token}' is a plain word; use something like '<{name}>'"
            )));
        }

        let expanded: Vec<BTreeSet<String>> = word_lists
            .iter()
            .map(|list| masking::expand_plurals(list).into_iter().collect())
            .collect();
        let mut lookup = HashMap::new();
        for (idx, words) in expanded.iter().enumerate() {
            for word in words {
                if let Some(prev) = lookup.insert(word.clone(), idx) {
                    if prev != idx {
                        return Err(Error::validation(format!(
                            "word '{word}' listed for both '{}' and '{}'",
                            values[prev], values[idx]
                        )));
                    }
                }
            }
        }
        if lookup.contains_key(&mask_token) {
            return Err(Error::validation("mask token appears in a word list"));
        }

        Ok(Self {
            name,
            values,
            mask_token,
            word_lists,
            expanded,
            lookup,
        })
    }

    /// Binary gender with the default word lists and the `<gender>` mask token.
    pub fn gender() -> Self {
        Self::from_word_list_text("gender", None, "<gender>", DEFAULT_GENDER_WORDS, Path::new("<builtin>"))
            .expect("builtin gender word list is valid")
    }

    /// An attribute with no maskable words (e.g. skin tone).
    pub fn unmasked(name: &str, values: &[&str], mask_token: &str) -> Result<Self> {
        Self::new(
            name,
            values.iter().map(|v| v.to_string()).collect(),
            mask_token,
            vec![Vec::new(); values.len()],
        )
    }

    /// Builds a spec from word-list text. When `values` is `None` the value
    /// order is the order of first appearance in the file.
    pub fn from_word_list_text(
        name: &str,
        values: Option<Vec<String>>,
        mask_token: &str,
        text: &str,
        origin: &Path,
    ) -> Result<Self> {
        let entries = masking::parse_word_list(text, origin)?;
        let values = match values {
            Some(v) => v,
            None => {
                let mut seen = Vec::<String>::new();
                for (value, _) in &entries {
                    if !seen.contains(value) {
                        seen.push(value.clone());
                    }
                }
                seen
            }
        };
        let mut lists = vec![Vec::new(); values.len()];
        for (value, entry) in entries {
            let idx = values.iter().position(|v| *v == value).ok_or_else(|| {
                Error::validation(format!(
                    "{}: word list names value '{value}' not in {:?}",
                    origin.display(),
                    values
                ))
            })?;
            lists[idx].push(entry);
        }
        Self::new(name, values, mask_token, lists)
    }

    pub fn from_word_list_file(
        name: &str,
        values: Option<Vec<String>>,
        mask_token: &str,
        path: &Path,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_word_list_text(name, values, mask_token, &text, path)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    pub fn n_values(&self) -> usize {
        self.values.len()
    }

    pub fn value_index(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }

    pub fn mask_token(&self) -> &str {
        &self.mask_token
    }

    pub fn word_lists(&self) -> &[Vec<WordEntry>] {
        &self.word_lists
    }

    /// Word lists after plural expansion, one set per value.
    pub fn expanded_words(&self) -> &[BTreeSet<String>] {
        &self.expanded
    }

    pub fn has_words(&self) -> bool {
        !self.lookup.is_empty()
    }

    /// The attribute value whose expanded word list contains `word`.
    pub fn value_of_word(&self, word: &str) -> Option<usize> {
        self.lookup.get(word).copied()
    }
}

/// A set of captions sharing one attribute spec, with optional per-image
/// object labels.
#[derive(Debug, Clone)]
pub struct Corpus {
    records: Vec<CaptionRecord>,
    attribute_spec: AttributeSpec,
    object_annotations: Option<BTreeMap<String, BTreeSet<String>>>,
}

impl Corpus {
    pub fn new(
        records: Vec<CaptionRecord>,
        attribute_spec: AttributeSpec,
        object_annotations: Option<BTreeMap<String, BTreeSet<String>>>,
    ) -> Result<Self> {
        let mut ids = HashSet::new();
        let mut image_values: HashMap<&str, Option<usize>> = HashMap::new();
        for rec in &records {
            if !ids.insert(rec.caption_id.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate caption_id '{}'",
                    rec.caption_id
                )));
            }
            if rec.tokens.is_empty() || rec.tokens.iter().any(|t| t.is_empty()) {
                return Err(Error::EmptyCaption(Some(rec.caption_id.clone())));
            }
            if let Some(a) = rec.attribute {
                if a >= attribute_spec.n_values() {
                    return Err(Error::validation(format!(
                        "caption '{}' has attribute index {a} outside {:?}",
                        rec.caption_id,
                        attribute_spec.values()
                    )));
                }
            }
            match image_values.insert(rec.image_id.as_str(), rec.attribute) {
                Some(prev) if prev != rec.attribute => {
                    return Err(Error::validation(format!(
                        "image '{}' carries two different attribute values",
                        rec.image_id
                    )));
                }
                _ => {}
            }
        }
        Ok(Self {
            records,
            attribute_spec,
            object_annotations,
        })
    }

    pub fn records(&self) -> &[CaptionRecord] {
        &self.records
    }

    pub fn attribute_spec(&self) -> &AttributeSpec {
        &self.attribute_spec
    }

    pub fn object_annotations(&self) -> Option<&BTreeMap<String, BTreeSet<String>>> {
        self.object_annotations.as_ref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Same spec and objects, different records.
    pub fn with_records(&self, records: Vec<CaptionRecord>) -> Result<Self> {
        Self::new(
            records,
            self.attribute_spec.clone(),
            self.object_annotations.clone(),
        )
    }

    /// Image id → attribute value, for every annotated image.
    pub fn image_attributes(&self) -> BTreeMap<&str, usize> {
        self.records
            .iter()
            .filter_map(|r| r.attribute.map(|a| (r.image_id.as_str(), a)))
            .collect()
    }

    /// Number of distinct annotated images per attribute value.
    pub fn image_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.attribute_spec.n_values()];
        for a in self.image_attributes().values() {
            counts[*a] += 1;
        }
        counts
    }
}

/// Counts reported by [`load_corpus`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub loaded: usize,
    /// `(line, diagnostic)` for each rejected caption.
    pub rejected: Vec<(usize, String)>,
}

#[derive(Debug, Deserialize)]
struct CaptionLine {
    caption_id: String,
    image_id: String,
    #[serde(default)]
    caption: Option<String>,
    #[serde(default)]
    tokens: Option<Vec<String>>,
    source: Source,
}

#[derive(Debug, Deserialize)]
struct AnnotationLine {
    image_id: String,
    attribute: String,
}

#[derive(Debug, Deserialize)]
struct ObjectsLine {
    image_id: String,
    objects: Vec<String>,
}

fn read_json_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        out.push((lineno, value));
    }
    Ok(out)
}

/// Parses a captions file into records without attribute values.
///
/// Lines carrying a `tokens` array use it verbatim (lowercased); otherwise
/// `caption` is tokenized. Captions that end up empty are rejected and
/// reported, not dropped silently.
pub fn read_captions(path: &Path) -> Result<(Vec<CaptionRecord>, LoadStats)> {
    let mut stats = LoadStats::default();
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut duplicates = Vec::new();
    for (lineno, line) in read_json_lines::<CaptionLine>(path)? {
        if let Some(first) = seen.insert(line.caption_id.clone(), lineno) {
            duplicates.push(format!("'{}' (lines {first} and {lineno})", line.caption_id));
            continue;
        }
        let tokens = match (&line.tokens, &line.caption) {
            (Some(tokens), _) => {
                let tokens: Vec<String> = tokens
                    .iter()
                    .filter(|t| !t.is_empty())
                    .map(|t| t.to_lowercase())
                    .collect();
                if tokens.is_empty() {
                    Err(Error::EmptyCaption(Some(line.caption_id.clone())))
                } else {
                    Ok(tokens)
                }
            }
            (None, Some(text)) => tokenize(text)
                .map_err(|_| Error::EmptyCaption(Some(line.caption_id.clone()))),
            (None, None) => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: "line has neither `caption` nor `tokens`".into(),
                })
            }
        };
        match tokens {
            Ok(tokens) => {
                records.push(CaptionRecord {
                    caption_id: line.caption_id,
                    image_id: line.image_id,
                    tokens,
                    source: line.source,
                    attribute: None,
                });
                stats.loaded += 1;
            }
            Err(e) => {
                log::warn!("{}:{lineno}: rejected: {e}", path.display());
                stats.rejected.push((lineno, e.to_string()));
            }
        }
    }
    if !duplicates.is_empty() {
        return Err(Error::validation(format!(
            "{}: duplicate caption_id {}",
            path.display(),
            duplicates.join(", ")
        )));
    }
    Ok((records, stats))
}

/// Reads `image_id → attribute index`, validating values against `spec`.
pub fn read_annotations(path: &Path, spec: &AttributeSpec) -> Result<BTreeMap<String, usize>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in read_json_lines::<AnnotationLine>(path)? {
        let value = spec.value_index(&line.attribute).ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            line: lineno,
            message: format!(
                "unknown {} value '{}' (expected one of {:?})",
                spec.name(),
                line.attribute,
                spec.values()
            ),
        })?;
        if let Some(prev) = out.insert(line.image_id.clone(), value) {
            if prev != value {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: format!("image '{}' annotated with two values", line.image_id),
                });
            }
        }
    }
    Ok(out)
}

pub fn read_objects(path: &Path) -> Result<BTreeMap<String, BTreeSet<String>>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (_, line) in read_json_lines::<ObjectsLine>(path)? {
        out.entry(line.image_id)
            .or_default()
            .extend(line.objects.into_iter().map(|o| o.to_lowercase()));
    }
    Ok(out)
}

/// Loads captions, joins attribute annotations by image and validates the
/// result.
pub fn load_corpus(
    captions_path: &Path,
    annotations_path: &Path,
    attribute_spec: &AttributeSpec,
    objects_path: Option<&Path>,
) -> Result<(Corpus, LoadStats)> {
    let (mut records, stats) = read_captions(captions_path)?;
    let annotations = read_annotations(annotations_path, attribute_spec)?;
    let images: HashSet<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
    let missing: Vec<&str> = annotations
        .keys()
        .map(String::as_str)
        .filter(|id| !images.contains(id))
        .collect();
    if !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().take(5).copied().collect();
        return Err(Error::validation(format!(
            "{}: {} annotation(s) reference images with no caption in {}: {}",
            annotations_path.display(),
            missing.len(),
            captions_path.display(),
            shown.join(", ")
        )));
    }
    for rec in &mut records {
        rec.attribute = annotations.get(&rec.image_id).copied();
    }
    let objects = objects_path.map(read_objects).transpose()?;
    if let Some(objects) = &objects {
        let uncovered = records
            .iter()
            .filter(|r| r.attribute.is_some() && !objects.contains_key(&r.image_id))
            .count();
        if uncovered > 0 {
            log::warn!(
                "{}: {uncovered} annotated caption(s) have no object annotation",
                objects_path.unwrap().display()
            );
        }
    }
    let corpus = Corpus::new(records, attribute_spec.clone(), objects)?;
    Ok((corpus, stats))
}

#[derive(Serialize)]
struct CaptionOut<'a> {
    caption_id: &'a str,
    image_id: &'a str,
    caption: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    tokens: Option<&'a [String]>,
    source: Source,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Writes captions as JSON Lines. With `with_tokens` the token array is
/// emitted next to the joined caption text.
pub fn write_captions(path: &Path, records: &[CaptionRecord], with_tokens: bool) -> Result<()> {
    let mut w = create(path)?;
    for rec in records {
        let line = CaptionOut {
            caption_id: &rec.caption_id,
            image_id: &rec.image_id,
            caption: rec.tokens.join(" "),
            tokens: with_tokens.then_some(rec.tokens.as_slice()),
            source: rec.source,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One annotation line per distinct annotated image, in image-id order.
pub fn write_annotations(path: &Path, corpus: &Corpus) -> Result<()> {
    let mut w = create(path)?;
    let values = corpus.attribute_spec().values();
    for (image_id, a) in corpus.image_attributes() {
        let line = serde_json::json!({ "image_id": image_id, "attribute": values[a] });
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_objects(path: &Path, objects: &BTreeMap<String, BTreeSet<String>>) -> Result<()> {
    let mut w = create(path)?;
    for (image_id, labels) in objects {
        let line = serde_json::json!({ "image_id": image_id, "objects": labels });
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Image-level train/test assignment shared by every corpus describing the
/// same images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSplit {
    pub train: BTreeSet<String>,
    pub test: BTreeSet<String>,
    pub seed: u64,
    /// Annotated images left out of both sides to keep train balanced.
    pub excluded: usize,
}

/// A corpus split into disjoint, balanced train and test parts.
#[derive(Debug, Clone)]
pub struct SplitPair {
    pub train: Corpus,
    pub test: Corpus,
    pub seed: u64,
}

/// Draws an image split with the same number of images per attribute value
/// on each side.
///
/// Every value contributes `round(n_min * test_fraction)` test images and the
/// rest of `n_min` to train, where `n_min` is the smallest per-value image
/// count; surplus images of larger groups are excluded from both sides.
pub fn balanced_image_split(corpus: &Corpus, test_fraction: f64, seed: u64) -> Result<ImageSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::validation(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let spec = corpus.attribute_spec();
    let mut groups: Vec<Vec<&str>> = vec![Vec::new(); spec.n_values()];
    // BTreeMap iteration gives a platform-independent starting order.
    for (image, a) in corpus.image_attributes() {
        groups[a].push(image);
    }
    for (value, group) in spec.values().iter().zip(&groups) {
        if group.len() < 2 {
            return Err(Error::validation(format!(
                "attribute value '{value}' has {} image(s); need at least 2",
                group.len()
            )));
        }
    }
    let n_min = groups.iter().map(Vec::len).min().unwrap_or(0);
    let n_test = ((n_min as f64) * test_fraction).round() as usize;
    let n_test = n_test.clamp(1, n_min - 1);
    let n_train = n_min - n_test;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = ImageSplit {
        train: BTreeSet::new(),
        test: BTreeSet::new(),
        seed,
        excluded: 0,
    };
    for group in &mut groups {
        group.shuffle(&mut rng);
        split.test.extend(group[..n_test].iter().map(|s| s.to_string()));
        split
            .train
            .extend(group[n_test..n_test + n_train].iter().map(|s| s.to_string()));
        split.excluded += group.len() - n_min;
    }
    Ok(split)
}

impl ImageSplit {
    /// Restricts `corpus` to the annotated captions of each side.
    pub fn apply(&self, corpus: &Corpus) -> Result<SplitPair> {
        let pick = |images: &BTreeSet<String>| -> Vec<CaptionRecord> {
            corpus
                .records()
                .iter()
                .filter(|r| r.attribute.is_some() && images.contains(&r.image_id))
                .cloned()
                .collect()
        };
        Ok(SplitPair {
            train: corpus.with_records(pick(&self.train))?,
            test: corpus.with_records(pick(&self.test))?,
            seed: self.seed,
        })
    }
}

pub fn balanced_split(corpus: &Corpus, test_fraction: f64, seed: u64) -> Result<SplitPair> {
    balanced_image_split(corpus, test_fraction, seed)?.apply(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("A girl is playing piano.").unwrap(),
            toks(&["a", "girl", "is", "playing", "piano"])
        );
        assert_eq!(
            tokenize("Two men, riding horses!").unwrap(),
            toks(&["two", "men", "riding", "horses"])
        );
        assert!(matches!(tokenize(""), Err(Error::EmptyCaption(None))));
        assert!(tokenize(" ... !! ").is_err());
    }

    #[test]
    fn tokenize_keeps_internal_apostrophes() {
        assert_eq!(
            tokenize("The woman's 'red' t-shirt").unwrap(),
            toks(&["the", "woman's", "red", "t-shirt"])
        );
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(text in "[A-Za-z0-9 ,.!?'\"()-]{1,60}") {
            if let Ok(tokens) = tokenize(&text) {
                prop_assert!(tokens.iter().all(|t| !t.is_empty()));
                prop_assert_eq!(tokenize(&tokens.join(" ")).unwrap(), tokens);
            }
        }
    }

    #[test]
    fn gender_spec_rejects_plain_mask_token() {
        let err = AttributeSpec::from_word_list_text(
            "gender",
            None,
            "gender",
            DEFAULT_GENDER_WORDS,
            Path::new("x"),
        )
        .unwrap_err();
        assert!(err.to_string().contains("plain word"));
    }

    #[test]
    fn overlapping_word_lists_are_rejected() {
        let text = "a\tfoo\nb\tfoos\n";
        assert!(AttributeSpec::from_word_list_text("x", None, "<x>", text, Path::new("w")).is_err());
    }

    fn image_corpus(counts: &[(usize, usize)]) -> Corpus {
        let spec = AttributeSpec::gender();
        let mut records = Vec::new();
        for &(value, n) in counts {
            for i in 0..n {
                records.push(CaptionRecord {
                    caption_id: format!("c{value}-{i}"),
                    image_id: format!("i{value}-{i}"),
                    tokens: toks(&["a", "photo"]),
                    source: Source::Human,
                    attribute: Some(value),
                });
            }
        }
        Corpus::new(records, spec, None).unwrap()
    }

    fn per_value(c: &Corpus) -> Vec<usize> {
        let mut v = vec![0; 2];
        for r in c.records() {
            v[r.attribute.unwrap()] += 1;
        }
        v
    }

    #[test]
    fn balanced_split_even_groups() {
        let c = image_corpus(&[(0, 100), (1, 100)]);
        let s = balanced_split(&c, 0.1, 7).unwrap();
        assert_eq!(per_value(&s.train), vec![90, 90]);
        assert_eq!(per_value(&s.test), vec![10, 10]);
    }

    #[test]
    fn balanced_split_drops_majority_excess() {
        let c = image_corpus(&[(0, 120), (1, 100)]);
        let split = balanced_image_split(&c, 0.1, 7).unwrap();
        assert_eq!(split.excluded, 20);
        let s = split.apply(&c).unwrap();
        assert_eq!(per_value(&s.train), vec![90, 90]);
        assert_eq!(per_value(&s.test), vec![10, 10]);
        assert!(split.train.is_disjoint(&split.test));
    }

    #[test]
    fn balanced_split_is_deterministic() {
        let c = image_corpus(&[(0, 57), (1, 63)]);
        let a = balanced_image_split(&c, 0.2, 42).unwrap();
        let b = balanced_image_split(&c, 0.2, 42).unwrap();
        assert_eq!(a, b);
        let other = balanced_image_split(&c, 0.2, 43).unwrap();
        assert_ne!(a.train, other.train);
    }

    #[test]
    fn balanced_split_requires_every_value() {
        let c = image_corpus(&[(0, 10)]);
        assert!(balanced_split(&c, 0.1, 1).is_err());
    }

    #[test]
    fn corpus_rejects_duplicate_ids() {
        let spec = AttributeSpec::gender();
        let rec = CaptionRecord {
            caption_id: "x".into(),
            image_id: "i".into(),
            tokens: toks(&["a"]),
            source: Source::Human,
            attribute: None,
        };
        assert!(Corpus::new(vec![rec.clone(), rec], spec, None).is_err());
    }
}
