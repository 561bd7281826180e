//! Synthetic caption corpora with a controllable attribute–word correlation.
//!
//! Every image gets one human and one generated caption made of an
//! attribute mention, one marker word and uniformly drawn filler words.
//! With probability θ (per side) the marker belongs to the image's own
//! attribute value, otherwise to another value. Fillers are shared across
//! values, so markers are the only signal and the generating process has
//! closed-form metric values.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, AttributeSpec, CaptionRecord, Corpus, Source};
use crate::masking::WordEntry;
use crate::seeds;
use crate::{Error, Result};

const HUMAN_STREAM: u64 = 0x4855_4d41;
const GENERATED_STREAM: u64 = 0x4745_4e45;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_images: usize,
    pub values: Vec<String>,
    /// Value → words whose presence correlates with that value.
    pub marker_words: BTreeMap<String, Vec<String>>,
    /// Value → attribute words used to mention the subject. Empty lists
    /// produce captions without explicit mentions.
    pub mention_words: BTreeMap<String, Vec<String>>,
    pub theta_human: f64,
    pub theta_generated: f64,
    /// Probability that a caption mentions a wrong attribute value.
    pub mention_error_human: f64,
    pub mention_error_generated: f64,
    pub filler_vocab_size: usize,
    /// Inclusive caption length range, counting mention and marker.
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|w| w.to_string()).collect()
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_images: 4000,
            values: words(&["female", "male"]),
            marker_words: BTreeMap::from([
                ("female".to_string(), words(&["kitchen"])),
                ("male".to_string(), words(&["skateboard"])),
            ]),
            mention_words: BTreeMap::from([
                ("female".to_string(), words(&["woman", "girl", "lady"])),
                ("male".to_string(), words(&["man", "boy", "guy"])),
            ]),
            theta_human: 0.5,
            theta_generated: 0.5,
            mention_error_human: 0.0,
            mention_error_generated: 0.0,
            filler_vocab_size: 60,
            min_len: 6,
            max_len: 10,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn with_thetas(mut self, human: f64, generated: f64) -> Self {
        self.theta_human = human;
        self.theta_generated = generated;
        self
    }

    pub fn with_images(mut self, n: usize) -> Self {
        self.n_images = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    fn markers(&self) -> Result<Vec<&[String]>> {
        self.values
            .iter()
            .map(|v| {
                self.marker_words
                    .get(v)
                    .map(Vec::as_slice)
                    .filter(|m| !m.is_empty())
                    .ok_or_else(|| Error::validation(format!("no marker words for value '{v}'")))
            })
            .collect()
    }

    fn mentions(&self) -> Vec<&[String]> {
        self.values
            .iter()
            .map(|v| self.mention_words.get(v).map(Vec::as_slice).unwrap_or(&[]))
            .collect()
    }

    pub fn filler_words(&self) -> Vec<String> {
        (0..self.filler_vocab_size).map(|i| format!("f{i:03}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n_values = self.values.len();
        if n_values < 2 {
            return Err(Error::validation("synthetic spec needs at least two values"));
        }
        if self.n_images == 0 || self.n_images % n_values != 0 {
            return Err(Error::validation(format!(
                "n_images must be a positive multiple of {n_values} for balanced values"
            )));
        }
        for (name, theta) in [("theta_human", self.theta_human), ("theta_generated", self.theta_generated)] {
            if !(0.5..=1.0).contains(&theta) {
                return Err(Error::validation(format!("{name} = {theta} outside [0.5, 1]")));
            }
        }
        for (name, p) in [
            ("mention_error_human", self.mention_error_human),
            ("mention_error_generated", self.mention_error_generated),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if self.filler_vocab_size == 0 || self.min_len < 3 || self.max_len < self.min_len {
            return Err(Error::validation(
                "need fillers and 3 <= min_len <= max_len (mention + marker + filler)",
            ));
        }
        let markers = self.markers()?;
        let mut seen = BTreeSet::new();
        let fillers: BTreeSet<String> = self.filler_words().into_iter().collect();
        for w in markers.iter().flat_map(|m| m.iter()) {
            if !seen.insert(w.clone()) || fillers.contains(w) {
                return Err(Error::validation(format!(
                    "marker word '{w}' is repeated or collides with a filler"
                )));
            }
        }
        let spec = self.attribute_spec()?;
        for (a, list) in self.mentions().iter().enumerate() {
            for w in *list {
                if spec.value_of_word(w) != Some(a) {
                    return Err(Error::validation(format!(
                        "mention word '{w}' is not a word of value '{}'",
                        self.values[a]
                    )));
                }
            }
        }
        if let Some(w) = seen.iter().find(|w| spec.value_of_word(w).is_some()) {
            return Err(Error::validation(format!("marker '{w}' is an attribute word")));
        }
        Ok(())
    }

    /// The attribute spec of generated corpora: the default gender spec for
    /// `[female, male]`, otherwise one built from the mention words.
    pub fn attribute_spec(&self) -> Result<AttributeSpec> {
        if self.values == words(&["female", "male"]) {
            return Ok(AttributeSpec::gender());
        }
        let lists = self
            .mentions()
            .iter()
            .map(|ws| ws.iter().map(|w| WordEntry::regular(w)).collect())
            .collect();
        AttributeSpec::new("attribute", self.values.clone(), "<attribute>", lists)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Human,
    Generated,
}

/// Human and generated corpora over the same annotated images.
#[derive(Debug, Clone)]
pub struct SynthPair {
    pub human: Corpus,
    pub generated: Corpus,
}

fn pick<'a, T>(rng: &mut impl Rng, xs: &'a [T]) -> &'a T {
    &xs[rng.gen_range(0..xs.len())]
}

fn other_value(rng: &mut impl Rng, own: usize, n: usize) -> usize {
    let k = rng.gen_range(0..n - 1);
    if k >= own {
        k + 1
    } else {
        k
    }
}

struct Drawn {
    tokens: Vec<String>,
    marker: String,
}

fn draw_caption(
    rng: &mut impl Rng,
    spec: &SynthSpec,
    own: usize,
    theta: f64,
    mention_error: f64,
    fillers: &[String],
) -> Drawn {
    let n = spec.values.len();
    let markers = spec.markers().expect("validated");
    let mentions = spec.mentions();
    let len = rng.gen_range(spec.min_len..=spec.max_len);

    let marker_value = if rng.gen_bool(theta) { own } else { other_value(rng, own, n) };
    let marker = pick(rng, markers[marker_value]).clone();
    let mut tokens = vec![marker.clone()];
    let mention_value = if mention_error > 0.0 && rng.gen_bool(mention_error) {
        other_value(rng, own, n)
    } else {
        own
    };
    if !mentions[mention_value].is_empty() {
        tokens.push(pick(rng, mentions[mention_value]).clone());
    }
    while tokens.len() < len {
        tokens.push(pick(rng, fillers).clone());
    }
    tokens.shuffle(rng);
    Drawn { tokens, marker }
}

/// Generates both sides; deterministic in `spec.seed`.
pub fn generate_pair(spec: &SynthSpec) -> Result<SynthPair> {
    spec.validate()?;
    let attr = spec.attribute_spec()?;
    let fillers = spec.filler_words();
    let n_values = spec.values.len();
    let mut human_rng = ChaCha8Rng::seed_from_u64(seeds::derive(spec.seed, 0, HUMAN_STREAM));
    let mut gen_rng = ChaCha8Rng::seed_from_u64(seeds::derive(spec.seed, 0, GENERATED_STREAM));

    let mut human = Vec::with_capacity(spec.n_images);
    let mut generated = Vec::with_capacity(spec.n_images);
    let mut objects = BTreeMap::new();
    for i in 0..spec.n_images {
        let own = i % n_values;
        let image_id = format!("img{i:06}");
        let h = draw_caption(&mut human_rng, spec, own, spec.theta_human, spec.mention_error_human, &fillers);
        let g = draw_caption(
            &mut gen_rng,
            spec,
            own,
            spec.theta_generated,
            spec.mention_error_generated,
            &fillers,
        );
        objects.insert(image_id.clone(), BTreeSet::from([h.marker]));
        human.push(CaptionRecord {
            caption_id: format!("h{i:06}"),
            image_id: image_id.clone(),
            tokens: h.tokens,
            source: Source::Human,
            attribute: Some(own),
        });
        generated.push(CaptionRecord {
            caption_id: format!("g{i:06}"),
            image_id,
            tokens: g.tokens,
            source: Source::Model,
            attribute: Some(own),
        });
    }
    Ok(SynthPair {
        human: Corpus::new(human, attr.clone(), Some(objects.clone()))?,
        generated: Corpus::new(generated, attr, Some(objects))?,
    })
}

pub fn generate(spec: &SynthSpec, side: Side) -> Result<Corpus> {
    let pair = generate_pair(spec)?;
    Ok(match side {
        Side::Human => pair.human,
        Side::Generated => pair.generated,
    })
}

/// Closed-form BA over L = all marker words, unscaled.
///
/// A marker of value `a` has `b_al = θ` on each side, so every marker
/// contributes `θ_gen − θ_human` when `θ_human > 1/|A|` and nothing
/// otherwise (the gate is strict). Assumes faithful mentions and the same
/// number of markers per value.
pub fn expected_ba(spec: &SynthSpec) -> Result<f64> {
    spec.validate()?;
    if spec.mention_error_human > 0.0 || spec.mention_error_generated > 0.0 {
        return Err(Error::validation("closed-form BA assumes mention_error = 0"));
    }
    let markers = spec.markers()?;
    if markers.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(Error::validation("closed-form BA needs equally many markers per value"));
    }
    if spec.mentions().iter().any(|m| m.is_empty()) {
        return Err(Error::validation("closed-form BA needs mention words for every value"));
    }
    let n = spec.values.len() as f64;
    Ok(if spec.theta_human > 1.0 / n {
        spec.theta_generated - spec.theta_human
    } else {
        0.0
    })
}

/// Best achievable accuracy from a caption of the given side.
pub fn bayes_accuracy(spec: &SynthSpec, side: Side) -> f64 {
    let theta = match side {
        Side::Human => spec.theta_human,
        Side::Generated => spec.theta_generated,
    };
    let others = (1.0 - theta) / (spec.values.len() as f64 - 1.0);
    theta.max(others)
}

/// All marker words, value by value; the task word set for BA.
pub fn marker_task_words(spec: &SynthSpec) -> Vec<String> {
    spec.values
        .iter()
        .flat_map(|v| spec.marker_words.get(v).cloned().unwrap_or_default())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub spec: SynthSpec,
    pub task_words: Vec<String>,
    pub expected_ba: Option<f64>,
    pub expected_ba_x100: Option<f64>,
    pub bayes_accuracy_human: f64,
    pub bayes_accuracy_generated: f64,
}

pub fn oracle(spec: &SynthSpec) -> Result<Oracle> {
    let ba = expected_ba(spec).ok();
    Ok(Oracle {
        spec: spec.clone(),
        task_words: marker_task_words(spec),
        expected_ba: ba,
        expected_ba_x100: ba.map(|b| b * 100.0),
        bayes_accuracy_human: bayes_accuracy(spec, Side::Human),
        bayes_accuracy_generated: bayes_accuracy(spec, Side::Generated),
    })
}

/// File names written by [`write_pair`].
pub const HUMAN_FILE: &str = "human_captions.jsonl";
pub const GENERATED_FILE: &str = "generated_captions.jsonl";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const OBJECTS_FILE: &str = "objects.jsonl";
pub const LEXICON_FILE: &str = "object_lexicon.json";
pub const WORDLIST_FILE: &str = "wordlist.tsv";
pub const ORACLE_FILE: &str = "oracle.json";

/// Writes a corpus pair in the ingestion formats plus an oracle file.
pub fn write_pair(spec: &SynthSpec, dir: &Path) -> Result<Oracle> {
    let pair = generate_pair(spec)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    corpus::write_captions(&dir.join(HUMAN_FILE), pair.human.records(), false)?;
    corpus::write_captions(&dir.join(GENERATED_FILE), pair.generated.records(), false)?;
    corpus::write_annotations(&dir.join(ANNOTATIONS_FILE), &pair.human)?;
    if let Some(objects) = pair.human.object_annotations() {
        corpus::write_objects(&dir.join(OBJECTS_FILE), objects)?;
    }
    let lexicon: BTreeMap<String, Vec<String>> = marker_task_words(spec)
        .into_iter()
        .map(|w| (w.clone(), vec![w]))
        .collect();
    let lexicon_text = serde_json::to_string_pretty(&lexicon)?;
    let lexicon_path = dir.join(LEXICON_FILE);
    std::fs::write(&lexicon_path, lexicon_text + "\n").map_err(|e| Error::io(&lexicon_path, e))?;

    let spec_attr = pair.human.attribute_spec();
    let mut wordlist = String::from("# value\tword\t[irregular plural]\n");
    for (value, list) in spec_attr.values().iter().zip(spec_attr.word_lists()) {
        for entry in list {
            wordlist.push_str(&format!("{value}\t{}", entry.word));
            match &entry.plural {
                crate::masking::Plural::Rule => {}
                crate::masking::Plural::Irregular(p) => wordlist.push_str(&format!("\t{p}")),
                crate::masking::Plural::None => wordlist.push_str("\t-"),
            }
            wordlist.push('\n');
        }
    }
    let wl_path = dir.join(WORDLIST_FILE);
    std::fs::write(&wl_path, wordlist).map_err(|e| Error::io(&wl_path, e))?;

    let oracle = oracle(spec)?;
    let oracle_path = dir.join(ORACLE_FILE);
    let text = serde_json::to_string_pretty(&oracle)?;
    std::fs::write(&oracle_path, text + "\n").map_err(|e| Error::io(&oracle_path, e))?;
    Ok(oracle)
}
