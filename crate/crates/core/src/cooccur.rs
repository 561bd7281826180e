//! Co-occurrence based bias metrics: BA, DBA_G / DBA_O, Ratio and Error.
//!
//! All functions return raw values; reports apply the ×100 scaling.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, CaptionRecord, Corpus};
use crate::masking::{mention_label, word_value, MentionLabel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    TopKFiltered,
    ObjectLabels,
    UserSupplied,
}

/// The label set L: task words or object labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskWordSet {
    words: Vec<String>,
    provenance: Provenance,
}

impl TaskWordSet {
    pub fn new(words: Vec<String>, provenance: Provenance) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::validation("task word set is empty"));
        }
        let distinct: HashSet<&String> = words.iter().collect();
        if distinct.len() != words.len() {
            return Err(Error::validation("task word set has duplicates"));
        }
        Ok(Self { words, provenance })
    }

    /// Rejects sets that overlap the attribute word lists.
    pub fn checked_against(self, corpus: &Corpus) -> Result<Self> {
        let spec = corpus.attribute_spec();
        if let Some(w) = self.words.iter().find(|w| spec.value_of_word(w).is_some()) {
            return Err(Error::validation(format!(
                "task word '{w}' is an attribute word"
            )));
        }
        Ok(self)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// How the attribute value of a caption is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttributeSource {
    /// From attribute words in the caption; mixed mentions are skipped.
    CaptionWords,
    /// From the image annotation.
    Annotation,
}

/// How the labels present for a caption are read.
#[derive(Debug, Clone, Copy)]
pub enum LabelSource<'a> {
    /// Label is a caption token.
    CaptionTokens,
    /// Label is an object annotated on the caption's image.
    ImageObjects,
    /// Label is an object whose surface form appears in the caption.
    CaptionObjects(&'a ObjectLexicon),
}

/// Object label → surface forms, used to detect object mentions in text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ObjectLexicon {
    forms: BTreeMap<String, Vec<Vec<String>>>,
}

impl ObjectLexicon {
    pub fn new(entries: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut forms = BTreeMap::new();
        for (label, surfaces) in entries {
            let mut tokenized = Vec::new();
            for s in surfaces.iter().chain(std::iter::once(&label)) {
                let t = tokenize(s).map_err(|_| {
                    Error::validation(format!("empty surface form for object '{label}'"))
                })?;
                if !tokenized.contains(&t) {
                    tokenized.push(t);
                }
            }
            forms.insert(label, tokenized);
        }
        Ok(Self { forms })
    }

    /// Reads a JSON object `{label: [surface forms]}`.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(serde_json::from_str(&text)?)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.forms.keys().map(String::as_str)
    }

    /// Labels with at least one surface form occurring as a contiguous token
    /// run in `tokens`.
    pub fn mentioned(&self, tokens: &[String]) -> HashSet<&str> {
        self.forms
            .iter()
            .filter(|(_, forms)| {
                forms
                    .iter()
                    .any(|f| tokens.windows(f.len()).any(|w| w == f.as_slice()))
            })
            .map(|(label, _)| label.as_str())
            .collect()
    }
}

/// Picks L for BA: the `top_k` most frequent caption words that co-occur at
/// least `min_per_value` times with every attribute value.
///
/// Attribute words and the mask token are never candidates. `allow_list`,
/// when given, restricts the top-k words (e.g. to nouns, verbs, adjectives
/// and adverbs).
pub fn select_task_words(
    human: &Corpus,
    top_k: usize,
    min_per_value: u64,
    allow_list: Option<&HashSet<String>>,
) -> Result<TaskWordSet> {
    let spec = human.attribute_spec();
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for rec in human.records() {
        for t in &rec.tokens {
            if word_value(t, spec).is_none() && t != spec.mask_token() {
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let candidates: Vec<String> = ranked
        .into_iter()
        .take(top_k)
        .map(|(w, _)| w.to_string())
        .filter(|w| allow_list.is_none_or(|allow| allow.contains(w)))
        .collect();
    if candidates.is_empty() {
        return Err(Error::validation("no candidate task words; corpus is empty or allow-list excludes everything"));
    }

    let all = TaskWordSet::new(candidates, Provenance::TopKFiltered)?;
    let table = count_cooccurrence(human, &all, AttributeSource::CaptionWords, LabelSource::CaptionTokens)?;
    let kept: Vec<String> = all
        .words
        .iter()
        .enumerate()
        .filter(|(l, _)| (0..table.n_values()).all(|a| table.count(a, *l) >= min_per_value))
        .map(|(_, w)| w.clone())
        .collect();
    if kept.is_empty() {
        return Err(Error::validation(format!(
            "no word among the top {top_k} co-occurs {min_per_value} times with every value; \
             lower --min-per-value or raise --top-k"
        )));
    }
    TaskWordSet::new(kept, Provenance::TopKFiltered)
}

/// Counts `c_al`: captions in which attribute value `a` holds and label `l`
/// is present.
///
/// The table also records how many captions carry each attribute value, so
/// occurrence probabilities can be derived from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CooccurrenceTable {
    values: Vec<String>,
    labels: Vec<String>,
    counts: Vec<Vec<u64>>,
    value_totals: Vec<u64>,
    column_sums: Vec<u64>,
    row_sums: Vec<u64>,
}

impl CooccurrenceTable {
    pub fn zeros(values: Vec<String>, labels: Vec<String>) -> Self {
        let (na, nl) = (values.len(), labels.len());
        Self {
            values,
            labels,
            counts: vec![vec![0; nl]; na],
            value_totals: vec![0; na],
            column_sums: vec![0; nl],
            row_sums: vec![0; na],
        }
    }

    /// Builds a table from raw counts; `value_totals[a]` must be at least
    /// every count in row `a`.
    pub fn from_counts(
        values: Vec<String>,
        labels: Vec<String>,
        counts: Vec<Vec<u64>>,
        value_totals: Vec<u64>,
    ) -> Result<Self> {
        let mut t = Self::zeros(values, labels);
        if counts.len() != t.values.len()
            || counts.iter().any(|row| row.len() != t.labels.len())
            || value_totals.len() != t.values.len()
        {
            return Err(Error::validation("co-occurrence table shape mismatch"));
        }
        for (row, total) in counts.iter().zip(&value_totals) {
            if row.iter().any(|c| c > total) {
                return Err(Error::validation(
                    "a co-occurrence count exceeds its value's caption total",
                ));
            }
        }
        t.counts = counts;
        t.value_totals = value_totals;
        t.refresh_marginals();
        Ok(t)
    }

    fn refresh_marginals(&mut self) {
        self.row_sums = self.counts.iter().map(|r| r.iter().sum()).collect();
        self.column_sums = (0..self.labels.len())
            .map(|l| self.counts.iter().map(|r| r[l]).sum())
            .collect();
    }

    fn add_caption(&mut self, a: usize, present: impl IntoIterator<Item = usize>) {
        self.value_totals[a] += 1;
        for l in present {
            self.counts[a][l] += 1;
            self.row_sums[a] += 1;
            self.column_sums[l] += 1;
        }
    }

    /// Element-wise sum of two tables over the same axes.
    pub fn merge(mut self, other: &Self) -> Self {
        debug_assert_eq!(self.values, other.values);
        debug_assert_eq!(self.labels, other.labels);
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
        for (t, o) in self.value_totals.iter_mut().zip(&other.value_totals) {
            *t += o;
        }
        self.refresh_marginals();
        self
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_values(&self) -> usize {
        self.values.len()
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn count(&self, a: usize, l: usize) -> u64 {
        self.counts[a][l]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    /// Captions carrying value `a` (whether or not any label is present).
    pub fn value_total(&self, a: usize) -> u64 {
        self.value_totals[a]
    }

    /// Captions with a defined attribute value.
    pub fn n_captions(&self) -> u64 {
        self.value_totals.iter().sum()
    }

    pub fn column_sum(&self, l: usize) -> u64 {
        self.column_sums[l]
    }

    pub fn row_sum(&self, a: usize) -> u64 {
        self.row_sums[a]
    }

    /// Keeps only the given label columns, in the given order.
    pub fn select_labels(&self, keep: &[usize]) -> Self {
        let labels = keep.iter().map(|&l| self.labels[l].clone()).collect();
        let counts = self
            .counts
            .iter()
            .map(|row| keep.iter().map(|&l| row[l]).collect())
            .collect();
        let mut t = Self {
            values: self.values.clone(),
            labels,
            counts,
            value_totals: self.value_totals.clone(),
            column_sums: Vec::new(),
            row_sums: Vec::new(),
        };
        t.refresh_marginals();
        t
    }
}

fn caption_attribute(rec: &CaptionRecord, corpus: &Corpus, source: AttributeSource) -> Result<Option<usize>> {
    match source {
        AttributeSource::CaptionWords => {
            Ok(mention_label(&rec.tokens, corpus.attribute_spec()).value())
        }
        AttributeSource::Annotation => rec.attribute.map(Some).ok_or_else(|| {
            Error::validation(format!(
                "caption '{}' (image '{}') has no attribute annotation",
                rec.caption_id, rec.image_id
            ))
        }),
    }
}

/// Builds the co-occurrence table of `corpus` over the labels of `task`.
/// Captions are counted in parallel shards and merged.
pub fn count_cooccurrence(
    corpus: &Corpus,
    task: &TaskWordSet,
    attributes: AttributeSource,
    labels: LabelSource<'_>,
) -> Result<CooccurrenceTable> {
    if matches!(labels, LabelSource::ImageObjects) && corpus.object_annotations().is_none() {
        return Err(Error::validation(
            "image object labels requested but the corpus has no objects file",
        ));
    }
    let label_index: HashMap<&str, usize> = task
        .words
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_str(), i))
        .collect();
    let empty = CooccurrenceTable::zeros(
        corpus.attribute_spec().values().to_vec(),
        task.words.clone(),
    );

    corpus
        .records()
        .par_chunks(1024)
        .map(|chunk| -> Result<CooccurrenceTable> {
            let mut table = empty.clone();
            for rec in chunk {
                let Some(a) = caption_attribute(rec, corpus, attributes)? else {
                    continue;
                };
                let mut present: Vec<usize> = match labels {
                    LabelSource::CaptionTokens => rec
                        .tokens
                        .iter()
                        .filter_map(|t| label_index.get(t.as_str()).copied())
                        .collect(),
                    LabelSource::ImageObjects => corpus
                        .object_annotations()
                        .and_then(|o| o.get(&rec.image_id))
                        .into_iter()
                        .flatten()
                        .filter_map(|o| label_index.get(o.as_str()).copied())
                        .collect(),
                    LabelSource::CaptionObjects(lexicon) => lexicon
                        .mentioned(&rec.tokens)
                        .into_iter()
                        .filter_map(|o| label_index.get(o).copied())
                        .collect(),
                };
                present.sort_unstable();
                present.dedup();
                table.add_caption(a, present);
            }
            Ok(table)
        })
        .try_reduce(|| empty.clone(), |x, y| Ok(x.merge(&y)))
}

/// Column-normalised co-occurrence: `b_al = c_al / Σ_a c_al`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasMatrix {
    pub labels: Vec<String>,
    /// `values[a][l]` over the kept labels.
    pub values: Vec<Vec<f64>>,
    /// Labels dropped because nothing co-occurred with them.
    pub excluded: Vec<String>,
}

pub fn bias_of(table: &CooccurrenceTable) -> BiasMatrix {
    let mut labels = Vec::new();
    let mut excluded = Vec::new();
    let mut values = vec![Vec::new(); table.n_values()];
    for l in 0..table.n_labels() {
        let total = table.column_sum(l);
        if total == 0 {
            excluded.push(table.labels[l].clone());
            continue;
        }
        labels.push(table.labels[l].clone());
        for (a, row) in values.iter_mut().enumerate() {
            row.push(table.count(a, l) as f64 / total as f64);
        }
    }
    if !excluded.is_empty() {
        log::warn!("{} label(s) never co-occur with any attribute value", excluded.len());
    }
    BiasMatrix {
        labels,
        values,
        excluded,
    }
}

/// `BA = (1/|L|) Σ_{a,l} (b̂_al − b_al)·1[b_al > 1/|A|]`.
pub fn ba(b_hat: &BiasMatrix, b: &BiasMatrix) -> Result<f64> {
    let n_values = b.values.len();
    if b_hat.values.len() != n_values || b_hat.labels != b.labels {
        return Err(Error::validation(format!(
            "BA shape mismatch: {}×{} vs {}×{}",
            b_hat.values.len(),
            b_hat.labels.len(),
            n_values,
            b.labels.len()
        )));
    }
    if b.labels.is_empty() {
        return Err(Error::validation("BA needs at least one label"));
    }
    let threshold = 1.0 / n_values as f64;
    let mut total = 0.0;
    for (row_hat, row) in b_hat.values.iter().zip(&b.values) {
        for (bh, bv) in row_hat.iter().zip(row) {
            if *bv > threshold {
                total += bh - bv;
            }
        }
    }
    Ok(total / b.labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaOutcome {
    pub value: f64,
    pub n_labels: usize,
    /// Labels with an all-zero column on either side.
    pub excluded: Vec<String>,
}

/// BA between a ground-truth and a generated table over the same labels.
/// Labels without co-occurrences on either side are dropped from both.
pub fn bias_amplification(gt: &CooccurrenceTable, generated: &CooccurrenceTable) -> Result<BaOutcome> {
    if gt.labels != generated.labels || gt.values != generated.values {
        return Err(Error::validation("BA tables are over different axes"));
    }
    let (keep, excluded): (Vec<usize>, Vec<usize>) = (0..gt.n_labels())
        .partition(|&l| gt.column_sum(l) > 0 && generated.column_sum(l) > 0);
    let b = bias_of(&gt.select_labels(&keep));
    let b_hat = bias_of(&generated.select_labels(&keep));
    Ok(BaOutcome {
        value: ba(&b_hat, &b)?,
        n_labels: keep.len(),
        excluded: excluded.into_iter().map(|l| gt.labels[l].clone()).collect(),
    })
}

/// Occurrence probabilities over A × L.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointDistribution {
    p_al: Vec<Vec<f64>>,
    p_a: Vec<f64>,
    p_l: Vec<f64>,
}

impl JointDistribution {
    /// From explicit probabilities. Entries must lie in [0, 1] and `p_a`
    /// must sum to 1.
    pub fn from_parts(p_al: Vec<Vec<f64>>, p_a: Vec<f64>, p_l: Vec<f64>) -> Result<Self> {
        let in_range = |p: &f64| (0.0..=1.0).contains(p);
        if p_al.len() != p_a.len() || p_al.iter().any(|r| r.len() != p_l.len()) {
            return Err(Error::validation("joint distribution shape mismatch"));
        }
        if !(p_a.iter().all(in_range) && p_l.iter().all(in_range) && p_al.iter().flatten().all(in_range)) {
            return Err(Error::validation("probabilities must lie in [0, 1]"));
        }
        let mass: f64 = p_a.iter().sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("p(a) sums to {mass}, not 1")));
        }
        Ok(Self { p_al, p_a, p_l })
    }

    /// Empirical probabilities over the captions counted in `table`.
    pub fn from_table(table: &CooccurrenceTable) -> Result<Self> {
        let n = table.n_captions();
        if n == 0 {
            return Err(Error::validation("no captions with a defined attribute value"));
        }
        let n = n as f64;
        let p_al = table
            .counts
            .iter()
            .map(|row| row.iter().map(|&c| c as f64 / n).collect())
            .collect();
        let p_a = table.value_totals.iter().map(|&c| c as f64 / n).collect();
        let p_l = table.column_sums.iter().map(|&c| c as f64 / n).collect();
        Self::from_parts(p_al, p_a, p_l)
    }

    pub fn n_values(&self) -> usize {
        self.p_a.len()
    }

    pub fn n_labels(&self) -> usize {
        self.p_l.len()
    }

    pub fn joint(&self, a: usize, l: usize) -> f64 {
        self.p_al[a][l]
    }

    pub fn p_a(&self, a: usize) -> f64 {
        self.p_a[a]
    }

    pub fn p_l(&self, l: usize) -> f64 {
        self.p_l[l]
    }

    pub fn a_given_l(&self, a: usize, l: usize) -> Option<f64> {
        (self.p_l[l] > 0.0).then(|| self.p_al[a][l] / self.p_l[l])
    }

    pub fn l_given_a(&self, a: usize, l: usize) -> Option<f64> {
        (self.p_a[a] > 0.0).then(|| self.p_al[a][l] / self.p_a[a])
    }

    fn conditional(&self, a: usize, l: usize, direction: DbaDirection) -> Option<f64> {
        match direction {
            DbaDirection::GenderGivenObject => self.a_given_l(a, l),
            DbaDirection::ObjectGivenGender => self.l_given_a(a, l),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DbaDirection {
    /// DBA_G: Δ = p̂(a|l) − p(a|l); L = image objects, A = caption words.
    GenderGivenObject,
    /// DBA_O: Δ = p̂(l|a) − p(l|a); L = caption objects, A = annotations.
    ObjectGivenGender,
}

/// `y_al = 1[p(a,l) > p(a)p(l)]`, computed from the ground truth only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbaGate(Vec<Vec<bool>>);

impl DbaGate {
    pub fn from_distribution(gt: &JointDistribution) -> Self {
        Self(
            (0..gt.n_values())
                .map(|a| {
                    (0..gt.n_labels())
                        .map(|l| gt.joint(a, l) > gt.p_a(a) * gt.p_l(l))
                        .collect()
                })
                .collect(),
        )
    }

    pub fn get(&self, a: usize, l: usize) -> bool {
        self.0[a][l]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DbaOutcome {
    pub value: f64,
    pub cells_used: usize,
    /// `(a, l)` cells whose conditional was undefined on either side.
    pub skipped: Vec<(usize, usize)>,
}

/// DBA with an explicit gate. Swapping `from` and `to` negates the result.
pub fn dba_with_gate(
    gate: &DbaGate,
    from: &JointDistribution,
    to: &JointDistribution,
    direction: DbaDirection,
) -> Result<DbaOutcome> {
    if from.n_values() != to.n_values() || from.n_labels() != to.n_labels() {
        return Err(Error::validation("DBA distributions have different shapes"));
    }
    let mut total = 0.0;
    let mut used = 0;
    let mut skipped = Vec::new();
    for a in 0..from.n_values() {
        for l in 0..from.n_labels() {
            let (Some(p), Some(p_hat)) = (
                from.conditional(a, l, direction),
                to.conditional(a, l, direction),
            ) else {
                skipped.push((a, l));
                continue;
            };
            let delta = p_hat - p;
            total += if gate.get(a, l) { delta } else { -delta };
            used += 1;
        }
    }
    if !skipped.is_empty() {
        log::warn!("DBA: {} cell(s) with undefined conditionals skipped", skipped.len());
    }
    if used == 0 {
        return Err(Error::validation("DBA: every cell has an undefined conditional"));
    }
    Ok(DbaOutcome {
        value: total / used as f64,
        cells_used: used,
        skipped,
    })
}

/// `DBA = 1/(|L||A|) Σ y_al Δ_al + (1 − y_al)(−Δ_al)`; cells with an
/// undefined conditional are skipped and the divisor shrinks accordingly.
pub fn dba(gt: &JointDistribution, generated: &JointDistribution, direction: DbaDirection) -> Result<DbaOutcome> {
    dba_with_gate(&DbaGate::from_distribution(gt), gt, generated, direction)
}

fn mention_counts(corpus: &Corpus) -> Result<Vec<u64>> {
    if corpus.attribute_spec().n_values() != 2 || !corpus.attribute_spec().has_words() {
        return Err(Error::validation(
            "Ratio/Error need a two-valued attribute with word lists",
        ));
    }
    let mut counts = vec![0u64; 2];
    for rec in corpus.records() {
        if let Some(a) = mention_label(&rec.tokens, corpus.attribute_spec()).value() {
            counts[a] += 1;
        }
    }
    Ok(counts)
}

/// Captions mentioning only the second value over captions mentioning only
/// the first (male / female for the default gender spec).
pub fn ratio(generated: &Corpus) -> Result<f64> {
    let counts = mention_counts(generated)?;
    if counts[0] == 0 {
        return Err(Error::validation(format!(
            "Ratio undefined: no caption mentions only '{}'",
            generated.attribute_spec().values()[0]
        )));
    }
    Ok(counts[1] as f64 / counts[0] as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorOptions {
    /// Count captions mentioning several values as errors instead of
    /// leaving them out.
    pub mixed_as_error: bool,
}

/// Fraction of gendered captions whose mentioned value contradicts the
/// image annotation. Unannotated captions are ignored.
pub fn error_rate(generated: &Corpus, options: ErrorOptions) -> Result<f64> {
    mention_counts(generated)?;
    let (mut wrong, mut total) = (0u64, 0u64);
    for rec in generated.records() {
        let Some(truth) = rec.attribute else { continue };
        match mention_label(&rec.tokens, generated.attribute_spec()) {
            MentionLabel::OnlyValue(a) => {
                total += 1;
                wrong += u64::from(a != truth);
            }
            MentionLabel::Mixed if options.mixed_as_error => {
                total += 1;
                wrong += 1;
            }
            _ => {}
        }
    }
    if total == 0 {
        return Err(Error::validation("Error undefined: no annotated caption mentions a single value"));
    }
    Ok(wrong as f64 / total as f64)
}
