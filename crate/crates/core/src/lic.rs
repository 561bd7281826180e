//! Classifier-based bias metrics: SC, Leakage and the LIC family.
//!
//! [`run_protocol`] runs the full pipeline for a human/generated corpus
//! pair once per seed:
//!
//! 1. mask attribute words in both corpora;
//! 2. draw a balanced image split;
//! 3. build `V_pre` from the generated training captions and align the
//!    human captions to it (`y*`);
//! 4. train `f*` on `y*` and `f̂` on the generated captions, both from the
//!    same initialisation and shuffling seeds;
//! 5. score both on the held-out test images.
//!
//! Per-seed results are reduced in seed order into one [`MetricReport`] per
//! metric.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{AttributeClassifier, AttributeScorer, ClassifierConfig, LabeledCaption};
use crate::corpus::{balanced_image_split, CaptionRecord, Corpus};
use crate::hashing;
use crate::masking::mask_tokens;
use crate::seeds;
use crate::vocab::{align_to_prediction_vocab, Vocabulary};
use crate::{Error, Result};

/// Fixed reporting factor for percentage-style metrics.
pub const SCALE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    #[serde(rename = "x100")]
    X100,
    #[serde(rename = "x1")]
    X1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; `None` with a single sample.
    pub std: Option<f64>,
    pub scale: Scale,
    pub config_hash: String,
    pub corpus_hashes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl MetricReport {
    pub fn from_samples(
        name: &str,
        per_seed: Vec<f64>,
        scale: Scale,
        config_hash: String,
        corpus_hashes: Vec<String>,
    ) -> Result<Self> {
        if per_seed.is_empty() {
            return Err(Error::validation(format!("metric '{name}' has no samples")));
        }
        if per_seed.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("metric '{name}' has a non-finite sample")));
        }
        let (mean, std) = mean_std(&per_seed);
        let flags = if std.is_none() {
            vec!["single sample: std undefined".to_string()]
        } else {
            Vec::new()
        };
        Ok(Self {
            name: name.to_string(),
            per_seed,
            mean,
            std,
            scale,
            config_hash,
            corpus_hashes,
            flags,
        })
    }
}

/// Mean and sample (n − 1) standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

/// Fraction of captions whose predicted value equals the label.
pub fn sc_accuracy(scorer: &dyn AttributeScorer, captions: &[LabeledCaption]) -> Result<f64> {
    if captions.is_empty() {
        return Err(Error::validation("cannot compute accuracy over an empty caption set"));
    }
    let mut correct = 0usize;
    for c in captions {
        if scorer.predict(&c.tokens)?.0 == c.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / captions.len() as f64)
}

/// λ: accuracy of an attribute classifier on an evaluation set.
pub fn lambda_of(scorer: &dyn AttributeScorer, captions: &[LabeledCaption]) -> Result<f64> {
    sc_accuracy(scorer, captions)
}

/// `Leakage = λ_M − λ_D`.
pub fn leakage(lambda_m: f64, lambda_d: f64) -> f64 {
    lambda_m - lambda_d
}

/// Leakage from two classifiers evaluated on the same images: `model_set`
/// and `data_set` must carry the same labels in the same order.
pub fn leakage_between(
    f_model: &dyn AttributeScorer,
    model_set: &[LabeledCaption],
    f_data: &dyn AttributeScorer,
    data_set: &[LabeledCaption],
) -> Result<f64> {
    let labels = |s: &[LabeledCaption]| s.iter().map(|c| c.label).collect::<Vec<_>>();
    if labels(model_set) != labels(data_set) {
        return Err(Error::validation(
            "leakage evaluation sets differ in size or labels",
        ));
    }
    Ok(leakage(lambda_of(f_model, model_set)?, lambda_of(f_data, data_set)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LicSide {
    /// `LIC_D`: classifier on vocabulary-aligned human captions.
    Data,
    /// `LIC_M`: classifier on generated captions.
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LicComponent {
    pub side: LicSide,
    /// Already multiplied by [`SCALE`].
    pub value: f64,
    pub config_hash: String,
}

/// Mean over captions of the true class' confidence when it is also the
/// prediction (0 otherwise), ×100.
pub fn lic_component(
    scorer: &dyn AttributeScorer,
    captions: &[LabeledCaption],
    side: LicSide,
    config_hash: &str,
) -> Result<LicComponent> {
    if captions.is_empty() {
        return Err(Error::validation("cannot compute LIC over an empty caption set"));
    }
    let mut total = 0.0;
    for c in captions {
        if c.label >= scorer.n_classes() {
            return Err(Error::validation(format!(
                "label {} outside the classifier's {} classes",
                c.label,
                scorer.n_classes()
            )));
        }
        let (pred, s) = scorer.predict(&c.tokens)?;
        if pred == c.label {
            total += s[c.label];
        }
    }
    Ok(LicComponent {
        side,
        value: SCALE * total / captions.len() as f64,
        config_hash: config_hash.to_string(),
    })
}

/// `LIC = LIC_M − LIC_D`; both sides must come from the same configuration.
pub fn lic(lic_m: &LicComponent, lic_d: &LicComponent) -> Result<f64> {
    if lic_m.side != LicSide::Model || lic_d.side != LicSide::Data {
        return Err(Error::validation("lic() takes (LIC_M, LIC_D) in that order"));
    }
    if lic_m.config_hash != lic_d.config_hash {
        return Err(Error::validation(format!(
            "LIC components computed under different configurations ({} vs {})",
            lic_m.config_hash, lic_d.config_hash
        )));
    }
    Ok(lic_m.value - lic_d.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub n_seeds: usize,
    pub classifier: ClassifierConfig,
    pub test_fraction: f64,
    pub master_seed: u64,
    /// Minimum token count for the classifier and `V_pre` vocabularies.
    pub vocab_min_count: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            n_seeds: 10,
            classifier: ClassifierConfig::default(),
            test_fraction: 0.1,
            master_seed: 0,
            vocab_min_count: 1,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 {
            return Err(Error::validation("n_seeds must be at least 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::validation("test_fraction must lie in (0, 1)"));
        }
        self.classifier.validate()
    }

    pub fn hash(&self) -> String {
        hashing::sha256_json(self)
    }
}

/// Results of one seed of the protocol.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub index: usize,
    pub split_seed: u64,
    pub init_seed: u64,
    pub lic_d: f64,
    pub lic_m: f64,
    /// Accuracy of `f*` on the aligned human test captions (λ_D).
    pub sc_d: f64,
    /// Accuracy of `f̂` on the generated test captions (λ_M).
    pub sc_m: f64,
    pub train_images: usize,
    pub test_images: usize,
    pub v_pre_size: usize,
    pub f_star: Option<AttributeClassifier>,
    pub f_hat: Option<AttributeClassifier>,
}

impl SeedRun {
    pub fn lic(&self) -> f64 {
        self.lic_m - self.lic_d
    }

    pub fn leakage(&self) -> f64 {
        leakage(self.sc_m, self.sc_d)
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    /// `lic`, `lic_m`, `lic_d`, `sc_m`, `sc_d`, `leakage`, in that order.
    pub reports: Vec<MetricReport>,
    pub seeds: Vec<SeedRun>,
}

impl ProtocolOutcome {
    pub fn report(&self, name: &str) -> Option<&MetricReport> {
        self.reports.iter().find(|r| r.name == name)
    }
}

fn masked(corpus: &Corpus) -> Result<Corpus> {
    let spec = corpus.attribute_spec();
    let records = corpus
        .records()
        .iter()
        .map(|r| CaptionRecord {
            tokens: mask_tokens(&r.tokens, spec).0,
            ..r.clone()
        })
        .collect();
    corpus.with_records(records)
}

fn labeled(corpus: &Corpus, map: impl Fn(&[String]) -> Vec<String>) -> Vec<LabeledCaption> {
    corpus
        .records()
        .iter()
        .filter_map(|r| {
            r.attribute.map(|label| LabeledCaption {
                tokens: map(&r.tokens),
                label,
            })
        })
        .collect()
}

fn check_pair(human: &Corpus, generated: &Corpus) -> Result<()> {
    if human.attribute_spec().values() != generated.attribute_spec().values() {
        return Err(Error::validation(
            "human and generated corpora use different attribute values",
        ));
    }
    let gen_images = generated.image_attributes();
    for (image, a) in human.image_attributes() {
        match gen_images.get(image) {
            None => {
                return Err(Error::validation(format!(
                    "generated corpus has no caption for annotated image '{image}'"
                )))
            }
            Some(b) if *b != a => {
                return Err(Error::validation(format!(
                    "image '{image}' annotated differently in the two corpora"
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Runs the LIC / Leakage protocol over `config.n_seeds` seeds (in parallel
/// on the current rayon pool). Any failing seed fails the whole run.
pub fn run_protocol(human: &Corpus, generated: &Corpus, config: &ProtocolConfig) -> Result<ProtocolOutcome> {
    run_protocol_with(human, generated, config, false)
}

/// As [`run_protocol`]; with `keep_models` every [`SeedRun`] carries its
/// trained classifiers.
pub fn run_protocol_with(
    human: &Corpus,
    generated: &Corpus,
    config: &ProtocolConfig,
    keep_models: bool,
) -> Result<ProtocolOutcome> {
    config.validate()?;
    check_pair(human, generated)?;
    let human_m = masked(human)?;
    let generated_m = masked(generated)?;
    let config_hash = config.hash();

    let seeds: Vec<SeedRun> = (0..config.n_seeds)
        .into_par_iter()
        .map(|k| run_seed(&human_m, &generated_m, config, k, keep_models))
        .collect::<Result<_>>()?;

    let corpus_hashes = vec![hashing::corpus_hash(human), hashing::corpus_hash(generated)];
    let metric = |name: &str, f: fn(&SeedRun) -> f64, scale: Scale| {
        MetricReport::from_samples(
            name,
            seeds.iter().map(f).collect(),
            scale,
            config_hash.clone(),
            corpus_hashes.clone(),
        )
    };
    let reports = vec![
        metric("lic", SeedRun::lic, Scale::X100)?,
        metric("lic_m", |s| s.lic_m, Scale::X100)?,
        metric("lic_d", |s| s.lic_d, Scale::X100)?,
        metric("sc_m", |s| s.sc_m, Scale::X1)?,
        metric("sc_d", |s| s.sc_d, Scale::X1)?,
        metric("leakage", SeedRun::leakage, Scale::X1)?,
    ];
    Ok(ProtocolOutcome { reports, seeds })
}

fn run_seed(
    human: &Corpus,
    generated: &Corpus,
    config: &ProtocolConfig,
    k: usize,
    keep_models: bool,
) -> Result<SeedRun> {
    let split_seed = seeds::derive(config.master_seed, k as u64, seeds::SPLIT_STREAM);
    let init_seed = seeds::derive(config.master_seed, k as u64, seeds::INIT_STREAM);
    let split = balanced_image_split(human, config.test_fraction, split_seed)?;
    let human_split = split.apply(human)?;
    let gen_split = split.apply(generated)?;
    let mask = human.attribute_spec().mask_token();
    let n_classes = human.attribute_spec().n_values();

    let v_pre = Vocabulary::build(
        gen_split.train.records().iter().map(|r| r.tokens.as_slice()),
        mask,
        config.vocab_min_count,
    )?;
    let align = |t: &[String]| align_to_prediction_vocab(t, &v_pre);
    let d_train = labeled(&human_split.train, align);
    let d_test = labeled(&human_split.test, align);
    let m_train = labeled(&gen_split.train, <[String]>::to_vec);
    let m_test = labeled(&gen_split.test, <[String]>::to_vec);

    let classifier_config = ClassifierConfig {
        seed: init_seed,
        ..config.classifier.clone()
    };
    let train = |data: &[LabeledCaption]| -> Result<AttributeClassifier> {
        let vocab = Vocabulary::build(
            data.iter().map(|c| c.tokens.as_slice()),
            mask,
            config.vocab_min_count,
        )?;
        let mut clf = AttributeClassifier::new(classifier_config.clone(), vocab, n_classes)?;
        clf.train(data)?;
        Ok(clf)
    };
    let f_star = train(&d_train)?;
    let f_hat = train(&m_train)?;

    let hash = config.hash();
    let lic_d = lic_component(&f_star, &d_test, LicSide::Data, &hash)?;
    let lic_m = lic_component(&f_hat, &m_test, LicSide::Model, &hash)?;
    let images: HashSet<&str> = human_split.train.records().iter().map(|r| r.image_id.as_str()).collect();
    log::debug!(
        "seed {k}: LIC_M {:.2} LIC_D {:.2} (|V_pre| = {})",
        lic_m.value,
        lic_d.value,
        v_pre.len()
    );
    Ok(SeedRun {
        index: k,
        split_seed,
        init_seed,
        lic_d: lic_d.value,
        lic_m: lic_m.value,
        sc_d: sc_accuracy(&f_star, &d_test)?,
        sc_m: sc_accuracy(&f_hat, &m_test)?,
        train_images: images.len(),
        test_images: split.test.len(),
        v_pre_size: v_pre.len(),
        f_star: keep_models.then_some(f_star),
        f_hat: keep_models.then_some(f_hat),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ConstantScorer;
    use approx::assert_abs_diff_eq;
    use std::collections::HashMap;

    /// Returns fixed confidences per caption (keyed by its first token).
    struct Lookup(HashMap<String, Vec<f64>>, usize);

    impl AttributeScorer for Lookup {
        fn n_classes(&self) -> usize {
            self.1
        }
        fn logits(&self, tokens: &[String]) -> Result<Vec<f64>> {
            Ok(self.0[&tokens[0]].iter().map(|p: &f64| p.ln()).collect())
        }
    }

    fn caption(id: &str, label: usize) -> LabeledCaption {
        LabeledCaption { tokens: vec![id.to_string()], label }
    }

    #[test]
    fn sc_examples() {
        let set: Vec<_> = (0..4).map(|i| caption(&format!("c{i}"), i % 2)).collect();
        let perfect = Lookup(
            (0..4).map(|i| (format!("c{i}"), if i % 2 == 0 { vec![0.9, 0.1] } else { vec![0.2, 0.8] })).collect(),
            2,
        );
        assert_eq!(sc_accuracy(&perfect, &set).unwrap(), 1.0);
        assert_eq!(sc_accuracy(&ConstantScorer(vec![1.0, 0.0]), &set).unwrap(), 0.5);

        let three_of_four = Lookup(
            [("c0", vec![0.9, 0.1]), ("c1", vec![0.3, 0.7]), ("c2", vec![0.6, 0.4]), ("c3", vec![0.7, 0.3])]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            2,
        );
        assert_eq!(sc_accuracy(&three_of_four, &set).unwrap(), 0.75);
        assert!(sc_accuracy(&perfect, &[]).is_err());
    }

    #[test]
    fn leakage_examples() {
        assert_abs_diff_eq!(leakage(0.8, 0.7), 0.1, epsilon = 1e-15);
        let a = vec![caption("x", 0)];
        let b = vec![caption("x", 1)];
        let s = ConstantScorer(vec![0.0, 1.0]);
        assert!(leakage_between(&s, &a, &s, &b).is_err());
        assert_eq!(leakage_between(&s, &a, &s, &a).unwrap(), 0.0);
    }

    #[test]
    fn lic_component_examples() {
        let set: Vec<_> = (0..6).map(|i| caption(&format!("c{i}"), i % 3)).collect();
        let saturated = Lookup(
            (0..6).map(|i| {
                let mut s = vec![0.0; 3];
                s[i % 3] = 1.0;
                (format!("c{i}"), s)
            }).collect(),
            3,
        );
        let c = lic_component(&saturated, &set, LicSide::Model, "h").unwrap();
        assert_abs_diff_eq!(c.value, 100.0, epsilon = 1e-9);

        // Always correct, confidence 0.34 on the true class out of three.
        let weak = Lookup(
            (0..6).map(|i| {
                let mut s = vec![0.33; 3];
                s[i % 3] = 0.34;
                (format!("c{i}"), s)
            }).collect(),
            3,
        );
        assert_eq!(sc_accuracy(&weak, &set).unwrap(), 1.0);
        let c = lic_component(&weak, &set, LicSide::Model, "h").unwrap();
        assert_abs_diff_eq!(c.value, 34.0, epsilon = 1e-9);
    }

    #[test]
    fn lic_component_is_capped_by_accuracy() {
        let set: Vec<_> = (0..4).map(|i| caption(&format!("c{i}"), i % 2)).collect();
        let s = Lookup(
            [("c0", vec![0.9, 0.1]), ("c1", vec![0.3, 0.7]), ("c2", vec![0.4, 0.6]), ("c3", vec![0.8, 0.2])]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            2,
        );
        let value = lic_component(&s, &set, LicSide::Data, "h").unwrap().value;
        assert_abs_diff_eq!(value, 100.0 * (0.9 + 0.7) / 4.0, epsilon = 1e-9);
        assert!(value <= 100.0 * sc_accuracy(&s, &set).unwrap());
    }

    #[test]
    fn lic_examples() {
        let comp = |side, value, hash: &str| LicComponent { side, value, config_hash: hash.into() };
        assert_eq!(lic(&comp(LicSide::Model, 40.0, "a"), &comp(LicSide::Data, 40.0, "a")).unwrap(), 0.0);
        assert_abs_diff_eq!(
            lic(&comp(LicSide::Model, 48.5, "a"), &comp(LicSide::Data, 39.3, "a")).unwrap(),
            9.2,
            epsilon = 1e-9
        );
        assert!(lic(&comp(LicSide::Model, 1.0, "a"), &comp(LicSide::Data, 1.0, "b")).is_err());
        assert!(lic(&comp(LicSide::Data, 1.0, "a"), &comp(LicSide::Model, 1.0, "a")).is_err());
    }

    #[test]
    fn mean_std_uses_sample_convention() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert_abs_diff_eq!(s.unwrap(), (5.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, None));
    }

    #[test]
    fn single_sample_report_is_flagged() {
        let r = MetricReport::from_samples("lic", vec![3.0], Scale::X100, "h".into(), vec![]).unwrap();
        assert!(r.std.is_none());
        assert_eq!(r.flags.len(), 1);
        assert!(MetricReport::from_samples("lic", vec![f64::NAN], Scale::X100, "h".into(), vec![]).unwrap_err().is_numerical());
    }
}
