//! The `capbias` command line.
//!
//! Every command reads an optional JSON [`RunConfig`] (`--config`), applies
//! `--set key.path=value` assignments and then the typed flags; flags win.
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input or configuration,
//! 3 numerical failure.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classifier::{load_checkpoint, save_checkpoint, AttributeScorer, EncoderKind};
use crate::cooccur::{
    self, count_cooccurrence, AttributeSource, DbaDirection, ErrorOptions, JointDistribution, LabelSource,
    ObjectLexicon, Provenance as WordProvenance, TaskWordSet,
};
use crate::corpus::{self, AttributeSpec, CaptionRecord, Corpus, DEFAULT_GENDER_WORDS};
use crate::hashing;
use crate::lic::{self, ProtocolConfig, Scale};
use crate::masking::mask_tokens;
use crate::report::{self, Provenance, Report};
use crate::synth::{self, SynthSpec};
use crate::vocab::Vocabulary;
use crate::{Error, Result};

pub const THREADS_ENV: &str = "CAPBIAS_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ba,
    #[value(name = "dba_g")]
    DbaG,
    #[value(name = "dba_o")]
    DbaO,
    Ratio,
    Error,
    Sc,
    Leakage,
    Lic,
}

impl Metric {
    fn needs_human(self) -> bool {
        !matches!(self, Metric::Ratio | Metric::Error)
    }

    fn needs_protocol(self) -> bool {
        matches!(self, Metric::Sc | Metric::Leakage | Metric::Lic)
    }
}

/// Everything a metrics run needs. Relative paths in a config file are
/// resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub human_captions: Option<PathBuf>,
    pub generated_captions: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub objects: Option<PathBuf>,
    pub wordlist: Option<PathBuf>,
    pub object_lexicon: Option<PathBuf>,
    /// One BA task word per line; replaces top-k selection.
    pub task_words: Option<PathBuf>,
    /// Words allowed into top-k selection, one per line.
    pub allow_list: Option<PathBuf>,
    pub attribute: String,
    pub values: Option<Vec<String>>,
    pub mask_token: Option<String>,
    pub metrics: Vec<Metric>,
    pub top_k: usize,
    pub min_per_value: u64,
    pub mixed_as_error: bool,
    pub protocol: ProtocolConfig,
    pub seed: u64,
    pub label: String,
    pub out: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            human_captions: None,
            generated_captions: None,
            annotations: None,
            objects: None,
            wordlist: None,
            object_lexicon: None,
            task_words: None,
            allow_list: None,
            attribute: "gender".to_string(),
            values: None,
            mask_token: None,
            metrics: Vec::new(),
            top_k: 1000,
            min_per_value: 100,
            mixed_as_error: false,
            protocol: ProtocolConfig::default(),
            seed: 0,
            label: "model".to_string(),
            out: None,
            table: None,
            checkpoint_dir: None,
        }
    }
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str, flag: &str, metric: Metric) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| {
        let name = serde_json::to_value(metric).ok().and_then(|v| v.as_str().map(String::from));
        Error::validation(format!(
            "metric '{}' requires {what} ({flag})",
            name.unwrap_or_default()
        ))
    })
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    fn paths_mut(&mut self) -> [&mut Option<PathBuf>; 11] {
        [
            &mut self.human_captions,
            &mut self.generated_captions,
            &mut self.annotations,
            &mut self.objects,
            &mut self.wordlist,
            &mut self.object_lexicon,
            &mut self.task_words,
            &mut self.allow_list,
            &mut self.out,
            &mut self.table,
            &mut self.checkpoint_dir,
        ]
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in self.paths_mut().into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Hash of every setting that can change a number: paths are left out
    /// because input contents are hashed separately.
    pub fn config_hash(&self) -> String {
        let mut copy = self.clone();
        for p in copy.paths_mut() {
            *p = None;
        }
        copy.label.clear();
        copy.protocol.master_seed = self.seed;
        hashing::sha256_json(&copy)
    }

    pub fn attribute_spec(&self) -> Result<AttributeSpec> {
        let mask = self
            .mask_token
            .clone()
            .unwrap_or_else(|| format!("<{}>", self.attribute));
        match &self.wordlist {
            Some(path) => AttributeSpec::from_word_list_file(&self.attribute, self.values.clone(), &mask, path),
            None if self.attribute == "gender" => AttributeSpec::from_word_list_text(
                "gender",
                self.values.clone(),
                &mask,
                DEFAULT_GENDER_WORDS,
                Path::new("<builtin>"),
            ),
            None => {
                let values = self.values.as_ref().ok_or_else(|| {
                    Error::validation(format!(
                        "attribute '{}' has no word list; pass --wordlist or --values",
                        self.attribute
                    ))
                })?;
                let values: Vec<&str> = values.iter().map(String::as_str).collect();
                AttributeSpec::unmasked(&self.attribute, &values, &mask)
            }
        }
    }

    /// Checks that every selected metric has its inputs, before any work.
    pub fn validate(&self) -> Result<()> {
        if self.metrics.is_empty() {
            return Err(Error::validation("no metrics selected"));
        }
        for &m in &self.metrics {
            require(&self.generated_captions, "generated captions", "--generated", m)?;
            require(&self.annotations, "image attribute annotations", "--annotations", m)?;
            if m.needs_human() {
                require(&self.human_captions, "human captions", "--human", m)?;
            }
            match m {
                Metric::DbaG => {
                    require(&self.objects, "an objects file with image object annotations", "--objects", m)?;
                }
                Metric::DbaO => {
                    require(&self.object_lexicon, "an object lexicon", "--object-lexicon", m)?;
                }
                _ => {}
            }
        }
        if self.metrics.iter().any(|m| m.needs_protocol()) {
            self.protocol.validate()?;
        }
        Ok(())
    }
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hashing::sha256_bytes(&bytes))
}

fn read_word_file(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in text.lines().map(str::trim) {
        if !line.is_empty() && !line.starts_with('#') && !out.iter().any(|w| w == line) {
            out.push(line.to_lowercase());
        }
    }
    Ok(out)
}

fn load(cfg: &RunConfig, captions: &Path, spec: &AttributeSpec) -> Result<Corpus> {
    let annotations = cfg.annotations.as_deref().expect("validated");
    let (corpus, stats) = corpus::load_corpus(captions, annotations, spec, cfg.objects.as_deref())?;
    log::info!(
        "{}: {} caption(s) loaded, {} rejected",
        captions.display(),
        stats.loaded,
        stats.rejected.len()
    );
    for (line, msg) in &stats.rejected {
        log::warn!("{}:{line}: {msg}", captions.display());
    }
    Ok(corpus)
}

fn ba_words(cfg: &RunConfig, human: &Corpus) -> Result<TaskWordSet> {
    match &cfg.task_words {
        Some(path) => TaskWordSet::new(read_word_file(path)?, WordProvenance::UserSupplied)?.checked_against(human),
        None => {
            let allow = cfg
                .allow_list
                .as_deref()
                .map(read_word_file)
                .transpose()?
                .map(|ws| ws.into_iter().collect::<HashSet<_>>());
            cooccur::select_task_words(human, cfg.top_k, cfg.min_per_value, allow.as_ref())
        }
    }
}

fn dba_metric(
    human: &Corpus,
    generated: &Corpus,
    labels: TaskWordSet,
    attributes: AttributeSource,
    source: LabelSource<'_>,
    direction: DbaDirection,
) -> Result<(f64, Value)> {
    let gt = count_cooccurrence(human, &labels, attributes, source)?;
    let gen = count_cooccurrence(generated, &labels, attributes, source)?;
    let out = cooccur::dba(
        &JointDistribution::from_table(&gt)?,
        &JointDistribution::from_table(&gen)?,
        direction,
    )?;
    let skipped: Vec<String> = out
        .skipped
        .iter()
        .map(|&(a, l)| format!("{}/{}", gt.values()[a], gt.labels()[l]))
        .collect();
    let details = serde_json::json!({
        "n_labels": labels.len(),
        "cells_used": out.cells_used,
        "skipped_cells": skipped,
    });
    Ok((out.value, details))
}

/// Computes every metric selected in `cfg` and assembles the report. Nothing
/// is written here, so a failure leaves no output behind.
pub fn compute_report(cfg: &RunConfig) -> Result<Report> {
    cfg.validate()?;
    let spec = cfg.attribute_spec()?;
    let config_hash = cfg.config_hash();
    let metrics: Vec<Metric> = {
        let mut m = cfg.metrics.clone();
        m.sort();
        m.dedup();
        m
    };

    let mut inputs = BTreeMap::new();
    for (role, path) in [
        ("human_captions", &cfg.human_captions),
        ("generated_captions", &cfg.generated_captions),
        ("annotations", &cfg.annotations),
        ("objects", &cfg.objects),
        ("wordlist", &cfg.wordlist),
        ("object_lexicon", &cfg.object_lexicon),
        ("task_words", &cfg.task_words),
        ("allow_list", &cfg.allow_list),
    ] {
        if let Some(p) = path {
            inputs.insert(role.to_string(), file_hash(p)?);
        }
    }

    let generated = load(cfg, cfg.generated_captions.as_deref().expect("validated"), &spec)?;
    let human = match (metrics.iter().any(|m| m.needs_human()), &cfg.human_captions) {
        (true, Some(p)) => Some(load(cfg, p, &spec)?),
        _ => None,
    };
    let mut corpus_hashes = Vec::new();
    if let Some(h) = &human {
        corpus_hashes.push(hashing::corpus_hash(h));
    }
    corpus_hashes.push(hashing::corpus_hash(&generated));

    let mut report = Report::new(
        cfg.label.clone(),
        Provenance {
            config_hash: config_hash.clone(),
            inputs,
            master_seed: cfg.seed,
            details: BTreeMap::new(),
        },
    );
    let single = |name: &str, value: f64, scale: Scale| {
        report::single_value(name, value, scale, &config_hash, corpus_hashes.clone())
    };

    for &metric in &metrics {
        match metric {
            Metric::Ba => {
                let human = human.as_ref().expect("validated");
                let words = ba_words(cfg, human)?;
                let gt = count_cooccurrence(human, &words, AttributeSource::CaptionWords, LabelSource::CaptionTokens)?;
                let gen =
                    count_cooccurrence(&generated, &words, AttributeSource::CaptionWords, LabelSource::CaptionTokens)?;
                let out = cooccur::bias_amplification(&gt, &gen)?;
                if !out.excluded.is_empty() {
                    report.warnings.push(format!(
                        "ba: {} word(s) without co-occurrences excluded",
                        out.excluded.len()
                    ));
                }
                report.metrics.push(single("ba", out.value * lic::SCALE, Scale::X100)?);
                report.provenance.details.insert(
                    "ba".into(),
                    serde_json::json!({
                        "task_words": words.words(),
                        "task_word_source": words.provenance(),
                        "n_labels": out.n_labels,
                        "excluded": out.excluded,
                    }),
                );
            }
            Metric::DbaG => {
                let human = human.as_ref().expect("validated");
                let labels: Vec<String> = human
                    .object_annotations()
                    .expect("validated")
                    .values()
                    .flatten()
                    .cloned()
                    .collect::<std::collections::BTreeSet<_>>()
                    .into_iter()
                    .collect();
                let labels = TaskWordSet::new(labels, WordProvenance::ObjectLabels)?;
                let (value, details) = dba_metric(
                    human,
                    &generated,
                    labels,
                    AttributeSource::CaptionWords,
                    LabelSource::ImageObjects,
                    DbaDirection::GenderGivenObject,
                )?;
                report.metrics.push(single("dba_g", value * lic::SCALE, Scale::X100)?);
                report.provenance.details.insert("dba_g".into(), details);
            }
            Metric::DbaO => {
                let human = human.as_ref().expect("validated");
                let lexicon = ObjectLexicon::from_json_file(cfg.object_lexicon.as_deref().expect("validated"))?;
                let labels = TaskWordSet::new(lexicon.labels().map(String::from).collect(), WordProvenance::ObjectLabels)?;
                let (value, details) = dba_metric(
                    human,
                    &generated,
                    labels,
                    AttributeSource::Annotation,
                    LabelSource::CaptionObjects(&lexicon),
                    DbaDirection::ObjectGivenGender,
                )?;
                report.metrics.push(single("dba_o", value * lic::SCALE, Scale::X100)?);
                report.provenance.details.insert("dba_o".into(), details);
            }
            Metric::Ratio => {
                report.metrics.push(single("ratio", cooccur::ratio(&generated)?, Scale::X1)?);
            }
            Metric::Error => {
                let options = ErrorOptions {
                    mixed_as_error: cfg.mixed_as_error,
                };
                let value = cooccur::error_rate(&generated, options)? * lic::SCALE;
                report.metrics.push(single("error", value, Scale::X100)?);
            }
            Metric::Sc | Metric::Leakage | Metric::Lic => {}
        }
    }

    if metrics.iter().any(|m| m.needs_protocol()) {
        let human = human.as_ref().expect("validated");
        let mut protocol = cfg.protocol.clone();
        protocol.master_seed = cfg.seed;
        let outcome = lic::run_protocol_with(human, &generated, &protocol, cfg.checkpoint_dir.is_some())?;
        let mut wanted = Vec::new();
        if metrics.contains(&Metric::Lic) {
            wanted.extend(["lic", "lic_m", "lic_d"]);
        }
        if metrics.contains(&Metric::Sc) {
            wanted.extend(["sc_m", "sc_d"]);
        }
        if metrics.contains(&Metric::Leakage) {
            wanted.push("leakage");
        }
        for name in wanted {
            let r = outcome.report(name).expect("protocol reports every metric");
            report.metrics.push(r.clone());
        }
        if protocol.n_seeds == 1 {
            report.warnings.push("single seed: standard deviations are undefined".into());
        }
        report.provenance.details.insert(
            "protocol".into(),
            serde_json::json!({
                "config": protocol,
                "seeds": outcome.seeds.iter().map(|s| serde_json::json!({
                    "index": s.index,
                    "split_seed": s.split_seed,
                    "init_seed": s.init_seed,
                    "train_images": s.train_images,
                    "test_images": s.test_images,
                    "v_pre_size": s.v_pre_size,
                })).collect::<Vec<_>>(),
            }),
        );
        if let Some(dir) = &cfg.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let values = spec.values();
            for s in &outcome.seeds {
                if let Some(f) = &s.f_hat {
                    save_checkpoint(&dir.join(format!("seed{}_f_hat.json", s.index)), f, values)?;
                }
                if let Some(f) = &s.f_star {
                    save_checkpoint(&dir.join(format!("seed{}_f_star.json", s.index)), f, values)?;
                }
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Parser)]
#[command(name = "capbias", version, about = "Bias metrics for image caption corpora")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for splits, initialisation and synthetic data.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file (directory for `synth`); stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Only print errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replace attribute words in a captions file with the mask token.
    Mask(MaskArgs),
    /// Build a classifier vocabulary from masked captions.
    Vocab(VocabArgs),
    /// Bias amplification over task words.
    Ba(InputArgs),
    /// Directional bias amplification (DBA_G and/or DBA_O).
    Dba(DbaArgs),
    /// Gender ratio and gender misclassification error of generated captions.
    RatioError(InputArgs),
    /// LIC, LIC_M and LIC_D via the classifier protocol.
    Lic(LicArgs),
    /// Leakage via the classifier protocol.
    Leakage(InputArgs),
    /// Write a synthetic human/generated corpus pair with its oracle.
    Synth(SynthArgs),
    /// Per-caption attribute confidences from a saved classifier.
    Score(ScoreArgs),
    /// Compute any metric selection, or render saved reports as a table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct AttributeArgs {
    /// Attribute word list (TAB separated `value word [plural]`).
    #[arg(long)]
    pub wordlist: Option<PathBuf>,
    #[arg(long)]
    pub attribute: Option<String>,
    /// Attribute values in order, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<String>>,
    #[arg(long)]
    pub mask_token: Option<String>,
    /// Override any config value, e.g. `protocol.classifier.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct InputArgs {
    #[command(flatten)]
    pub attribute: AttributeArgs,
    #[arg(long)]
    pub human: Option<PathBuf>,
    #[arg(long)]
    pub generated: Option<PathBuf>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub objects: Option<PathBuf>,
    #[arg(long)]
    pub object_lexicon: Option<PathBuf>,
    #[arg(long)]
    pub task_words: Option<PathBuf>,
    #[arg(long)]
    pub allow_list: Option<PathBuf>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub min_per_value: Option<u64>,
    /// Count captions mentioning several values as errors.
    #[arg(long)]
    pub mixed_as_error: bool,
    /// Row label in the text table.
    #[arg(long)]
    pub label: Option<String>,
    /// Also write the text table here.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub n_seeds: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long, value_enum)]
    pub encoder: Option<Encoder>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Encoder {
    BagMean,
    BiRecurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DbaWhich {
    G,
    O,
    Both,
}

#[derive(Debug, Args)]
pub struct DbaArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    #[arg(long, value_enum, default_value = "both")]
    pub direction: DbaWhich,
}

#[derive(Debug, Args)]
pub struct LicArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    /// Save every trained classifier here.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    /// Metrics to compute, comma separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub metrics: Option<Vec<Metric>>,
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Render these saved reports as a table instead of computing.
    #[arg(long, num_args = 1..)]
    pub from: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[command(flatten)]
    pub attribute: AttributeArgs,
    /// Captions JSON Lines file.
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct VocabArgs {
    #[command(flatten)]
    pub attribute: AttributeArgs,
    /// Captions JSON Lines file; masked before counting.
    pub input: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON synthetic spec; defaults apply to missing fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n_images: Option<usize>,
    #[arg(long)]
    pub theta_human: Option<f64>,
    #[arg(long)]
    pub theta_generated: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub attribute: AttributeArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Captions JSON Lines file to score.
    pub captions: PathBuf,
    /// Expected vocabulary hash of the checkpoint.
    #[arg(long)]
    pub vocab_hash: Option<String>,
    /// Vocabulary file whose hash the checkpoint must match.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Score captions as given, without masking.
    #[arg(long)]
    pub no_mask: bool,
}

fn parse_assignment(raw: &str) -> Result<(Vec<&str>, Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Error::validation(format!("--set expects KEY=VALUE, got '{raw}'")))?;
    let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    Ok((key.split('.').collect(), value))
}

fn apply_assignment(root: &mut Value, path: &[&str], value: Value) -> Result<()> {
    let mut node = root;
    for (i, key) in path.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::validation(format!("--set: '{}' is not an object", path[..i].join("."))))?;
        if i + 1 == path.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::validation("--set: empty key"))
}

fn base_config(cli: &Cli, attr: &AttributeArgs) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_json_file(path)?,
        None => RunConfig::default(),
    };
    if !attr.set.is_empty() {
        let mut value = serde_json::to_value(&cfg)?;
        for raw in &attr.set {
            let (path, v) = parse_assignment(raw)?;
            apply_assignment(&mut value, &path, v)?;
        }
        cfg = serde_json::from_value(value)
            .map_err(|e| Error::validation(format!("--set produced an invalid config: {e}")))?;
    }
    if let Some(p) = &attr.wordlist {
        cfg.wordlist = Some(p.clone());
    }
    if let Some(a) = &attr.attribute {
        cfg.attribute = a.clone();
    }
    if let Some(v) = &attr.values {
        cfg.values = Some(v.clone());
    }
    if let Some(m) = &attr.mask_token {
        cfg.mask_token = Some(m.clone());
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn run_config(cli: &Cli, args: &InputArgs) -> Result<RunConfig> {
    let mut cfg = base_config(cli, &args.attribute)?;
    let set_path = |slot: &mut Option<PathBuf>, flag: &Option<PathBuf>| {
        if let Some(p) = flag {
            *slot = Some(p.clone());
        }
    };
    set_path(&mut cfg.human_captions, &args.human);
    set_path(&mut cfg.generated_captions, &args.generated);
    set_path(&mut cfg.annotations, &args.annotations);
    set_path(&mut cfg.objects, &args.objects);
    set_path(&mut cfg.object_lexicon, &args.object_lexicon);
    set_path(&mut cfg.task_words, &args.task_words);
    set_path(&mut cfg.allow_list, &args.allow_list);
    set_path(&mut cfg.table, &args.table);
    if let Some(v) = args.top_k {
        cfg.top_k = v;
    }
    if let Some(v) = args.min_per_value {
        cfg.min_per_value = v;
    }
    if args.mixed_as_error {
        cfg.mixed_as_error = true;
    }
    if let Some(v) = &args.label {
        cfg.label = v.clone();
    }
    let p = &mut cfg.protocol;
    if let Some(v) = args.n_seeds {
        p.n_seeds = v;
    }
    if let Some(v) = args.test_fraction {
        p.test_fraction = v;
    }
    let c = &mut p.classifier;
    if let Some(v) = args.epochs {
        c.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        c.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = args.embed_dim {
        c.embed_dim = v;
    }
    if let Some(v) = args.hidden_dim {
        c.hidden_dim = v;
    }
    if let Some(v) = args.encoder {
        c.encoder_kind = match v {
            Encoder::BagMean => EncoderKind::BagMean,
            Encoder::BiRecurrent => EncoderKind::BiRecurrent,
        };
    }
    Ok(cfg)
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            report::write_atomic(path, contents)
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(contents.as_bytes())
                .map_err(|e| Error::io(Path::new("<stdout>"), e))
        }
    }
}

fn metrics_command(cli: &Cli, mut cfg: RunConfig, metrics: Vec<Metric>) -> Result<()> {
    cfg.metrics = metrics;
    let report = compute_report(&cfg)?;
    let table = report::text_table(std::slice::from_ref(&report));
    if let Some(path) = &cfg.table {
        emit(Some(path), &table)?;
    }
    emit(cfg.out.as_deref(), &report.to_json()?)?;
    if cfg.out.is_some() && !cli.quiet {
        print!("{table}");
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok(())
}

fn masked_records(records: Vec<CaptionRecord>, spec: &AttributeSpec) -> (Vec<CaptionRecord>, usize) {
    let mut total = 0;
    let records = records
        .into_iter()
        .map(|r| {
            let (tokens, n) = mask_tokens(&r.tokens, spec);
            total += n;
            CaptionRecord { tokens, ..r }
        })
        .collect();
    (records, total)
}

fn read_captions_logged(path: &Path) -> Result<Vec<CaptionRecord>> {
    let (records, stats) = corpus::read_captions(path)?;
    for (line, msg) in &stats.rejected {
        log::warn!("{}:{line}: {msg}", path.display());
    }
    Ok(records)
}

fn cmd_mask(cli: &Cli, args: &MaskArgs) -> Result<()> {
    let cfg = base_config(cli, &args.attribute)?;
    let spec = cfg.attribute_spec()?;
    let (records, n_masked) = masked_records(read_captions_logged(&args.input)?, &spec);
    let mut text = Vec::new();
    for r in &records {
        let line = serde_json::json!({
            "caption_id": r.caption_id,
            "image_id": r.image_id,
            "caption": r.tokens.join(" "),
            "tokens": r.tokens,
            "source": r.source,
        });
        serde_json::to_writer(&mut text, &line)?;
        text.push(b'\n');
    }
    emit(cfg.out.as_deref(), &String::from_utf8(text).expect("json is utf-8"))?;
    if !cli.quiet {
        eprintln!("masked {n_masked} attribute word(s) in {} caption(s)", records.len());
    }
    Ok(())
}

fn cmd_vocab(cli: &Cli, args: &VocabArgs) -> Result<()> {
    let cfg = base_config(cli, &args.attribute)?;
    let spec = cfg.attribute_spec()?;
    let (records, _) = masked_records(read_captions_logged(&args.input)?, &spec);
    let vocab = Vocabulary::build(records.iter().map(|r| r.tokens.as_slice()), spec.mask_token(), args.min_count)?;
    emit(cfg.out.as_deref(), &(serde_json::to_string_pretty(&vocab.to_json())? + "\n"))?;
    if !cli.quiet {
        eprintln!("vocabulary: {} tokens, sha256 {}", vocab.len(), vocab.hash());
    }
    Ok(())
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(p) => SynthSpec::from_json_file(p)?,
        None => SynthSpec::default(),
    };
    if let Some(n) = args.n_images {
        spec.n_images = n;
    }
    if let Some(t) = args.theta_human {
        spec.theta_human = t;
    }
    if let Some(t) = args.theta_generated {
        spec.theta_generated = t;
    }
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let dir = cli
        .out
        .clone()
        .ok_or_else(|| Error::validation("synth needs --out DIR"))?;
    let oracle = synth::write_pair(&spec, &dir)?;
    if !cli.quiet {
        eprintln!(
            "wrote {} images to {} (expected BA {})",
            spec.n_images,
            dir.display(),
            oracle
                .expected_ba
                .map_or("n/a".to_string(), |b| format!("{b:.4}"))
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct ScoreLine {
    caption_id: String,
    predicted: String,
    scores: BTreeMap<String, f64>,
}

fn cmd_score(cli: &Cli, args: &ScoreArgs) -> Result<()> {
    let cfg = base_config(cli, &args.attribute)?;
    let expected = match (&args.vocab_hash, &args.vocab) {
        (Some(h), _) => Some(h.clone()),
        (None, Some(p)) => Some(Vocabulary::read_json(p)?.hash()),
        (None, None) => None,
    };
    let (clf, values) = load_checkpoint(&args.checkpoint, expected.as_deref())?;
    let mut records = read_captions_logged(&args.captions)?;
    if !args.no_mask {
        let spec = cfg.attribute_spec()?;
        if spec.mask_token() != clf.vocabulary().mask_token() {
            return Err(Error::validation(format!(
                "mask token '{}' differs from the checkpoint's '{}'",
                spec.mask_token(),
                clf.vocabulary().mask_token()
            )));
        }
        records = masked_records(records, &spec).0;
    }
    let mut scored = Vec::with_capacity(records.len());
    for r in records {
        let (predicted, conf) = clf.predict(&r.tokens)?;
        let top = conf[predicted];
        scored.push((
            top,
            ScoreLine {
                caption_id: r.caption_id,
                predicted: values[predicted].clone(),
                scores: values.iter().cloned().zip(conf).collect(),
            },
        ));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.caption_id.cmp(&b.1.caption_id)));
    let mut text = Vec::new();
    for (_, line) in &scored {
        serde_json::to_writer(&mut text, line)?;
        text.push(b'\n');
    }
    emit(cfg.out.as_deref(), &String::from_utf8(text).expect("json is utf-8"))
}

fn cmd_report(cli: &Cli, args: &ReportArgs) -> Result<()> {
    if !args.from.is_empty() {
        let reports = args
            .from
            .iter()
            .map(|p| Report::read_json(p))
            .collect::<Result<Vec<_>>>()?;
        return emit(cli.out.as_deref(), &report::text_table(&reports));
    }
    let mut cfg = run_config(cli, &args.inputs)?;
    if let Some(dir) = &args.checkpoint_dir {
        cfg.checkpoint_dir = Some(dir.clone());
    }
    let metrics = args.metrics.clone().unwrap_or_else(|| cfg.metrics.clone());
    metrics_command(cli, cfg, metrics)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Mask(a) => cmd_mask(cli, a),
        Command::Vocab(a) => cmd_vocab(cli, a),
        Command::Ba(a) => metrics_command(cli, run_config(cli, a)?, vec![Metric::Ba]),
        Command::Dba(a) => {
            let metrics = match a.direction {
                DbaWhich::G => vec![Metric::DbaG],
                DbaWhich::O => vec![Metric::DbaO],
                DbaWhich::Both => vec![Metric::DbaG, Metric::DbaO],
            };
            metrics_command(cli, run_config(cli, &a.inputs)?, metrics)
        }
        Command::RatioError(a) => metrics_command(cli, run_config(cli, a)?, vec![Metric::Ratio, Metric::Error]),
        Command::Lic(a) => {
            let mut cfg = run_config(cli, &a.inputs)?;
            if let Some(dir) = &a.checkpoint_dir {
                cfg.checkpoint_dir = Some(dir.clone());
            }
            metrics_command(cli, cfg, vec![Metric::Lic])
        }
        Command::Leakage(a) => metrics_command(cli, run_config(cli, a)?, vec![Metric::Leakage, Metric::Sc]),
        Command::Synth(a) => cmd_synth(cli, a),
        Command::Score(a) => cmd_score(cli, a),
        Command::Report(a) => cmd_report(cli, a),
    }
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => 1,
        Error::Numerical(_) => 3,
        Error::Format { .. } | Error::EmptyCaption(_) | Error::Validation(_) | Error::Json(_) => 2,
    }
}

fn init_threads() {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return };
    match raw.parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("could not size the thread pool: {e}");
            }
        }
        _ => log::warn!("ignoring {THREADS_ENV}={raw}: expected a positive integer"),
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { log::LevelFilter::Error } else { log::LevelFilter::Warn };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();
    init_threads();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_assignments_reach_nested_fields() {
        let mut v = serde_json::to_value(RunConfig::default()).unwrap();
        let (path, value) = parse_assignment("protocol.classifier.epochs=3").unwrap();
        apply_assignment(&mut v, &path, value).unwrap();
        let (path, value) = parse_assignment("label=nic").unwrap();
        apply_assignment(&mut v, &path, value).unwrap();
        let cfg: RunConfig = serde_json::from_value(v).unwrap();
        assert_eq!(cfg.protocol.classifier.epochs, 3);
        assert_eq!(cfg.label, "nic");
        assert!(parse_assignment("novalue").is_err());
    }

    #[test]
    fn dba_g_without_objects_names_the_requirement() {
        let cfg = RunConfig {
            human_captions: Some("h.jsonl".into()),
            generated_captions: Some("g.jsonl".into()),
            annotations: Some("a.jsonl".into()),
            metrics: vec![Metric::DbaG],
            ..RunConfig::default()
        };
        let err = cfg.validate().unwrap_err();
        assert_eq!(exit_code(&err), 2);
        let msg = err.to_string();
        assert!(msg.contains("dba_g") && msg.contains("objects"), "{msg}");
    }

    #[test]
    fn config_hash_ignores_paths_and_label() {
        let a = RunConfig::default();
        let b = RunConfig {
            human_captions: Some("/x/h.jsonl".into()),
            label: "other".into(),
            ..RunConfig::default()
        };
        assert_eq!(a.config_hash(), b.config_hash());
        let c = RunConfig {
            seed: 9,
            ..RunConfig::default()
        };
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn relative_config_paths_resolve_against_the_file() {
        let mut cfg = RunConfig {
            human_captions: Some("data/h.jsonl".into()),
            out: Some("/abs/r.json".into()),
            ..RunConfig::default()
        };
        cfg.resolve_paths(Path::new("/cfg"));
        assert_eq!(cfg.human_captions.unwrap(), PathBuf::from("/cfg/data/h.jsonl"));
        assert_eq!(cfg.out.unwrap(), PathBuf::from("/abs/r.json"));
    }

    #[test]
    fn unknown_attribute_without_values_is_rejected() {
        let cfg = RunConfig {
            attribute: "skin".into(),
            ..RunConfig::default()
        };
        assert!(cfg.attribute_spec().is_err());
        let cfg = RunConfig {
            attribute: "skin".into(),
            values: Some(vec!["light".into(), "dark".into()]),
            ..RunConfig::default()
        };
        assert_eq!(cfg.attribute_spec().unwrap().mask_token(), "<skin>");
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
