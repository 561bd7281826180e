//! Attribute classifier trained from scratch.
//!
//! Token embeddings are encoded either by averaging ([`EncoderKind::BagMean`])
//! or by a stacked bidirectional LSTM ([`EncoderKind::BiRecurrent`]), then
//! passed through `affine → leaky ReLU → affine` to one logit per attribute
//! value. Training minimises mean cross-entropy with Adam. Everything runs in
//! `f64`.

mod adam;
mod checkpoint;
mod gradcheck;
mod network;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seeds;
use crate::vocab::Vocabulary;
use crate::{Error, Result};

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, GradCheck, GRADIENT_FLOOR};
use network::{Layout, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EncoderKind {
    BagMean,
    BiRecurrent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub encoder_kind: EncoderKind,
    /// Stacked bidirectional layers; only used by `BiRecurrent`.
    pub recurrent_layers: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            hidden_dim: 128,
            encoder_kind: EncoderKind::BagMean,
            recurrent_layers: 2,
            epochs: 20,
            learning_rate: 5e-5,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::validation(format!("classifier {name} must be positive")));
        }
        if self.encoder_kind == EncoderKind::BiRecurrent && self.recurrent_layers == 0 {
            return Err(Error::validation("recurrent_layers must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate must be a positive number"));
        }
        Ok(())
    }
}

/// A caption with its attribute value index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledCaption {
    pub tokens: Vec<String>,
    pub label: usize,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry; ties go to the lowest index, i.e. the first
/// attribute value in spec order.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Anything that assigns per-class logits to a caption.
pub trait AttributeScorer {
    fn n_classes(&self) -> usize;

    fn logits(&self, tokens: &[String]) -> Result<Vec<f64>>;

    /// Per-class confidences `s_a`.
    fn confidences(&self, tokens: &[String]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(tokens)?))
    }

    /// Predicted class and the confidences it was chosen from.
    fn predict(&self, tokens: &[String]) -> Result<(usize, Vec<f64>)> {
        let logits = self.logits(tokens)?;
        Ok((argmax(&logits), softmax(&logits)))
    }
}

/// Returns the same logits for every caption.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantScorer(pub Vec<f64>);

impl AttributeScorer for ConstantScorer {
    fn n_classes(&self) -> usize {
        self.0.len()
    }

    fn logits(&self, _tokens: &[String]) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Mean loss over the training set before the first update.
    pub initial_loss: f64,
    /// Running mean loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean loss over the training set after the last update.
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct AttributeClassifier {
    config: ClassifierConfig,
    vocab: Vocabulary,
    layout: Layout,
    params: Vec<f64>,
    log: TrainingLog,
}

impl AttributeClassifier {
    /// Random initialisation, deterministic in `config.seed`.
    pub fn new(config: ClassifierConfig, vocab: Vocabulary, n_classes: usize) -> Result<Self> {
        config.validate()?;
        if n_classes < 2 {
            return Err(Error::validation(format!(
                "a classifier needs at least 2 classes, got {n_classes}"
            )));
        }
        let layout = Self::layout_for(&config, vocab.len(), n_classes);
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(config.seed, 0, seeds::INIT_STREAM));
        let params = layout.init(&mut rng);
        Ok(Self {
            config,
            vocab,
            layout,
            params,
            log: TrainingLog::default(),
        })
    }

    fn layout_for(config: &ClassifierConfig, vocab: usize, classes: usize) -> Layout {
        Layout::new(
            config.encoder_kind,
            vocab,
            config.embed_dim,
            config.hidden_dim,
            config.recurrent_layers,
            classes,
        )
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn training_log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Sets the output bias; with zero output weights the classifier then
    /// emits exactly these logits for every caption.
    pub fn set_output_bias(&mut self, logits: &[f64], zero_weights: bool) -> Result<()> {
        if logits.len() != self.layout.classes() {
            return Err(Error::validation("output bias length differs from class count"));
        }
        let (w2, b2) = (self.layout.w2, self.layout.b2);
        if zero_weights {
            self.params[w2.offset..w2.offset + w2.rows * w2.cols].fill(0.0);
        }
        self.params[b2.offset..b2.offset + b2.rows].copy_from_slice(logits);
        Ok(())
    }

    fn network(&self) -> Network<'_> {
        Network {
            kind: self.config.encoder_kind,
            layout: &self.layout,
            params: &self.params,
        }
    }

    pub fn encode(&self, tokens: &[String]) -> Result<Vec<usize>> {
        if tokens.is_empty() {
            return Err(Error::validation("cannot classify an empty token sequence"));
        }
        Ok(self.vocab.encode(tokens))
    }

    /// Logits for already-encoded token indices.
    pub fn logits_for_indices(&self, indices: &[usize]) -> Vec<f64> {
        self.network().logits(indices)
    }

    fn encode_all(&self, data: &[LabeledCaption]) -> Result<Vec<(Vec<usize>, usize)>> {
        data.iter()
            .map(|ex| {
                if ex.label >= self.layout.classes() {
                    return Err(Error::validation(format!(
                        "label {} outside {} classes",
                        ex.label,
                        self.layout.classes()
                    )));
                }
                Ok((self.encode(&ex.tokens)?, ex.label))
            })
            .collect()
    }

    fn mean_loss(&self, data: &[(Vec<usize>, usize)]) -> f64 {
        let net = self.network();
        data.iter().map(|(t, l)| net.loss(t, *l)).sum::<f64>() / data.len() as f64
    }

    /// Mean cross-entropy over `data`.
    pub fn loss(&self, data: &[LabeledCaption]) -> Result<f64> {
        Ok(self.mean_loss(&self.encode_all(data)?))
    }

    /// Minimises mean cross-entropy with Adam for `config.epochs` epochs.
    ///
    /// Examples are reshuffled every epoch from a stream seeded by
    /// `config.seed`. A non-finite loss or gradient aborts training.
    pub fn train(&mut self, data: &[LabeledCaption]) -> Result<&TrainingLog> {
        if data.is_empty() {
            return Err(Error::validation("no training examples"));
        }
        let encoded = self.encode_all(data)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(self.config.seed, 0, seeds::SHUFFLE_STREAM));
        let mut order: Vec<usize> = (0..encoded.len()).collect();
        let mut adam = Adam::new(self.params.len(), self.config.learning_rate);
        let mut grad = vec![0.0; self.params.len()];

        let mut log = TrainingLog {
            initial_loss: self.mean_loss(&encoded),
            ..TrainingLog::default()
        };
        for epoch in 0..self.config.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for (batch_idx, batch) in order.chunks(self.config.batch_size).enumerate() {
                grad.fill(0.0);
                let mut batch_loss = 0.0;
                {
                    let net = self.network();
                    for &i in batch {
                        let (tokens, label) = &encoded[i];
                        batch_loss += net.loss_and_grad(tokens, *label, &mut grad);
                    }
                }
                let scale = 1.0 / batch.len() as f64;
                grad.iter_mut().for_each(|g| *g *= scale);
                if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(self.numerical_failure(epoch, batch_idx, batch_loss * scale, &grad));
                }
                adam.step(&mut self.params, &grad);
                epoch_loss += batch_loss;
            }
            log.epoch_losses.push(epoch_loss / encoded.len() as f64);
        }
        log.final_loss = self.mean_loss(&encoded);
        if !log.final_loss.is_finite() {
            return Err(self.numerical_failure(self.config.epochs, 0, log.final_loss, &grad));
        }
        if log.final_loss > log.initial_loss {
            log::warn!(
                "training loss rose from {:.6} to {:.6}",
                log.initial_loss,
                log.final_loss
            );
        }
        self.log = log;
        Ok(&self.log)
    }

    fn numerical_failure(&self, epoch: usize, batch: usize, loss: f64, grad: &[f64]) -> Error {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let non_finite = self.params.iter().filter(|p| !p.is_finite()).count();
        let max_grad = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        Error::Numerical(format!(
            "non-finite loss at epoch {epoch}, batch {batch}: loss={loss}, |params|={:.6e}, \
             non-finite params={non_finite}, max|grad|={max_grad:.6e}, lr={}, encoder={:?}",
            norm(&self.params),
            self.config.learning_rate,
            self.config.encoder_kind
        ))
    }

    pub(crate) fn loss_for_indices(&self, tokens: &[usize], label: usize) -> f64 {
        self.network().loss(tokens, label)
    }

    pub(crate) fn grad_for_indices(&self, tokens: &[usize], label: usize) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.network().loss_and_grad(tokens, label, &mut grad);
        (loss, grad)
    }

    pub(crate) fn relevant_params(&self, tokens: &[usize]) -> Vec<usize> {
        self.layout.relevant_indices(tokens)
    }

    pub(crate) fn n_classes_internal(&self) -> usize {
        self.layout.classes()
    }
}

impl AttributeScorer for AttributeClassifier {
    fn n_classes(&self) -> usize {
        self.layout.classes()
    }

    fn logits(&self, tokens: &[String]) -> Result<Vec<f64>> {
        Ok(self.logits_for_indices(&self.encode(tokens)?))
    }
}
