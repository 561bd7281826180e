use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AttributeClassifier, ClassifierConfig, TrainingLog};
use crate::vocab::Vocabulary;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "capbias-classifier";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk classifier: JSON with config, vocabulary and its hash, attribute
/// values and the flat parameter array.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ClassifierConfig,
    pub attribute_values: Vec<String>,
    pub vocab_hash: String,
    pub vocabulary: Vocabulary,
    pub training_log: TrainingLog,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_classifier(clf: &AttributeClassifier, attribute_values: &[String]) -> Result<Self> {
        if attribute_values.len() != clf.layout.classes() {
            return Err(Error::validation("attribute value count differs from classifier classes"));
        }
        Ok(Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: clf.config.clone(),
            attribute_values: attribute_values.to_vec(),
            vocab_hash: clf.vocab.hash(),
            vocabulary: clf.vocab.clone(),
            training_log: clf.log.clone(),
            params: clf.params.clone(),
        })
    }

    /// Rebuilds the classifier, checking format, vocabulary hash and
    /// parameter count.
    pub fn into_classifier(self, expected_vocab_hash: Option<&str>) -> Result<AttributeClassifier> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::validation(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let actual = self.vocabulary.hash();
        if actual != self.vocab_hash {
            return Err(Error::validation(format!(
                "checkpoint vocabulary hash mismatch: stored {}, computed {actual}",
                self.vocab_hash
            )));
        }
        if let Some(expected) = expected_vocab_hash {
            if expected != actual {
                return Err(Error::validation(format!(
                    "checkpoint vocabulary {actual} does not match pipeline vocabulary {expected}"
                )));
            }
        }
        let mut clf = AttributeClassifier::new(self.config, self.vocabulary, self.attribute_values.len())?;
        if self.params.len() != clf.params.len() {
            return Err(Error::validation(format!(
                "checkpoint has {} parameters, layout needs {}",
                self.params.len(),
                clf.params.len()
            )));
        }
        clf.params = self.params;
        clf.log = self.training_log;
        Ok(clf)
    }
}

pub fn save_checkpoint(path: &Path, clf: &AttributeClassifier, attribute_values: &[String]) -> Result<()> {
    let ckpt = Checkpoint::from_classifier(clf, attribute_values)?;
    let text = serde_json::to_string(&ckpt)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint and its attribute value names.
pub fn load_checkpoint(path: &Path, expected_vocab_hash: Option<&str>) -> Result<(AttributeClassifier, Vec<String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    let values = ckpt.attribute_values.clone();
    Ok((ckpt.into_classifier(expected_vocab_hash)?, values))
}
