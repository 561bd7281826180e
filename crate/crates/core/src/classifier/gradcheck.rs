use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AttributeClassifier, LabeledCaption};
use crate::{Error, Result};

/// Parameters whose analytic and numerical gradients are both below this
/// magnitude are not compared.
pub const GRADIENT_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|g − ĝ| / (|g| + |ĝ|)` over the compared parameters.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Sampled parameters below [`GRADIENT_FLOOR`].
    pub skipped: usize,
}

/// Compares the analytic gradient of one example's loss with central finite
/// differences on up to `n_params` randomly chosen parameters.
///
/// Parameters are sampled from those that can affect the example (embedding
/// rows of its tokens plus every encoder and head parameter).
pub fn gradient_check(
    classifier: &AttributeClassifier,
    example: &LabeledCaption,
    epsilon: f64,
    n_params: usize,
    seed: u64,
) -> Result<GradCheck> {
    if example.label >= classifier.n_classes_internal() {
        return Err(Error::validation("gradient check label outside class range"));
    }
    let tokens = classifier.encode(&example.tokens)?;
    let (_, analytic) = classifier.grad_for_indices(&tokens, example.label);

    let mut candidates = classifier.relevant_params(&tokens);
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    candidates.truncate(n_params);

    let mut probe = classifier.clone();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for idx in candidates {
        let original = probe.params[idx];
        probe.params[idx] = original + epsilon;
        let plus = probe.loss_for_indices(&tokens, example.label);
        probe.params[idx] = original - epsilon;
        let minus = probe.loss_for_indices(&tokens, example.label);
        probe.params[idx] = original;

        let numeric = (plus - minus) / (2.0 * epsilon);
        let exact = analytic[idx];
        if exact.abs() < GRADIENT_FLOOR && numeric.abs() < GRADIENT_FLOOR {
            out.skipped += 1;
            continue;
        }
        let rel = (exact - numeric).abs() / (exact.abs() + numeric.abs());
        out.max_rel_error = out.max_rel_error.max(rel);
        out.checked += 1;
    }
    Ok(out)
}
