//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use capbias::cooccur::{bias_amplification, count_cooccurrence, AttributeSource, LabelSource, Provenance, TaskWordSet};
use capbias::corpus::{AttributeSpec, CaptionRecord, Corpus, Source};
use capbias::masking::{mention_label, MentionLabel};

/// BA by direct enumeration of every (value, word) cell.
pub fn brute_force_ba(human: &[Vec<String>], generated: &[Vec<String>], words: &[&str]) -> Option<f64> {
    let spec = AttributeSpec::gender();
    let column = |caps: &[Vec<String>], w: &str| -> [f64; 2] {
        let mut c = [0.0; 2];
        for tokens in caps {
            if let MentionLabel::OnlyValue(a) = mention_label(tokens, &spec) {
                if tokens.iter().any(|t| t == w) {
                    c[a] += 1.0;
                }
            }
        }
        c
    };
    let mut total = 0.0;
    let mut kept = 0;
    for w in words {
        let (h, g) = (column(human, w), column(generated, w));
        let (hs, gs) = (h[0] + h[1], g[0] + g[1]);
        if hs == 0.0 || gs == 0.0 {
            continue;
        }
        kept += 1;
        for a in 0..2 {
            let b = h[a] / hs;
            if b > 0.5 {
                total += g[a] / gs - b;
            }
        }
    }
    (kept > 0).then(|| total / kept as f64)
}

pub const POOL: [&str; 10] = ["woman", "man", "girl", "boy", "kitchen", "skateboard", "dog", "tie", "a", "on"];
pub const TASK: [&str; 4] = ["kitchen", "skateboard", "dog", "tie"];

pub fn measured_ba(human: &[Vec<String>], generated: &[Vec<String>]) -> capbias::Result<f64> {
    let to_corpus = |caps: &[Vec<String>], source| {
        let records = caps
            .iter()
            .enumerate()
            .map(|(i, t)| CaptionRecord {
                caption_id: format!("c{i}"),
                image_id: format!("i{i}"),
                tokens: t.clone(),
                source,
                attribute: None,
            })
            .collect();
        Corpus::new(records, AttributeSpec::gender(), None).unwrap()
    };
    let words = TaskWordSet::new(TASK.iter().map(|w| w.to_string()).collect(), Provenance::UserSupplied)?;
    let count = |c: &Corpus| count_cooccurrence(c, &words, AttributeSource::CaptionWords, LabelSource::CaptionTokens);
    Ok(bias_amplification(&count(&to_corpus(human, Source::Human))?, &count(&to_corpus(generated, Source::Model))?)?.value)
}

