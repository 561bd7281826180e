//! SHA-256 fingerprints embedded in reports and checkpoints.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::corpus::Corpus;

/// Hash of newline-terminated lines.
pub fn sha256_lines<'a>(lines: impl IntoIterator<Item = &'a str>) -> String {
    let mut h = Sha256::new();
    for line in lines {
        h.update(line.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the compact JSON encoding of `value`.
pub fn sha256_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes to JSON");
    hex::encode(Sha256::digest(bytes))
}

/// Content hash of a corpus: records in order, attribute values by name.
pub fn corpus_hash(corpus: &Corpus) -> String {
    let values = corpus.attribute_spec().values();
    let lines: Vec<String> = corpus
        .records()
        .iter()
        .map(|r| {
            serde_json::json!([
                r.caption_id,
                r.image_id,
                r.tokens,
                r.source,
                r.attribute.map(|a| values[a].as_str()),
            ])
            .to_string()
        })
        .collect();
    sha256_lines(lines.iter().map(String::as_str))
}
