//! Societal-bias and bias-amplification metrics for image-caption corpora.
//!
//! The crate is organised around the pipeline that turns caption files into
//! bias reports:
//!
//! - [`corpus`]: JSON Lines ingestion, tokenization, balanced splits.
//! - [`masking`]: attribute word lists, plural expansion, masking, mentions.
//! - [`vocab`]: vocabularies and alignment of human captions to a model vocabulary.
//! - [`cooccur`]: co-occurrence metrics (BA, DBA, Ratio, Error).
//! - [`classifier`]: a from-scratch attribute classifier trained with Adam.
//! - [`lic`]: classifier-based leakage metrics (SC, Leakage, LIC) over many seeds.
//! - [`synth`]: synthetic caption corpora with closed-form expectations.
//! - [`cli`]: the `capbias` command line.
//!
//! Runnable walkthroughs for each capability live in `examples/`.

pub mod classifier;
pub mod cli;
pub mod cooccur;
pub mod corpus;
mod error;
pub mod hashing;
pub mod lic;
pub mod masking;
pub mod report;
pub mod seeds;
pub mod synth;
pub mod vocab;

pub use error::{Error, Result};
