//! Novel-object captioning toolkit.
//!
//! Builds synthetic image-caption pairs for object classes that have no
//! caption supervision by pasting their bounding-box crops over similar
//! objects in captioned images, rewrites the matching captions, and trains a
//! captioner in three stages (baseline, synthetic warm-up, rounds of
//! pseudo-labelling with plain and constrained beam search). Evaluation covers
//! CIDEr-D, per-class novel-object F1 and their F-beta combination.

pub mod candidates;
pub mod dataset;
pub mod decoding;
pub mod error;
pub mod jsonl;
pub mod lexicon;
pub mod metrics;
pub mod pipeline;
pub mod review;
pub mod rewrite;
pub mod scorer;
pub mod synth;
pub mod text;
pub mod toy;

pub use error::{Error, Result};
