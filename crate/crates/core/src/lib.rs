//! Desk-scale laboratory for cross-modal backdoors in toy meme classifiers.
//!
//! The pipeline: generate a synthetic meme corpus whose labels need both
//! modalities ([`corpus`]), poison a slice of it with a punctuation-shaped
//! trigger or a baseline patch ([`trigger`], optionally textured by
//! [`augmentor`]), train early- or late-fusion detectors ([`victim`]) whose
//! text arrives typed or through a simulated extractor ([`extractor`]), and
//! measure attack success and stealth ([`metrics`]). [`harness`] wires the
//! stages into reproducible experiments behind the CLI in [`cli`].
//!
//! Everything is deterministic in one master seed: per-stage seeds, per-meme
//! RNG streams and model initialization all derive from it.

pub mod augmentor;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod extractor;
pub mod font;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod svg;
pub mod trigger;
pub mod util;
pub mod victim;

pub use error::{Error, Result};
