//! Utterance intent tagging with attention over dialogue history, where the
//! weight of each previous turn is learned from its distance rather than set
//! by a fixed decay curve.
//!
//! The crate is organized bottom-up: [`tensor`] and [`autodiff`] provide the
//! numeric substrate, [`encoder`] the BiLSTM, [`attention`] the history
//! attention, [`model`] the full tagger, and [`trainer`] optimization,
//! evaluation and the ablation runner.

pub mod attention;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
