//! BiLSTM-CRF slot filling with a word/context mutual-information loss and
//! two context-driven auxiliary prediction losses.

pub mod cli;
pub mod crf;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod layers;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod training;

pub use error::{Error, Result};
