//! Multi-cell LSTM language models trained with truncated BPTT.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod layer;
pub mod model;
pub mod numerics;
pub mod selection;
pub mod training;

pub use error::{Error, Result};
