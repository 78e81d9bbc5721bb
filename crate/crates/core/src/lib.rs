//! Drum accompaniment for melodic pianorolls.
//!
//! A sequence-to-sequence transformer writes a basic drum pattern for every
//! 11-bar stretch of melody, an encoder classifier marks bars where a fill
//! belongs, and an in-filling model rewrites those bars from their context.

pub mod augment;
pub mod cli;
pub mod config;
pub mod models;
pub mod container;
pub mod dataset;
pub mod decode;
pub mod error;
pub mod metrics;
pub mod novelty;
pub mod pianoroll;
pub mod preprocess;
pub mod rng;
pub mod synth;
pub mod tokenizer;

pub use error::{Error, Result};
