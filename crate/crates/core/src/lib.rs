//! Parse-focused PCFG induction.
//!
//! Log-domain inside/outside charts with per-span focusing weights, EM training,
//! Viterbi and minimum-Bayes-risk decoding, focusing-bias construction from parser
//! outputs, and diagnostics for optimization ambiguity and rule-usage simplicity.

pub mod analysis;
pub mod chart;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod focusing;
pub mod grammar;
pub mod logmath;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
