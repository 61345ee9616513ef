//! Cloze test generation with controlled difficulty, plus surrogate-based
//! item response theory evaluation.

pub mod corpus;
pub mod distract;
pub mod gapgen;
pub mod hashing;
pub mod pipeline;
pub mod psychometrics;
pub mod report;
pub mod synth;
pub mod scoring;
pub mod tagger;
