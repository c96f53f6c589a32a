//! Core of a desk-scale robot benchmarking lab.

pub mod assets;
pub mod benchmark;
pub mod digest;
pub mod evaluator;
pub mod localization;
pub mod metrics;
pub mod par;
pub mod protocol;
pub mod rng;
pub mod simworld;
pub mod study;
