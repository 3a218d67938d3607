//! Ensembling of slot-filling system outputs.

pub mod aggregate;
pub mod baselines;
pub mod classifier;
pub mod error;
pub mod experiment;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod postprocess;
pub mod provenance;
pub mod scorer;
pub mod similarity;
pub mod synth;
pub mod unionfind;

pub use error::{Error, Result};
