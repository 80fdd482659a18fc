//! Datasets, metrics, file formats and sweep experiments.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod metrics;
pub mod pgm;
pub mod report;
pub mod sweep;
