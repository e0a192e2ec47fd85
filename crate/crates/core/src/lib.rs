//! Causality-guided architecture representation learning for neural
//! architecture performance prediction.

pub mod archgraph;
pub mod autodiff;
pub mod config;
pub mod disentangler;
pub mod encoder;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod predictor;
pub mod report;
pub mod search;
pub mod tensor;
