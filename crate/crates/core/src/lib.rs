//! Magnitude psychophysics for hidden-state activations.
//!
//! Stimulus generation, activation IO, geometry, behaviour, precision,
//! causal-patch analysis, corpus statistics, robustness controls, synthetic
//! ground-truth generators and hypothesis reporting.

pub mod stats;
pub mod stimulus;
pub mod activation;
pub mod geometry;
pub mod records;
pub mod synthetic;
pub mod behaviour;
pub mod precision;
pub mod causal;
pub mod corpus;
pub mod controls;
pub mod report;
