//! Traffic forecasting with diffusion convolutional recurrent networks trained
//! independently on partitions of a road-sensor graph.
//!
//! The pipeline runs metadata → [`graph`] → [`partition`] → [`data`] windows →
//! [`training`] (one model per partition, built on [`model`] and the
//! [`numcore`] autodiff tape) → [`analysis`]. The [`cli`] module wires the
//! steps behind one config file.

pub mod analysis;
pub mod cli;
pub mod data;
pub mod graph;
pub mod model;
pub mod numcore;
pub mod partition;
pub mod training;
