//! Optimal-transport-guided cloaking attacks on graph-based social-bot
//! detectors.
//!
//! The pipeline: build importance-weighted neighborhood measures over a
//! directed follow graph, learn an OT ground cost that separates human and
//! bot neighborhoods, mine misclassified boundary bots as cloak templates,
//! and decode transport plans into sparse, domain-constrained edge edits
//! evaluated against a black-box detector.

pub mod attack;
pub mod cost_model;
pub mod datagen;
pub mod detector;
pub mod error;
pub mod features;
pub mod geometry;
pub mod graph;
pub mod ot;
pub mod sampler;
pub mod testkit;
pub mod training;

pub use error::{Error, Result};
pub use graph::{
    DirectedSocialGraph, EdgeEdit, EditOp, EditSet, GraphBuilder, Label, NodeId, NodeRecord,
};
