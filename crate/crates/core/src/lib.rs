//! Self-training of attribute extractors for templated HTML detail pages
//! from a handful of labeled pages.
//!
//! Pages are parsed into text-bearing DOM nodes ([`dom_model`]), human labels
//! and unlabeled node pools are managed by [`corpus`], a distant-supervision
//! labeler is recovered from a few labeled pages ([`weak_supervision`]), and a
//! teacher/student loop ([`self_training`]) trains a hashed linear softmax
//! classifier ([`node_classifier`]) on pseudo-labels weighted by their
//! estimated accuracy ([`reweighting`]). [`synth_vertical`] renders synthetic
//! websites with exact ground truth and [`evaluation`] scores extractions.

pub mod corpus;
pub mod dom_model;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod labels;
pub mod node_classifier;
pub mod reweighting;
pub mod self_training;
pub mod synth_vertical;
pub mod weak_supervision;

pub use error::{LeastError, Result};
pub use labels::{AttributeSet, Label};
