//! Training-free point-prompt generation for promptable segmentation models
//! from a single annotated reference image.
//!
//! A target image is perturbed (original, geometric, photometric), placed on
//! a 2x2 board next to the reference, and encoded once. Reference features
//! are clustered into per-class anchors; max anchor similarity gives
//! per-pixel evidence for each perturbation branch, the geometric branch is
//! warped back, and the three resulting opinions are fused with Dempster's
//! rule. Point prompts are chosen from the smoothed foreground belief, one
//! per high-scoring patch, then a mask is predicted and refined with its own
//! bounding box.
//!
//! Numeric modules are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

pub mod anchor_bank;
pub mod backend;
pub mod error;
pub mod evidential;
pub mod kmeans;
pub mod metrics;
pub mod perturbation;
pub mod pipeline;
pub mod prompt_selector;
pub mod raster;
pub mod scalar;
pub mod synthetic;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Opinion64 = evidential::Opinion<f64>;
pub type Evidence64 = evidential::Evidence<f64>;
pub type EvidenceMap64 = evidential::EvidenceMap<f64>;
pub type OpinionMap64 = evidential::OpinionMap<f64>;
pub type OpinionMap32 = evidential::OpinionMap<f32>;
pub type FeatureMap32 = anchor_bank::FeatureMap<f32>;
pub type FeatureMap64 = anchor_bank::FeatureMap<f64>;
pub type AnchorBank64 = anchor_bank::AnchorBank<f64>;
pub type BeliefPlane64 = prompt_selector::BeliefPlane<f64>;
