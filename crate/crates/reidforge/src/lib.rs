//! Vehicle re-identification toolkit.
//!
//! The crate covers the full retrieval stack for desk-scale experiments:
//!
//! - [`featstore`] — feature matrices, gallery manifests, binary storage
//! - [`reidnet`] — feature-statistics mixing and a multi-head attention
//!   embedding head with analytic gradients
//! - [`losses`] — label-smoothed ID loss, supervised contrastive loss,
//!   batch-hard triplet loss
//! - [`malw`] — adaptive loss weighting driven by loss-magnitude statistics
//! - [`retrieval`] — distances, k-reciprocal re-ranking, distance fusion,
//!   tracklet smoothing, ensembling
//! - [`evalkit`] — mAP / CMC evaluation
//! - [`harness`] — synthetic data, training loop, config, pipeline runner
//!
//! Everything computes in f64; f32 appears only inside the binary file
//! format. All randomness flows through caller-provided seeded generators,
//! so every entry point is deterministic.

pub mod error;
pub mod evalkit;
pub mod featstore;
pub mod gradcheck;
pub mod harness;
pub mod losses;
pub mod malw;
pub mod reidnet;
pub mod retrieval;

pub use error::{Error, Result};
pub use featstore::{FeatureMatrix, GalleryManifest, ManifestEntry};
