//! Wafer-map defect classification with sparse convolutions and open-set
//! novelty detection.
//!
//! The pipeline goes: wafer defect maps ([`wdm`]) are encoded as sparse
//! binary tensors ([`sparse`]), pushed through a submanifold sparse
//! convolutional network ([`layers`], [`network`]) to a compact latent
//! vector, and classified. At test time a novelty scorer ([`openset`])
//! decides whether a map belongs to one of the trained classes or is
//! something new, averaging both decisions over an augmentation ensemble
//! ([`augment`]). Statistical tooling for comparing scorers lives in
//! [`eval`].

pub mod error;
pub mod layers;
pub mod rng;
pub mod sparse;
pub mod synth;
pub mod wdm;

pub use error::{Error, Result};

/// Identifies which configuration and seed produced an artifact. Every
/// file the pipeline writes embeds one of these.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}
