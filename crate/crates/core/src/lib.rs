//! Graph condensation with causal-invariant spectral contrast.
//!
//! The crate condenses an attributed graph into a small synthetic graph by
//! matching relay-GCN gradients against the original graph and a spectrally
//! intervened copy of it, while a separate encoder learns invariant features
//! that are injected into the synthetic graph through an InfoNCE term.

pub mod bench;
pub mod causal;
pub mod condenser;
pub mod contrast;
pub mod dataio;
pub mod error;
pub mod graph;
pub mod intervention;
pub mod linalg;
pub mod optim;
pub mod pipeline;
pub mod relay;

pub use error::{Error, Result};
pub use graph::{Edge, Graph, SpectralDecomposition, Splits};
