//! Multi-spectrum transformer encoder.
//!
//! Each spectrum is patched, projected to width `d` and offset by a learned
//! per-position encoding. The token sequences of the three kinds are
//! concatenated (UV-Vis, IR, Raman) and passed through blocks of
//! multi-head attention and a feed-forward network, each followed by a
//! residual add and batch normalization over all tokens of the batch. The
//! final tokens are flattened and projected to the spectral embedding
//! `z_s`; per-kind linear heads reconstruct masked patches.

mod attention;
mod batch;
mod config;
mod model;

pub use attention::{export_attention, read_attention, sidecar_path, AttentionMap};
pub use batch::SpectraBatch;
pub use config::SpecFormerConfig;
pub use model::{
    attention_head, Encoded, ReconstructedPatch, Reconstruction, SpecFormer, SpecFormerOutput, TokenSequence,
};
