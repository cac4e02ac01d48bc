//! File formats: 16-bit PCM WAV, the embedding container, CSV manifests.

pub mod emb;
pub mod manifest;
pub mod wav;
