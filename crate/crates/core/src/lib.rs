pub mod error;
pub mod frontend;
pub mod matrix;
pub mod architectures;
pub mod metrics;
pub mod patch_cache;
pub mod vocab;
pub mod wav;
pub mod manifest;
pub mod synth;
pub mod training;
pub mod transfer;
pub mod experiment;
