//! Encoder–decoder model, decoding and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod generate;
pub mod transformer;

pub use checkpoint::{Checkpoint, Phase};
pub use config::TransformerConfig;
pub use generate::Strategy;
pub use transformer::{EncodedVars, EncoderOutput, Mode, Transformer};
