pub mod autodiff;
pub mod contrastive;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod inference;
pub mod joint;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod refine;
pub mod retriever;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
