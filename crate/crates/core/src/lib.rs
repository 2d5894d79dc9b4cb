pub mod corpus;
pub mod data;
pub mod eb;
pub mod eval;
pub mod error;
pub mod exec;
pub mod moments;
pub mod neighbors;
pub mod pipeline;
pub mod rng;
pub mod semisynth;
pub mod similarity;

pub use error::{Error, Result};
