pub mod autodiff;
pub mod error;
pub mod lm;
pub mod metrics;
pub mod mtl;
pub mod nn;
pub mod pipeline;
pub mod simscore;
pub mod text;

pub use error::{Error, Result};
