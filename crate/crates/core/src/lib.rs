pub mod autodiff;
pub mod corruptions;
pub mod data;
pub mod error;
pub mod image;
pub mod model;
pub mod objectives;
pub mod reconstruction;
pub mod robustness;
pub mod saliency;
pub mod seed;
pub mod stats;
pub mod training;

pub use error::{Error, Result};
