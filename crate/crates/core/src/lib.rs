pub mod archive;
pub mod config;
pub mod dataset;
pub mod degradation;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod losses;
pub mod networks;
pub mod nn;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod training;
pub mod workflow;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
