pub mod autodiff;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod nets;
pub mod rl;
pub mod tensor;
pub mod trainer;
pub mod worldsim;

pub use error::{Error, Result};
