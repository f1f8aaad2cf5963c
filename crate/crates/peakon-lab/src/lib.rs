pub mod cloud;
pub mod error;
pub mod evolution;
pub mod experiment;
pub mod functionals;
pub mod grid;
pub mod kernel;
pub mod profiles;
pub mod quad;
pub mod stability;

pub use error::{Error, Result};
