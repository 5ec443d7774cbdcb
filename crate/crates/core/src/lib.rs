pub mod cli;
pub mod error;
pub mod filter;
pub mod format;
pub mod gaussian;
pub mod grid_oracle;
pub mod linalg;
pub mod model;
pub mod outer_measure;
pub mod possibility;
pub mod smoother;

pub use error::{Error, Result};
