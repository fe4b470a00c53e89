pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod fields;
pub mod functionals;
pub mod ingest;
pub mod montecarlo;
pub mod quad;
pub mod specfun;

pub use error::{Error, Result};
