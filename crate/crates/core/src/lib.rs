pub mod dataset;
pub mod error;
pub mod fleet;
pub mod graph;
pub mod grid;
pub mod inverse;
pub mod linalg;
pub mod oracle;
pub mod scattering;
pub mod verify;
pub mod weyl;

pub use error::{Error, Result};
