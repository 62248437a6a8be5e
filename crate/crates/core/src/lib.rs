pub mod adapters;
pub mod analysis;
pub mod error;
pub mod gradients;
pub mod inflation;
pub mod linalg;
pub mod rng;
pub mod theory;
pub mod trainer;

pub use error::{LormaError, Result};
pub use linalg::{FlopCounter, Matrix};
