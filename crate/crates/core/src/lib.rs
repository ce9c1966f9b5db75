pub mod corpus;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod util;

pub use error::{Error, Result};
