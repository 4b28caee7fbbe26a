pub mod corpus;
pub mod error;
pub mod graph;
pub mod img;
pub mod model;
pub mod par;
pub mod tensor;
pub mod util;

pub use error::{Error, Result};
