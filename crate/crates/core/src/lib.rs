pub mod augment;
pub mod cli;
pub mod dataio;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod explain;
pub mod imaging;
pub mod model;
pub mod objectives;
pub mod phantom;
pub mod pipeline;

pub use error::{Error, Result};
