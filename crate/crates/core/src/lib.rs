pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod lens;
pub mod model;
pub mod numerics;
pub mod perturb;
pub mod pipeline;
pub mod prompt;
pub mod trace_io;
pub mod trainer;

pub use error::{Error, Result};
