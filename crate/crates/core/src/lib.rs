pub mod cli;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod intervene;
pub mod latentviz;
pub mod nn;
pub mod nst;
pub mod objective;
pub mod plot;
pub mod postprocess;
pub mod preprocess;
pub mod records;
pub mod train;

pub use error::{Error, Result};
