pub mod datamodel;
pub mod error;
pub mod eval;
pub mod features;
pub mod graph;
pub mod model;
pub mod io;
pub mod simulator;
pub mod train;
pub mod tubes;

pub use error::{Error, Result};
