pub mod ball;
pub mod check;
pub mod config;
pub mod data;
pub mod diff;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod train;

pub use error::{HsrError, Result};
