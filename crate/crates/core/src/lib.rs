mod adjoint;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod files;
pub mod flow;
pub mod geometry;
pub mod grad;
pub mod mixture;
pub mod numeric;
pub mod quadrature;
pub mod vmf;
pub mod workflow;

pub use error::{Error, Result};
