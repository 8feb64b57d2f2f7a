//! Numerical laboratory for the stochastic Ramsey consumption problem with
//! Cobb–Douglas production.

pub mod cli;
pub mod closedform;
pub mod config;
pub mod error;
pub mod experiments;
pub mod feller;
pub mod hjb;
pub mod model;
pub mod sde;

pub use error::{Error, Result};
