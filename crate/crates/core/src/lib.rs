//! Feedforward networks trained through configurable learning channels,
//! plus the polynomial ODE systems that describe their linear limits.

pub mod channel;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod net;
pub mod par;
pub mod train;

pub use error::{Error, Result};
pub use linalg::{Matrix, SeededRng};
