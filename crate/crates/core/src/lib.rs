#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod classify;
pub mod cli;
pub mod eigen;
pub mod error;
pub mod measure;
pub mod mesh;
pub mod quadrature;
pub mod resolvent;
pub mod simulate;

pub use error::{Error, Result};
