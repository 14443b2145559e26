//! Attractor reconstruction from scalar time series, detection of
//! similar trajectory fragments, and identification of reduced discrete
//! models.

// `!(x > 0.0)` style checks deliberately reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod embedding;
pub mod error;
pub mod fragments;
pub mod geometry;
pub mod model;
pub mod pipeline;
pub mod selection;
pub mod signal_io;
pub mod spectral;

pub use error::{Error, ErrorClass, Result};
