//! Lower-tail extreme-value modeling of measured time series.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dependency;
pub mod error;
pub mod gpd;
pub mod io;
pub mod mssd;
pub mod optim;
pub mod pipeline;
pub mod series;
pub mod stats;
pub mod synthetic;
pub mod threshold;
pub mod validate;

pub use error::{Error, Result};
