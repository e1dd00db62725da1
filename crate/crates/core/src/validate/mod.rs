//! Goodness-of-fit plots, the composite CDF model and parametric baselines.

mod compare;
mod composite;
mod parametric;
mod plots;

pub use compare::*;
pub use composite::*;
pub use parametric::*;
pub use plots::*;
