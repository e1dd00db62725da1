//! Dependency removal ahead of tail fitting: declustering, or ARMA mean
//! filtering followed by GJR-GARCH variance standardization.

pub mod arima;
pub mod decluster;
pub mod filter;
pub mod garch;

pub use arima::{fit_arima, select_arima_order, ArimaFit, ArimaModel};
pub use decluster::{decluster, select_decluster_params, DeclusterConfig, DeclusterResult, DeclusterSelection};
pub use filter::{arima_garch_pipeline, FilterConfig, FilteredResiduals};
pub use garch::{fit_garch, GarchFit, GarchModel};
