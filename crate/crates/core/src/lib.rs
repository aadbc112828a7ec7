//! Privacy-aware mobility rhythm analysis.
//!
//! Location histories are discretized on a shared grid, turned into one
//! normalized entropy value per time window, and analyzed with Gamma
//! additive models and ARIMA forecasts.

pub mod arima;
pub mod covariates;
pub mod entropy;
pub mod eval;
pub mod gam;
pub mod grid;
pub mod persist;
pub mod synth;
pub mod trace;
