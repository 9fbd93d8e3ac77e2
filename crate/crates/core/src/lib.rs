//! Weighted-quantile Expected Shortfall estimation.
//!
//! A first stage fits CAViaR quantile recursions over a grid of tail levels;
//! a second stage forecasts ES as an affine combination of those quantiles,
//! with weights fitted by minimizing the AL joint VaR-ES score. The crate also
//! carries the competing forecasters, a Monte-Carlo bias study and the
//! out-of-sample evaluation tools (quantile loss, joint loss, model
//! confidence set).

pub mod backtest;
pub mod baselines;
pub mod caviar;
pub mod error;
pub mod optimize;
pub mod simulate;
pub mod special;
pub mod wq;

pub use error::{Error, Result};
