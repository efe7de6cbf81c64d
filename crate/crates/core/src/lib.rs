//! Bayesian LSTM failure-window forecasting for turbofan degradation data.
//!
//! A two-layer LSTM classifies 50-cycle telemetry windows as inside or
//! outside the last 30 cycles before failure. Dropout masks are tied across
//! time and stay on at inference, so repeated passes give a sample of
//! failure probabilities whose percentiles form the forecast.
//!
//! The guide in `book/` walks through each module; its code blocks run as
//! doctests of this crate.

pub mod brnn;
pub mod cmapss;
pub mod eval;
pub mod ndmath;
pub mod pipeline;
pub mod predict;
pub mod synthetic;
pub mod train;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/dropout.md")]
    mod dropout {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/forecasting.md")]
    mod forecasting {}
    #[doc = include_str!("../../../book/src/streaming.md")]
    mod streaming {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
