//! Quickest detection of proportional intensity changes in seasonal
//! counting processes.
//!
//! The pipeline:
//!
//! 1. [`ingest`] parses daily and half-hourly call counts with their
//!    calendar and splits them into training and test periods.
//! 2. [`intensity`] fits the seasonal arrival rate: a Poisson GLM for
//!    daily totals chosen by BIC, spread over half-hour slots by a median
//!    intraday profile.
//! 3. [`calibrate`] picks the alarm threshold `m` so that the in-control
//!    mean number of events to a false alarm matches a budget.
//! 4. [`detect`] runs the reflected CUSUM over counts or event times.
//! 5. [`simulate`] and [`evaluate`] generate synthetic paths and measure
//!    detection delay and threshold exceedance.

pub mod calendar;
pub mod calibrate;
pub mod cli;
pub mod detect;
pub mod error;
pub mod evaluate;
pub mod ingest;
pub mod intensity;
pub mod simulate;

pub use error::{Error, Result};
