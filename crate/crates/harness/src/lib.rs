//! Loading, synthesis, orchestration, calibration and reporting for the
//! `raynn` benchmark CLI.

pub mod calibrate;
pub mod error;
pub mod io;
pub mod report;
pub mod run;
pub mod synth;

pub use error::{Error, Result};
