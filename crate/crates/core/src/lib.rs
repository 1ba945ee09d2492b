//! Link-level bit-error-rate simulation for molecular CDMA networks of
//! nano-machines (NMs) transmitting to one receiver through a diffusive
//! channel.

pub mod channel;
pub mod cli;
pub mod codes;
pub mod config;
pub mod detectors;
pub mod emission;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod signal;

pub use error::{Error, Result};
