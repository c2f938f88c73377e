//! Continued-fraction generative network components.
//!
//! * [`cfcore`]: continuants, single-division evaluation and analytic
//!   gradients of canonical continued fractions, plus the literal
//!   one-division-per-level oracle.
//! * [`autodiff`]: a small reverse-mode tape over dense tensors with the
//!   continued-fraction layer as a custom function.
//! * [`ladders`]: collapsed ladder ensembles `y = Ux + Vz` with output range
//!   tracking.

pub mod autodiff;
pub mod blocks;
pub mod cfcore;
mod error;
pub mod ladders;
pub mod model;
pub mod params;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
