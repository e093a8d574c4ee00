//! Reaction-diffusion modeling and forecasting of activity tensors
//! (time x location x keyword).
//!
//! Each location carries a Lotka-Volterra reaction system over its
//! keywords. Locations are pooled into area groups, and a small recurrent
//! network emits time-varying, nonnegative influence intensities between
//! groups. A nonnegative periodic gain captures seasonality. The number of
//! groups is chosen by a two-part description-length criterion.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, calendars,
//! threads and the command line live in the `fluxcube` companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod adam;
pub mod autodiff;
pub mod clustering;
pub mod dynamics;
pub mod error;
pub mod exec;
pub mod forecast;
pub mod interpret;
pub mod mdl;
pub mod model;
mod rng;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::FluxCubeModel;
pub use tensor::ActivityTensor;
