//! File formats, calendars, threads and the command line around
//! [`fluxcube_core`].

pub use fluxcube_core as core;

pub mod artifacts;
pub mod calendar;
pub mod cli;
pub mod csvio;
pub mod exec;
pub mod model_file;

pub use exec::Threaded;
