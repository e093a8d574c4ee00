//! Pluggable execution of independent jobs (hidden-size candidates,
//! experiment seeds). The core runs them in order; the `fluxcube` crate
//! provides a threaded executor.

use alloc::vec::Vec;

pub trait Executor: Sync {
    /// Applies `f` to every item. Results come back in item order.
    fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync,
    {
        items.into_iter().map(f).collect()
    }
}
