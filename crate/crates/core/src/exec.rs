//! Index-ordered parallel map.
//!
//! Estimators describe their work as `n` independent items and reduce the
//! returned vector in index order.  An executor only decides where items
//! run; it must return results in index order, which makes every reduction
//! independent of the worker count.

use alloc::vec::Vec;

pub trait Executor: Sync {
    /// Returns `[f(0), f(1), …, f(n-1)]`.
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync;

    fn workers(&self) -> usize {
        1
    }
}

/// Runs every item on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Executor for Serial {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        (0..n).map(f).collect()
    }
}
