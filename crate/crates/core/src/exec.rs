//! Pluggable execution of independent index-mapped jobs.
//!
//! Core algorithms express their embarrassingly parallel parts as
//! `map_indexed` calls. The core only ships a sequential executor; a
//! thread-pool backed one lives in the std companion crate. Every job writes
//! into its own slot, so results never depend on scheduling.

use alloc::vec::Vec;

pub trait Executor: Sync {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Sequential;

impl Executor for Sequential {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
