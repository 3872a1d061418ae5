//! Replica-parallel execution.
//!
//! Work is cut into fixed-size chunks of replica indices. Chunk boundaries
//! depend only on the replica count, and chunk results are returned in chunk
//! order, so any reduction folded over the returned vector is identical for
//! every worker count. With the `parallel` feature disabled,
//! [`Execution::Parallel`] silently runs sequentially.

use std::ops::Range;

/// Replicas per chunk.
pub const CHUNK: u64 = 2048;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

fn chunk_ranges(total: u64, chunk: u64) -> Vec<Range<u64>> {
    let chunk = chunk.max(1);
    (0..total.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(total))
        .collect()
}

/// Applies `f` to each chunk of `0..total` and returns the results in chunk order.
pub fn map_chunks<T, F>(exec: Execution, total: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<u64>) -> T + Sync + Send,
{
    map_ranges(exec, chunk_ranges(total, CHUNK), f)
}

/// Applies `f` to each item of `items` and returns results in input order.
pub fn map_items<I, T, F>(exec: Execution, items: Vec<I>, f: F) -> Vec<T>
where
    I: Send,
    T: Send,
    F: Fn(I) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => items.into_iter().map(f).collect(),
        Execution::Parallel => par_map(items, f),
    }
}

fn map_ranges<T, F>(exec: Execution, ranges: Vec<Range<u64>>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<u64>) -> T + Sync + Send,
{
    map_items(exec, ranges, f)
}

#[cfg(feature = "parallel")]
fn par_map<I, T, F>(items: Vec<I>, f: F) -> Vec<T>
where
    I: Send,
    T: Send,
    F: Fn(I) -> T + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<I, T, F>(items: Vec<I>, f: F) -> Vec<T>
where
    I: Send,
    T: Send,
    F: Fn(I) -> T + Sync + Send,
{
    items.into_iter().map(f).collect()
}

/// Runs `op` on a dedicated pool of `workers` threads (0 = rayon default).
#[cfg(feature = "parallel")]
pub fn with_workers<R: Send>(workers: usize, op: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(op),
        Err(_) => op(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<R: Send>(_workers: usize, op: impl FnOnce() -> R + Send) -> R {
    op()
}
