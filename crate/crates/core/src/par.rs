//! Row-chunked data-parallel helpers.
//!
//! With the `parallel` feature the helpers dispatch to rayon; without it (or
//! after [`set_parallel(false)`](set_parallel)) they run the same closures in a
//! plain loop. Reductions always combine per-chunk partials in index order, so
//! results are bit-identical whichever path runs.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Toggle the rayon path at runtime. No effect without the `parallel` feature.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}

pub fn for_each_chunk_mut<T, F>(data: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        data.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(width).enumerate().for_each(|(i, c)| f(i, c));
}

/// Like [`for_each_chunk_mut`] but with per-worker scratch state.
pub fn for_each_chunk_mut_init<T, S, I, F>(data: &mut [T], width: usize, init: I, f: F)
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        data.par_chunks_mut(width)
            .enumerate()
            .for_each_init(&init, |s, (i, c)| f(s, i, c));
        return;
    }
    let mut s = init();
    data.chunks_mut(width)
        .enumerate()
        .for_each(|(i, c)| f(&mut s, i, c));
}

/// Map every chunk to a value; output is in chunk order.
pub fn map_chunks<T, R, F>(data: &[T], width: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &[T]) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return data
            .par_chunks(width)
            .enumerate()
            .map(|(i, c)| f(i, c))
            .collect();
    }
    data.chunks(width).enumerate().map(|(i, c)| f(i, c)).collect()
}

/// Deterministic chunked sum of `f` over `data`.
pub fn sum_by<T, F>(data: &[T], width: usize, f: F) -> f64
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync + Send,
{
    map_chunks(data, width, |_, c| c.iter().map(&f).sum::<f64>())
        .into_iter()
        .sum()
}

/// Deterministic chunked fold of `f` with `op` (e.g. `f64::max`).
pub fn reduce_by<T, F, O>(data: &[T], width: usize, init: f64, f: F, op: O) -> f64
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync + Send,
    O: Fn(f64, f64) -> f64 + Sync + Send,
{
    map_chunks(data, width, |_, c| c.iter().map(&f).fold(init, &op))
        .into_iter()
        .fold(init, &op)
}

/// Map independent jobs, preserving input order in the output.
pub fn map_jobs<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}
