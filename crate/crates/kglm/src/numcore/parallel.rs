//! Batch-level data parallelism with a sequential fallback.
//!
//! With the `parallel` feature (the default) batches fan out over the rayon
//! thread pool. Results are collected in input order and any reduction
//! happens sequentially afterwards, so output bits are identical to the
//! sequential path regardless of thread count. Building without the feature
//! removes the rayon dependency entirely; [`set_parallel_enabled`] offers a
//! runtime switch on top (used by the benchmark suite to compare both paths
//! in one binary).

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static PARALLEL_ENABLED: AtomicBool = AtomicBool::new(true);

pub fn set_parallel_enabled(enabled: bool) {
    PARALLEL_ENABLED.store(enabled, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL_ENABLED.load(Ordering::Relaxed)
}

/// Map `f` over `items`, preserving order.
pub fn map_batch<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return items.into_par_iter().map(f).collect();
    }
    items.into_iter().map(f).collect()
}

/// Map over indices `0..n`, preserving order.
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Run `f` on each row of a contiguous buffer of `rows` rows of `width`
/// elements. Each row is written by exactly one task, so the result is
/// bit-identical to the sequential loop.
pub fn for_each_row<S: Send, F>(buf: &mut [S], width: usize, min_rows_for_par: usize, f: F)
where
    F: Fn(usize, &mut [S]) + Sync + Send,
{
    debug_assert!(width > 0 && buf.len() % width == 0);
    #[cfg(feature = "parallel")]
    if parallel_enabled() && buf.len() / width >= min_rows_for_par {
        buf.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
        return;
    }
    let _ = min_rows_for_par;
    for (i, row) in buf.chunks_mut(width).enumerate() {
        f(i, row);
    }
}
