//! Data-parallel map over documents, with a sequential fallback when
//! the `parallel` feature is off.
//!
//! Results always come back in input order, and every reduction over
//! them happens sequentially at the call site, so enabling or disabling
//! the feature (or changing the thread count) never changes a result
//! bit.

/// Caps the rayon worker pool. Returns the effective thread count; a
/// no-op (returning 1) in sequential builds. May only take effect the
/// first time it is called in a process.
pub fn init_threads(threads: usize) -> usize {
    #[cfg(feature = "parallel")]
    {
        if threads > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        }
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        1
    }
}

/// Maps `f` over the items, in parallel when the feature is enabled.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Always-sequential map; the benchmark baseline.
pub fn seq_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}
