//! Data-parallel helper with a sequential fallback.
//!
//! Results are collected into an index-ordered vector and reduced
//! sequentially by callers, so values are identical whatever the thread
//! count (or with the `parallel` feature disabled entirely).

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, in parallel when requested and compiled in.
pub(crate) fn map_indexed<R, F>(parallel: bool, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = parallel;
    (0..n).map(f).collect()
}
