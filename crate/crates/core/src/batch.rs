//! Deterministic Monte Carlo batches: path `i` always draws from `root.split(i)`,
//! and results come back in index order, so output does not depend on the
//! number of worker threads.

use crate::error::{Error, Result};
use crate::rngkit::RandomStream;
use crate::verify::MCEstimate;

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is on.
pub fn map_indexed<T, F>(root: &RandomStream, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut RandomStream) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n)
            .into_par_iter()
            .map(|i| f(i, &mut root.split(i as u64)))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_indexed_sequential(root, n, f)
    }
}

/// Single-threaded [`map_indexed`].
pub fn map_indexed_sequential<T, F>(root: &RandomStream, n: usize, f: F) -> Result<Vec<T>>
where
    F: Fn(usize, &mut RandomStream) -> Result<T>,
{
    (0..n).map(|i| f(i, &mut root.split(i as u64))).collect()
}

/// Mean and standard error of `f` over `n` independent streams.
pub fn estimate<F>(root: &RandomStream, n: usize, f: F) -> Result<MCEstimate>
where
    F: Fn(usize, &mut RandomStream) -> Result<f64> + Sync + Send,
{
    Ok(MCEstimate::from_values(map_indexed(root, n, f)?))
}

/// Runs `op` on a pool of `threads` workers (`None` keeps the global pool).
pub fn with_threads<R, OP>(threads: Option<usize>, op: OP) -> Result<R>
where
    R: Send,
    OP: FnOnce() -> R + Send,
{
    match threads {
        None => Ok(op()),
        Some(0) => Err(Error::domain("thread count must be positive")),
        #[cfg(feature = "parallel")]
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Numeric(format!("thread pool: {e}")))
            .map(|pool| pool.install(op)),
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(op()),
    }
}
