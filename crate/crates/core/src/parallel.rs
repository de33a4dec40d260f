//! Order-preserving parallel map with a thread cap.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Applies `f` to every item on at most `jobs` threads. Results keep the input
/// order, and the reported error is the first one in that order, so the
/// outcome never depends on scheduling.
pub fn map<T, U, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    let results: Vec<Result<U>> = if jobs <= 1 || items.len() <= 1 {
        items.iter().map(&f).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::config(format!("cannot start {jobs} worker threads: {e}")))?;
        pool.install(|| items.par_iter().map(&f).collect())
    };
    results.into_iter().collect()
}
