//! Indexed parallel map with an optional worker cap.

use crate::error::{Error, Result};
use rayon::prelude::*;

/// `(0..n).map(f)` evaluated on rayon, collected in index order. `workers`
/// pins a dedicated pool; `None` uses the global one. Results never depend
/// on the worker count because every slot is computed independently.
pub fn par_map<R, F>(n: usize, workers: Option<usize>, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match workers {
        None => Ok((0..n).into_par_iter().map(&f).collect()),
        Some(0) => Err(Error::invalid("workers", "must be at least 1")),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::invalid("workers", e.to_string()))?;
            Ok(pool.install(|| (0..n).into_par_iter().map(&f).collect()))
        }
    }
}
