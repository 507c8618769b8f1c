//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature (on by default) [`Parallelism::Parallel`] runs
//! on the rayon pool; without it, or with [`Parallelism::Sequential`], work
//! runs in order on the calling thread. Results are always returned in index
//! order, so both paths produce identical output.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    Sequential,
    #[default]
    Parallel,
}

/// Environment variable that bounds the worker pool size.
pub const WORKERS_ENV: &str = "ATTRIBENCH_WORKERS";

pub fn map_indexed<T, F>(par: Parallelism, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match par {
        #[cfg(feature = "parallel")]
        Parallelism::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Runs `f` inside a pool sized by [`WORKERS_ENV`] when it is set.
pub fn with_worker_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    #[cfg(feature = "parallel")]
    {
        let requested = std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0);
        if let Some(n) = requested {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                return pool.install(f);
            }
            log::warn!("could not build a {n}-thread pool, using the global pool");
        }
    }
    f()
}
