//! Bounded worker pool with ordered results.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Environment variable consulted when no worker count is given.
pub const WORKERS_ENV: &str = "BGRET_WORKERS";

pub struct Pool {
    inner: rayon::ThreadPool,
}

impl Pool {
    /// `workers == 0` picks one thread per available core.
    pub fn new(workers: usize) -> Result<Self> {
        let inner = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        Ok(Pool { inner })
    }

    pub fn workers(&self) -> usize {
        self.inner.current_num_threads()
    }

    /// Applies `f` to every item; output order matches input order.
    pub fn map<I, R, F>(&self, items: &[I], f: F) -> Vec<R>
    where
        I: Sync,
        R: Send,
        F: Fn(&I) -> R + Sync + Send,
    {
        self.inner.install(|| items.par_iter().map(&f).collect())
    }
}

/// Worker count from an explicit value, else `BGRET_WORKERS`, else 0.
pub fn resolve_workers(explicit: Option<usize>) -> Result<usize> {
    if let Some(w) = explicit {
        return Ok(w);
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("{WORKERS_ENV}={v:?} is not a worker count"))),
        Err(_) => Ok(0),
    }
}
