// SPDX-License-Identifier: MIT OR Apache-2.0

//! Worker-count control.
//!
//! Every parallel reduction in the crate merges partial results in a fixed
//! order, so outputs do not depend on the number of workers.

use crate::{Error, Result};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "LATENT_LENS_WORKERS";

/// Runs `f` on a dedicated pool of `workers` threads, or on the global pool when `None`.
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Worker count from [`WORKERS_ENV`], falling back to `configured`.
pub fn resolve_workers(configured: Option<usize>) -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        _ => Ok(configured),
    }
}
