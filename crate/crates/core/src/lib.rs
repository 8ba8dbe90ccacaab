//! Tabular regression toolkit for company-valuation style data: multi-table
//! ingestion and cleaning, per-company feature aggregation, histogram
//! gradient boosting (depth-wise and leaf-wise with GOSS/EFB), importance
//! based feature selection, and cross-validated stacking under a Bayesian
//! ridge head.

pub mod config;
pub mod error;
pub mod features;
pub mod gbm;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod select;
pub mod stack;
pub mod synth;
pub mod tabular;

pub use error::{Error, Result};

/// Runs `f` on a dedicated rayon pool with `workers` threads (0 = rayon's
/// default). Results never depend on the worker count.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}
