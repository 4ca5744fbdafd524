//! Global minimum variance portfolios under the spiked covariance model.
//!
//! The library builds GMVP weights from five covariance estimators (sample
//! covariance, Ledoit-Wolf shrinkage, weighted eigenvalue shrinkage, spectral
//! correction, and spectrally-corrected regularization), provides the
//! deterministic-equivalent risk theory used to tune the regularization
//! parameters, and ships the Monte-Carlo and rolling-backtest harnesses that
//! compare them.

pub mod error;
pub mod estimators;
pub mod experiments;
pub mod io;
pub mod risk;
pub mod sampling;
pub mod spectral;
pub mod spiked;

pub use error::Error;
pub use estimators::{CorrectedSpectrumEstimator, EstimatorId, RegularizationParams};
pub use experiments::{BacktestConfig, ExperimentConfig, RiskRecord, SummaryRow};
pub use risk::AsymptoticInputs;
pub use sampling::{MeanVector, ReturnsMatrix};
pub use spectral::{BhatMode, SampleSpectrum, SpikeEstimates};
pub use spiked::{PortfolioWeights, SpikeSpec, SpikedCovariance};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Caps the global worker pool; 0 keeps the automatic size. Ignored when the
/// crate is built without the `parallel` feature. Call once, before any
/// parallel work.
#[cfg(feature = "parallel")]
pub fn configure_workers(workers: usize) -> Result<()> {
    if workers == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

#[cfg(not(feature = "parallel"))]
pub fn configure_workers(_workers: usize) -> Result<()> {
    Ok(())
}

/// Fallible map over `0..count`, in parallel when the `parallel` feature is
/// enabled. Results come back in index order either way, so output never
/// depends on worker count.
pub(crate) fn try_map_indexed<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}
