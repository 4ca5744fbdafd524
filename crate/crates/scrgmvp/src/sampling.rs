//! Synthetic return panels and the sample covariance.
//!
//! Panels are drawn as `y_t = mu + Sigma^{1/2} x_t` with standard-normal
//! innovations; the square root is applied in O(M r) via the spiked
//! structure. RNG state is created per call from an explicit seed, so
//! repetitions can run on any worker in any order without changing output.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::spiked::{PortfolioWeights, SpikedCovariance};
use crate::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9e3779b97f4a7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Seed for repetition `k` of a sweep: the k-th output of a splitmix64
/// stream started at `base_seed`. Independent repetitions can then be
/// evaluated in any order, on any worker, with identical results.
pub fn child_seed(base_seed: u64, k: u64) -> u64 {
    splitmix64(base_seed.wrapping_add(GOLDEN_GAMMA.wrapping_mul(k.wrapping_add(1))))
}

/// Per-period expected returns.
#[derive(Debug, Clone)]
pub struct MeanVector {
    mu: DVector<f64>,
}

impl MeanVector {
    pub fn new(mu: DVector<f64>) -> Result<Self> {
        if mu.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidModel("mean vector has non-finite entries".into()));
        }
        Ok(Self { mu })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { mu: DVector::zeros(dim) }
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.len() == 0
    }
}

/// Mean vector with entries drawn uniformly from (-1, 1).
pub fn random_mean(dim: usize, seed: u64) -> MeanVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MeanVector { mu: DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)) }
}

/// An n x M panel of returns: rows are time observations, columns assets.
#[derive(Debug, Clone)]
pub struct ReturnsMatrix {
    data: DMatrix<f64>,
    labels: Option<Vec<String>>,
}

impl ReturnsMatrix {
    pub fn new(data: DMatrix<f64>, labels: Option<Vec<String>>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InsufficientData("a returns panel cannot be empty".into()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("returns panel has non-finite entries".into()));
        }
        if let Some(labels) = &labels {
            if labels.len() != data.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: data.ncols(),
                    got: labels.len(),
                });
            }
        }
        Ok(Self { data, labels })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Row range `[start, end)` as a new panel, keeping labels.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if end > self.n() || start >= end {
            return Err(Error::InsufficientData(format!(
                "row slice {start}..{end} out of bounds for panel with {} rows",
                self.n()
            )));
        }
        Self::new(self.data.rows(start, end - start).into_owned(), self.labels.clone())
    }
}

/// Draws `n` i.i.d. rows `mu + Sigma^{1/2} x` with standard-normal `x`.
pub fn generate_returns(
    model: &SpikedCovariance,
    mu: &MeanVector,
    n: usize,
    seed: u64,
) -> Result<ReturnsMatrix> {
    let dim = model.dim();
    if mu.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: mu.len() });
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!("need n >= 2 observations, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = DMatrix::zeros(n, dim);
    let mut x = DVector::zeros(dim);
    for t in 0..n {
        for i in 0..dim {
            x[i] = rng.sample(StandardNormal);
        }
        let row = model.apply_sqrt(&x)? + mu.as_vector();
        data.row_mut(t).copy_from(&row.transpose());
    }
    ReturnsMatrix::new(data, None)
}

/// Sample covariance `S = (1/(n-1)) sum (y_i - ybar)(y_i - ybar)'`.
pub fn sample_covariance(returns: &ReturnsMatrix) -> Result<DMatrix<f64>> {
    let n = returns.n();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "sample covariance needs at least 2 observations, got {n}"
        )));
    }
    let y = returns.data();
    let mean = y.row_mean();
    let mut centered = y.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let s = centered.transpose() * centered / (n as f64 - 1.0);
    // Force exact symmetry against accumulation-order noise.
    let mut sym = s.clone();
    sym += s.transpose();
    Ok(sym * 0.5)
}

/// GMVP weights from an explicit precision form: `w = C 1 / (1' C 1)`.
pub fn gmvp_from_precision(
    precision_ones: DVector<f64>,
    estimator_id: &str,
    params: Option<(f64, f64)>,
) -> Result<PortfolioWeights> {
    let total = precision_ones.sum();
    if !total.is_finite() || total == 0.0 {
        return Err(Error::DegeneratePrecision(format!(
            "1' C 1 = {total} cannot normalize a portfolio"
        )));
    }
    PortfolioWeights::new(precision_ones / total, estimator_id, params)
}
