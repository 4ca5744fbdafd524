//! GMVP weight constructors for the five compared covariance estimators.
//!
//! `scme` solves against the raw sample covariance, `shre` against the
//! Ledoit-Wolf linear shrinkage toward a scaled identity, `wshre` against an
//! eigenvalue shrink toward the grand mean, and `sce`/`scre` against the
//! rank-r spectrally-corrected precision, without regularization (`sce`,
//! gamma = 1) or with tunable block multipliers (`scre`). The rank-r paths
//! cost O(M r) and never materialize an M x M matrix.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::sampling::{gmvp_from_precision, sample_covariance, ReturnsMatrix};
use crate::spectral::{SampleSpectrum, SpikeEstimates};
use crate::spiked::{PortfolioWeights, SpikedCovariance};
use crate::{Error, Result};

/// Stable identifiers for the compared estimators, as used in CLI flags and
/// output CSVs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorId {
    Scme,
    Shre,
    Wshre,
    Sce,
    Scre,
    Oracle,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 5] =
        [EstimatorId::Scme, EstimatorId::Shre, EstimatorId::Wshre, EstimatorId::Sce, EstimatorId::Scre];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorId::Scme => "scme",
            EstimatorId::Shre => "shre",
            EstimatorId::Wshre => "wshre",
            EstimatorId::Sce => "sce",
            EstimatorId::Scre => "scre",
            EstimatorId::Oracle => "oracle",
        }
    }
}

impl std::fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EstimatorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scme" => Ok(EstimatorId::Scme),
            "shre" => Ok(EstimatorId::Shre),
            "wshre" => Ok(EstimatorId::Wshre),
            "sce" => Ok(EstimatorId::Sce),
            "scre" => Ok(EstimatorId::Scre),
            "oracle" => Ok(EstimatorId::Oracle),
            other => Err(Error::Config(format!("unknown estimator id '{other}'"))),
        }
    }
}

/// Regularization parameters in both parameterizations: the per-block
/// multipliers `(gamma1, gamma2)` of the regularized precision and the
/// grid-search variables `(phi1, phi2)` in [0, 1). The pairs are kept
/// consistent through `gamma_i = phi_i / ((1 - phi_i) |lambda_block|)`
/// against the leading spike of each block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizationParams {
    gamma1: f64,
    gamma2: f64,
    phi1: f64,
    phi2: f64,
}

impl RegularizationParams {
    /// No correction: `gamma = phi = 0`, the identity precision.
    pub fn unregularized() -> Self {
        Self { gamma1: 0.0, gamma2: 0.0, phi1: 0.0, phi2: 0.0 }
    }

    /// Builds from the grid variables. `lambda1` is the largest positive
    /// spike, `lambda_minus1` the most negative one; a missing block pins its
    /// gamma to zero.
    pub fn from_phi(
        phi1: f64,
        phi2: f64,
        lambda1: Option<f64>,
        lambda_minus1: Option<f64>,
    ) -> Result<Self> {
        for (name, phi) in [("phi1", phi1), ("phi2", phi2)] {
            if !(0.0..1.0).contains(&phi) {
                return Err(Error::InvalidModel(format!("{name} = {phi} must lie in [0, 1)")));
            }
        }
        let gamma1 = match lambda1 {
            Some(l1) if l1 > 0.0 => phi1 / ((1.0 - phi1) * l1),
            Some(l1) => {
                return Err(Error::InvalidModel(format!("lambda1 = {l1} must be positive")))
            }
            None => 0.0,
        };
        let gamma2 = match lambda_minus1 {
            Some(lm1) if lm1 < 0.0 => -phi2 / ((1.0 - phi2) * lm1),
            Some(lm1) => {
                return Err(Error::InvalidModel(format!("lambda_minus1 = {lm1} must be negative")))
            }
            None => 0.0,
        };
        Ok(Self {
            gamma1,
            gamma2,
            phi1: if lambda1.is_some() { phi1 } else { 0.0 },
            phi2: if lambda_minus1.is_some() { phi2 } else { 0.0 },
        })
    }

    /// Builds from explicit gamma multipliers, recovering the matching phis.
    pub fn from_gamma(
        gamma1: f64,
        gamma2: f64,
        lambda1: Option<f64>,
        lambda_minus1: Option<f64>,
    ) -> Result<Self> {
        if gamma1 < 0.0 || gamma2 < 0.0 {
            return Err(Error::InvalidModel(format!(
                "gamma multipliers must be >= 0, got ({gamma1}, {gamma2})"
            )));
        }
        let phi1 = match lambda1 {
            Some(l1) => gamma1 * l1 / (1.0 + gamma1 * l1),
            None => 0.0,
        };
        let phi2 = match lambda_minus1 {
            Some(lm1) => -gamma2 * lm1 / (1.0 - gamma2 * lm1),
            None => 0.0,
        };
        Ok(Self { gamma1, gamma2, phi1, phi2 })
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }

    pub fn gamma2(&self) -> f64 {
        self.gamma2
    }

    pub fn phi1(&self) -> f64 {
        self.phi1
    }

    pub fn phi2(&self) -> f64 {
        self.phi2
    }

    /// Block multiplier for a spike: `gamma1` for positive indices, `gamma2`
    /// for negative ones.
    pub fn gamma_for(&self, index: i32) -> f64 {
        if index > 0 {
            self.gamma1
        } else {
            self.gamma2
        }
    }

    pub fn as_pair(&self) -> (f64, f64) {
        (self.gamma1, self.gamma2)
    }
}

/// A spectrally-corrected covariance in rank-r form: spike values paired
/// with retained sample eigenvectors, over a `sigma2 I` base.
#[derive(Debug, Clone)]
pub struct CorrectedSpectrumEstimator {
    sigma2: f64,
    spikes: Vec<CorrectedSpike>,
    dim: usize,
}

#[derive(Debug, Clone)]
struct CorrectedSpike {
    index: i32,
    lambda: f64,
    vector: DVector<f64>,
    ones_dot: f64,
}

impl CorrectedSpectrumEstimator {
    /// Builds directly from `(index, lambda, vector)` triples.
    pub fn from_parts(
        sigma2: f64,
        spikes: Vec<(i32, f64, DVector<f64>)>,
        dim: usize,
    ) -> Result<Self> {
        for (index, lambda, vector) in &spikes {
            if *index > 0 && *lambda <= 0.0 {
                return Err(Error::InvalidModel(format!(
                    "corrected spike {index} must have positive lambda, got {lambda}"
                )));
            }
            if *index < 0 && !(-1.0 < *lambda && *lambda < 0.0) {
                return Err(Error::InvalidModel(format!(
                    "corrected spike {index} must have lambda in (-1, 0), got {lambda}"
                )));
            }
            if vector.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: vector.len() });
            }
        }
        for i in 0..spikes.len() {
            for k in (i + 1)..spikes.len() {
                let dot = spikes[i].2.dot(&spikes[k].2);
                if dot.abs() > 1e-8 {
                    return Err(Error::InvalidModel(format!(
                        "retained eigenvectors {} and {} are not orthogonal (dot = {dot:.3e})",
                        spikes[i].0, spikes[k].0
                    )));
                }
            }
        }
        let spikes = spikes
            .into_iter()
            .map(|(index, lambda, vector)| {
                let ones_dot = vector.sum();
                CorrectedSpike { index, lambda, vector, ones_dot }
            })
            .collect();
        Ok(Self { sigma2, spikes, dim })
    }

    /// Known-parameter mode: true spike values from the population model,
    /// retained eigenvectors from the sample spectrum.
    pub fn known_parameters(
        model: &SpikedCovariance,
        spectrum: &SampleSpectrum,
    ) -> Result<Self> {
        if spectrum.dim() != model.dim() {
            return Err(Error::DimensionMismatch { expected: model.dim(), got: spectrum.dim() });
        }
        let spikes = model
            .spikes()
            .iter()
            .map(|s| (s.index(), s.lambda(), spectrum.spiked_vector(s.index()).into_owned()))
            .collect();
        Self::from_parts(model.sigma2(), spikes, model.dim())
    }

    /// Data-driven mode: spike values estimated from the spectrum itself.
    pub fn data_driven(spectrum: &SampleSpectrum, estimates: &SpikeEstimates) -> Result<Self> {
        let spikes = estimates
            .estimates()
            .iter()
            .map(|e| (e.index, e.lambda_hat, spectrum.spiked_vector(e.index).into_owned()))
            .collect();
        Self::from_parts(estimates.sigma2_hat(), spikes, spectrum.dim())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Retained spikes as `(index, lambda, vector)` views.
    pub fn spikes(&self) -> impl Iterator<Item = (i32, f64, DVectorView<'_, f64>)> {
        self.spikes.iter().map(|s| (s.index, s.lambda, s.vector.column(0)))
    }

    pub fn lambda1(&self) -> Option<f64> {
        self.spikes.iter().filter(|s| s.index > 0).map(|s| s.lambda).reduce(f64::max)
    }

    pub fn lambda_minus1(&self) -> Option<f64> {
        self.spikes.iter().filter(|s| s.index < 0).map(|s| s.lambda).reduce(f64::min)
    }

    /// `C_tilde 1` in O(M r): `1 - sum_j gamma_{i,j} (1' u_j) u_j` with
    /// `gamma_{i,j} = gamma_i lambda_j / (1 + gamma_i lambda_j)`. The noise
    /// variance cancels in the weight ratio and is omitted.
    pub fn regularized_precision_ones(&self, params: &RegularizationParams) -> Result<DVector<f64>> {
        let mut out = DVector::from_element(self.dim, 1.0);
        for spike in &self.spikes {
            let gamma_i = params.gamma_for(spike.index);
            let denom = 1.0 + gamma_i * spike.lambda;
            if denom == 0.0 {
                return Err(Error::DegeneratePrecision(format!(
                    "pole 1 + gamma * lambda = 0 at spike {}",
                    spike.index
                )));
            }
            let coeff = gamma_i * spike.lambda / denom * spike.ones_dot;
            out.axpy(-coeff, &spike.vector, 1.0);
        }
        Ok(out)
    }

    /// Applies `C_tilde` to an arbitrary vector in O(M r).
    pub fn apply_regularized_precision(
        &self,
        params: &RegularizationParams,
        x: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let mut out = x.clone();
        for spike in &self.spikes {
            let gamma_i = params.gamma_for(spike.index);
            let denom = 1.0 + gamma_i * spike.lambda;
            if denom == 0.0 {
                return Err(Error::DegeneratePrecision(format!(
                    "pole 1 + gamma * lambda = 0 at spike {}",
                    spike.index
                )));
            }
            let coeff = gamma_i * spike.lambda / denom * spike.vector.dot(x);
            out.axpy(-coeff, &spike.vector, 1.0);
        }
        Ok(out)
    }
}

/// Classic GMVP from the sample covariance, via a linear solve.
pub fn weights_scme(s: &DMatrix<f64>) -> Result<PortfolioWeights> {
    let ones = DVector::from_element(s.nrows(), 1.0);
    let solved = s
        .clone()
        .cholesky()
        .map(|chol| chol.solve(&ones))
        .or_else(|| s.clone().lu().solve(&ones))
        .ok_or_else(|| Error::SingularMatrix("sample covariance is not invertible".into()))?;
    if solved.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularMatrix("sample covariance solve produced non-finite values".into()));
    }
    gmvp_from_precision(solved, "scme", None)
}

/// Spectral correction only: the regularized precision at `gamma = 1`.
pub fn weights_sce(est: &CorrectedSpectrumEstimator) -> Result<PortfolioWeights> {
    let params = RegularizationParams::from_gamma(1.0, 1.0, est.lambda1(), est.lambda_minus1())?;
    let precision_ones = est.regularized_precision_ones(&params)?;
    gmvp_from_precision(precision_ones, "sce", None)
}

/// Spectrally-corrected and regularized weights at explicit parameters.
pub fn weights_scre(
    est: &CorrectedSpectrumEstimator,
    params: &RegularizationParams,
) -> Result<PortfolioWeights> {
    let precision_ones = est.regularized_precision_ones(params)?;
    gmvp_from_precision(precision_ones, "scre", Some(params.as_pair()))
}

/// Ledoit-Wolf linear shrinkage toward the scaled identity, plus the plug-in
/// intensity estimated from the demeaned panel. Returns `(covariance, rho)`.
pub fn ledoit_wolf(returns: &ReturnsMatrix) -> Result<(DMatrix<f64>, f64)> {
    let s = sample_covariance(returns)?;
    let (n, m) = (returns.n(), returns.dim());
    let mean_eig = s.trace() / m as f64;

    let mut dispersion = 0.0;
    for i in 0..m {
        for k in 0..m {
            let target = if i == k { mean_eig } else { 0.0 };
            let diff = s[(i, k)] - target;
            dispersion += diff * diff;
        }
    }
    let dispersion = dispersion / m as f64;
    if dispersion == 0.0 {
        return Ok((s, 0.0));
    }

    let y = returns.data();
    let row_mean = y.row_mean();
    let s_norm2 = s.iter().map(|x| x * x).sum::<f64>();
    let mut beta_bar = 0.0;
    for t in 0..n {
        let row = (y.row(t) - &row_mean).transpose();
        let norm2 = row.dot(&row);
        let quad = row.dot(&(&s * &row));
        beta_bar += norm2 * norm2 - 2.0 * quad + s_norm2;
    }
    let beta_bar = beta_bar / (n * n) as f64 / m as f64;

    let rho = (beta_bar.min(dispersion) / dispersion).clamp(0.0, 1.0);
    let mut shrunk = s * (1.0 - rho);
    for i in 0..m {
        shrunk[(i, i)] += rho * mean_eig;
    }
    Ok((shrunk, rho))
}

/// GMVP from the Ledoit-Wolf shrinkage covariance.
pub fn weights_shre(returns: &ReturnsMatrix) -> Result<PortfolioWeights> {
    let (cov, _rho) = ledoit_wolf(returns)?;
    let ones = DVector::from_element(cov.nrows(), 1.0);
    let solved = cov
        .clone()
        .cholesky()
        .map(|chol| chol.solve(&ones))
        .or_else(|| cov.lu().solve(&ones))
        .ok_or_else(|| Error::SingularMatrix("shrinkage covariance is not invertible".into()))?;
    gmvp_from_precision(solved, "shre", None)
}

/// Weighted eigenvalue shrinkage: each sample eigenvalue is pulled toward
/// the grand mean with weight `n / (n + c * s_j / s_bar)`, eigenvectors
/// kept. The `s_j / s_bar` normalization keeps the weights, and hence the
/// portfolio, invariant to rescaling the return panel.
pub fn weights_wshre(s: &DMatrix<f64>, n: usize, c: f64) -> Result<PortfolioWeights> {
    let (values, vectors) = crate::spectral::eigendecompose_symmetric(s)?;
    let grand_mean = values.mean();
    if grand_mean <= 0.0 {
        return Err(Error::SingularMatrix("sample spectrum has non-positive mean".into()));
    }
    let m = s.nrows();
    let mut precision_ones = DVector::zeros(m);
    let ones = DVector::from_element(m, 1.0);
    for j in 0..m {
        let weight = n as f64 / (n as f64 + c * values[j] / grand_mean);
        let shrunk = weight * values[j] + (1.0 - weight) * grand_mean;
        if shrunk <= 0.0 {
            return Err(Error::SingularMatrix(format!(
                "shrunk eigenvalue {shrunk} is not positive"
            )));
        }
        let u = vectors.column(j);
        precision_ones.axpy(u.dot(&ones) / shrunk, &u, 1.0);
    }
    gmvp_from_precision(precision_ones, "wshre", None)
}

/// Shrunk spectrum used by `weights_wshre`, exposed for its betweenness
/// contract: each output eigenvalue lies between the input and the grand mean.
pub fn wshre_spectrum(values: &DVector<f64>, n: usize, c: f64) -> DVector<f64> {
    let grand_mean = values.mean();
    DVector::from_fn(values.len(), |j, _| {
        let weight = n as f64 / (n as f64 + c * values[j] / grand_mean);
        weight * values[j] + (1.0 - weight) * grand_mean
    })
}
