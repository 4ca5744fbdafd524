//! Spiked population covariance model and its closed-form oracle quantities.
//!
//! The population covariance is a scaled identity plus a fixed-rank
//! perturbation, `sigma2 * (I + sum_j lambda_j v_j v_j')`, with positive
//! spikes indexed `1..=r1` and negative spikes indexed `-r2..=-1`. All
//! oracle quantities (covariance, square root, inverse, GMVP weights,
//! minimum variance) have rank-r closed forms; dense matrices are only
//! materialized for oracles and tests.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Unit-vector norm tolerance for spike vectors.
const UNIT_NORM_TOL: f64 = 1e-12;
/// Pairwise orthogonality tolerance for spike vectors.
const ORTHO_TOL: f64 = 1e-10;
/// Budget-constraint tolerance for portfolio weights.
const BUDGET_TOL: f64 = 1e-10;

/// One spike of the population model: a signed index label, the spike value
/// `lambda`, and its unit direction.
///
/// Positive indices form the upper block (`lambda > 0`), negative indices the
/// lower block (`-1 < lambda < 0`).
#[derive(Debug, Clone)]
pub struct SpikeSpec {
    index: i32,
    lambda: f64,
    vector: DVector<f64>,
}

impl SpikeSpec {
    pub fn new(index: i32, lambda: f64, vector: DVector<f64>) -> Result<Self> {
        if index == 0 {
            return Err(Error::InvalidModel("spike index must be nonzero".into()));
        }
        if !lambda.is_finite() {
            return Err(Error::InvalidModel(format!(
                "spike {index} has non-finite lambda"
            )));
        }
        if index > 0 && lambda <= 0.0 {
            return Err(Error::InvalidModel(format!(
                "positive spike {index} requires lambda > 0, got {lambda}"
            )));
        }
        if index < 0 && !(-1.0 < lambda && lambda < 0.0) {
            return Err(Error::InvalidModel(format!(
                "negative spike {index} requires -1 < lambda < 0, got {lambda}"
            )));
        }
        let norm = vector.norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidModel(format!(
                "spike {index} vector norm {norm} is not 1"
            )));
        }
        Ok(Self { index, lambda, vector })
    }

    pub fn index(&self) -> i32 {
        self.index
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.vector
    }
}

/// Spiked population covariance: `sigma2 * (I_M + sum_j lambda_j v_j v_j')`.
///
/// Immutable after construction; all operations are pure, so the model can be
/// shared read-only across Monte-Carlo workers.
#[derive(Debug, Clone)]
pub struct SpikedCovariance {
    sigma2: f64,
    spikes: Vec<SpikeSpec>,
    dim: usize,
}

impl SpikedCovariance {
    /// Builds and validates a model. Positive spikes must carry indices
    /// `1..=r1` with strictly decreasing lambdas, negative spikes indices
    /// `-r2..=-1` with strictly decreasing lambdas from `-r2` to `-1`
    /// (so index `-1` is the most negative spike); ties are rejected.
    pub fn new(sigma2: f64, spikes: Vec<SpikeSpec>, dim: usize) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::InvalidModel(format!("sigma2 must be > 0, got {sigma2}")));
        }
        if dim == 0 {
            return Err(Error::InvalidModel("dimension must be >= 1".into()));
        }
        let mut positive: Vec<&SpikeSpec> = spikes.iter().filter(|s| s.index > 0).collect();
        let mut negative: Vec<&SpikeSpec> = spikes.iter().filter(|s| s.index < 0).collect();
        positive.sort_by_key(|s| s.index);
        negative.sort_by_key(|s| s.index);

        for (rank, spike) in positive.iter().enumerate() {
            if spike.index as usize != rank + 1 {
                return Err(Error::InvalidModel(format!(
                    "positive spike indices must be 1..=r1 without gaps; found {}",
                    spike.index
                )));
            }
        }
        for (rank, spike) in negative.iter().enumerate() {
            let expected = -(negative.len() as i32) + rank as i32;
            if spike.index != expected {
                return Err(Error::InvalidModel(format!(
                    "negative spike indices must be -r2..=-1 without gaps; found {}",
                    spike.index
                )));
            }
        }
        // Strict ordering within each block: lambda_1 > ... > lambda_r1 and
        // lambda_{-r2} > ... > lambda_{-1}.
        for pair in positive.windows(2) {
            if pair[0].lambda <= pair[1].lambda {
                return Err(Error::InvalidModel(format!(
                    "positive spikes must be strictly decreasing: lambda_{} = {} vs lambda_{} = {}",
                    pair[0].index, pair[0].lambda, pair[1].index, pair[1].lambda
                )));
            }
        }
        for pair in negative.windows(2) {
            if pair[0].lambda <= pair[1].lambda {
                return Err(Error::InvalidModel(format!(
                    "negative spikes must be strictly decreasing: lambda_{} = {} vs lambda_{} = {}",
                    pair[0].index, pair[0].lambda, pair[1].index, pair[1].lambda
                )));
            }
        }

        let r = spikes.len();
        if r >= dim {
            return Err(Error::InvalidModel(format!(
                "spike count {r} must be small relative to dimension {dim}"
            )));
        }
        for spike in &spikes {
            if spike.vector.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: spike.vector.len() });
            }
        }
        for i in 0..r {
            for j in (i + 1)..r {
                let dot = spikes[i].vector.dot(&spikes[j].vector);
                if dot.abs() > ORTHO_TOL {
                    return Err(Error::InvalidModel(format!(
                        "spike vectors {} and {} are not orthogonal (dot = {dot:.3e})",
                        spikes[i].index, spikes[j].index
                    )));
                }
            }
        }

        // Canonical storage order: positive block by index, then negative block.
        let mut ordered = Vec::with_capacity(r);
        let mut sorted: Vec<SpikeSpec> = spikes;
        sorted.sort_by_key(|s| if s.index > 0 { s.index } else { i32::MAX + s.index });
        ordered.append(&mut sorted);

        Ok(Self { sigma2, spikes: ordered, dim })
    }

    /// Model with canonical-basis spike vectors: positive index `j` uses
    /// `e_j` (1-based from the front), negative index `-k` uses `e_{M+1-k}`
    /// (from the back), matching the synthetic experiment designs.
    pub fn canonical(sigma2: f64, dim: usize, spikes: &[(i32, f64)]) -> Result<Self> {
        let specs = spikes
            .iter()
            .map(|&(index, lambda)| {
                let col = if index > 0 {
                    index as usize - 1
                } else {
                    dim.checked_sub((-index) as usize).ok_or_else(|| {
                        Error::InvalidModel(format!("negative spike {index} out of range for M={dim}"))
                    })?
                };
                if col >= dim {
                    return Err(Error::InvalidModel(format!(
                        "spike {index} out of range for M={dim}"
                    )));
                }
                let mut v = DVector::zeros(dim);
                v[col] = 1.0;
                SpikeSpec::new(index, lambda, v)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sigma2, specs, dim)
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Spikes in canonical order: positive block by index, then negative block.
    pub fn spikes(&self) -> &[SpikeSpec] {
        &self.spikes
    }

    pub fn positive_spikes(&self) -> impl Iterator<Item = &SpikeSpec> {
        self.spikes.iter().filter(|s| s.index > 0)
    }

    pub fn negative_spikes(&self) -> impl Iterator<Item = &SpikeSpec> {
        self.spikes.iter().filter(|s| s.index < 0)
    }

    pub fn r1(&self) -> usize {
        self.positive_spikes().count()
    }

    pub fn r2(&self) -> usize {
        self.negative_spikes().count()
    }

    /// Dense covariance `sigma2 * (I + sum lambda v v')`.
    pub fn dense_covariance(&self) -> DMatrix<f64> {
        let mut m = DMatrix::identity(self.dim, self.dim);
        for spike in &self.spikes {
            m += spike.lambda * &spike.vector * spike.vector.transpose();
        }
        m * self.sigma2
    }

    /// Dense symmetric square root `sigma * (I + sum (sqrt(1+lambda)-1) v v')`.
    pub fn dense_sqrt(&self) -> DMatrix<f64> {
        let mut m = DMatrix::identity(self.dim, self.dim);
        for spike in &self.spikes {
            let coeff = (1.0 + spike.lambda).sqrt() - 1.0;
            m += coeff * &spike.vector * spike.vector.transpose();
        }
        m * self.sigma2.sqrt()
    }

    /// Dense inverse `sigma2^-1 * (I - sum (lambda/(1+lambda)) v v')`.
    pub fn dense_inverse(&self) -> DMatrix<f64> {
        let mut m = DMatrix::identity(self.dim, self.dim);
        for spike in &self.spikes {
            let coeff = spike.lambda / (1.0 + spike.lambda);
            m -= coeff * &spike.vector * spike.vector.transpose();
        }
        m / self.sigma2
    }

    /// Applies the covariance square root to a vector in O(M r), without
    /// materializing the dense matrix. Used on the sampling hot path.
    pub fn apply_sqrt(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let mut out = x.clone();
        for spike in &self.spikes {
            let coeff = ((1.0 + spike.lambda).sqrt() - 1.0) * spike.vector.dot(x);
            out.axpy(coeff, &spike.vector, 1.0);
        }
        Ok(out * self.sigma2.sqrt())
    }

    /// Quadratic form `w' Sigma w` in O(M r).
    pub fn quadratic_form(&self, w: &DVector<f64>) -> Result<f64> {
        if w.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: w.len() });
        }
        let mut q = w.dot(w);
        for spike in &self.spikes {
            let proj = spike.vector.dot(w);
            q += spike.lambda * proj * proj;
        }
        Ok(self.sigma2 * q)
    }

    /// Oracle GMVP weights `Sigma^-1 1 / (1' Sigma^-1 1)` via the dense
    /// inverse.
    pub fn oracle_gmvp(&self) -> PortfolioWeights {
        let ones = DVector::from_element(self.dim, 1.0);
        let precision_ones = self.dense_inverse() * &ones;
        let total = precision_ones.sum();
        PortfolioWeights::new(precision_ones / total, "oracle", None)
            .expect("oracle weights always satisfy the budget constraint")
    }

    /// Oracle minimum variance `1 / (1' Sigma^-1 1)`, the lower bound every
    /// estimated portfolio's true risk must respect.
    pub fn oracle_risk(&self) -> f64 {
        let ones = DVector::from_element(self.dim, 1.0);
        let precision_ones = self.dense_inverse() * &ones;
        1.0 / precision_ones.sum()
    }
}

/// Budget-constrained portfolio weights with provenance.
#[derive(Debug, Clone)]
pub struct PortfolioWeights {
    weights: DVector<f64>,
    estimator_id: String,
    /// Regularization parameters `(gamma1, gamma2)` when applicable.
    params: Option<(f64, f64)>,
}

impl PortfolioWeights {
    pub fn new(
        weights: DVector<f64>,
        estimator_id: impl Into<String>,
        params: Option<(f64, f64)>,
    ) -> Result<Self> {
        let sum = weights.sum();
        if !sum.is_finite() {
            return Err(Error::DegeneratePrecision("weights sum to a non-finite value".into()));
        }
        if (sum - 1.0).abs() > BUDGET_TOL {
            return Err(Error::InvalidModel(format!(
                "weights sum {sum} violates the budget constraint"
            )));
        }
        Ok(Self { weights, estimator_id: estimator_id.into(), params })
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn estimator_id(&self) -> &str {
        &self.estimator_id
    }

    pub fn params(&self) -> Option<(f64, f64)> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.len() == 0
    }

    /// True portfolio risk `w' Sigma w` under a known population model.
    pub fn risk_under(&self, model: &SpikedCovariance) -> Result<f64> {
        model.quadratic_form(&self.weights)
    }
}
