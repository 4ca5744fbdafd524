//! Sample spectrum extraction and consistent spike estimation.
//!
//! The sample covariance is eigendecomposed in full (desk-scale M), spike
//! counts are detected against the Marchenko-Pastur bulk edges, and the
//! population spike values and spike masses are recovered from the outlying
//! sample eigenvalues by inverting the forward spiked map
//! `psi(lambda) = (1 + lambda)(1 + J/lambda)`.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::risk::a_coeff;
use crate::{Error, Result};

/// Variants of the spike-mass estimator `b_hat`.
///
/// The printed estimator carries a correction factor that does not reproduce
/// the known spike mass in simulation; the default inverts the asymptotic
/// eigenvector-overlap law instead, which does. The printed forms stay
/// available for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BhatMode {
    /// Invert the overlap law: `b_hat = overlap^2 / a(lambda_hat, J)`.
    #[default]
    Consistent,
    /// Printed form: prefactor `(1+J/l)/(1-J/l)` over denominator `1 - J sigma^2`.
    Verbatim,
    /// Printed form with denominator `1 - J`.
    OneMinusJ,
}

impl std::str::FromStr for BhatMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "consistent" => Ok(Self::Consistent),
            "verbatim" => Ok(Self::Verbatim),
            "one-minus-j" => Ok(Self::OneMinusJ),
            other => Err(Error::Config(format!(
                "unknown bhat-denominator '{other}' (expected consistent, verbatim, one-minus-j)"
            ))),
        }
    }
}

/// Forward spiked map: the sample eigenvalue a population spike `lambda`
/// produces in the limit, `sigma2 * (1 + lambda)(1 + J/lambda)`.
pub fn bbp_forward(lambda: f64, sigma2: f64, j_ratio: f64) -> f64 {
    sigma2 * (1.0 + lambda) * (1.0 + j_ratio / lambda)
}

/// Marchenko-Pastur bulk support `[sigma2 (1-sqrt(J))^2, sigma2 (1+sqrt(J))^2]`.
pub fn bulk_edges(sigma2: f64, j_ratio: f64) -> (f64, f64) {
    let root = j_ratio.sqrt();
    (sigma2 * (1.0 - root) * (1.0 - root), sigma2 * (1.0 + root) * (1.0 + root))
}

/// Full eigendecomposition of a symmetric matrix, eigenvalues descending
/// with matching orthonormal column vectors.
pub fn eigendecompose_symmetric(s: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let max_asym = (s - s.transpose()).abs().max();
    if max_asym > 1e-8 {
        return Err(Error::NotSymmetric { max_asym });
    }
    let eig = s.clone().symmetric_eigen();
    let m = s.nrows();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_fn(m, |i, _| eig.eigenvalues[order[i]]);
    let mut vectors = DMatrix::zeros(m, m);
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).copy_from(&eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// The sample covariance spectrum: all eigenvalues in descending order, the
/// matching eigenvectors, and the aspect ratio `J = M/n`.
#[derive(Debug, Clone)]
pub struct SampleSpectrum {
    eigenvalues: DVector<f64>,
    vectors: DMatrix<f64>,
    j_ratio: f64,
}

impl SampleSpectrum {
    pub fn new(eigenvalues: DVector<f64>, vectors: DMatrix<f64>, j_ratio: f64) -> Result<Self> {
        if !(j_ratio > 0.0 && j_ratio < 1.0) {
            return Err(Error::InvalidModel(format!(
                "aspect ratio J = {j_ratio} must lie in (0, 1); need n > M"
            )));
        }
        if eigenvalues.len() != vectors.ncols() || vectors.nrows() != eigenvalues.len() {
            return Err(Error::DimensionMismatch {
                expected: eigenvalues.len(),
                got: vectors.ncols(),
            });
        }
        if eigenvalues.as_slice().windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidModel("eigenvalues must be sorted descending".into()));
        }
        Ok(Self { eigenvalues, vectors, j_ratio })
    }

    /// Eigendecomposes a sample covariance computed from `n` observations.
    pub fn from_sample_covariance(s: &DMatrix<f64>, n: usize) -> Result<Self> {
        let (values, vectors) = eigendecompose_symmetric(s)?;
        let j_ratio = s.nrows() as f64 / n as f64;
        Self::new(values, vectors, j_ratio)
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn j_ratio(&self) -> f64 {
        self.j_ratio
    }

    /// All sample eigenvalues, descending.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Column position of the spiked index: positive `j` counts from the top
    /// of the spectrum, negative `-k` from the bottom (index `-1` is the
    /// smallest sample eigenvalue).
    fn column_of(&self, index: i32) -> usize {
        if index > 0 {
            index as usize - 1
        } else {
            self.dim() - (-index) as usize
        }
    }

    /// Sample eigenvalue paired with a signed spike index.
    pub fn eigenvalue_of(&self, index: i32) -> f64 {
        self.eigenvalues[self.column_of(index)]
    }

    /// Retained sample eigenvector for a signed spike index.
    pub fn spiked_vector(&self, index: i32) -> DVectorView<'_, f64> {
        self.vectors.column(self.column_of(index))
    }
}

/// Inverts the forward spiked map at an outlying sample eigenvalue.
///
/// The quadratic has two roots; exactly one lies in the identifiable region
/// (`lambda > sqrt(J)` above the bulk, `-1 < lambda < -sqrt(J)` below), which
/// is the root whose forward image reproduces `s`.
pub fn estimate_spike(s: f64, sigma2: f64, j_ratio: f64) -> Result<f64> {
    let scaled = s / sigma2;
    // (scaled + 1 - J)^2 - 4*scaled rearranged to avoid cancellation at the edges.
    let disc = {
        let centered = scaled - 1.0 - j_ratio;
        centered * centered - 4.0 * j_ratio
    };
    if disc < 0.0 {
        return Err(Error::BulkEigenvalue { value: s });
    }
    let half = 0.5 * (scaled + 1.0 - j_ratio);
    let root = 0.5 * disc.sqrt();
    let (_, upper) = bulk_edges(sigma2, j_ratio);
    let lambda = if s >= upper { half + root - 1.0 } else { half - root - 1.0 };
    debug_assert!(
        (bbp_forward(lambda, sigma2, j_ratio) - s).abs() <= 1e-8 * s.abs().max(1.0),
        "selected root does not reproduce the sample eigenvalue"
    );
    Ok(lambda)
}

/// Spike mass `b = (1' v / sqrt(M))^2` estimated from the sample eigenvector.
pub fn estimate_b(
    lambda_hat: f64,
    u: DVectorView<'_, f64>,
    j_ratio: f64,
    sigma2: f64,
    mode: BhatMode,
) -> Result<f64> {
    let m = u.len() as f64;
    let overlap = u.sum() / m.sqrt();
    let overlap2 = overlap * overlap;
    match mode {
        BhatMode::Consistent => {
            if lambda_hat * lambda_hat <= j_ratio {
                return Err(Error::BulkEigenvalue { value: lambda_hat });
            }
            Ok(overlap2 / a_coeff(lambda_hat, j_ratio))
        }
        BhatMode::Verbatim | BhatMode::OneMinusJ => {
            let denom = match mode {
                BhatMode::Verbatim => 1.0 - j_ratio * sigma2,
                _ => 1.0 - j_ratio,
            };
            let ratio_denom = 1.0 - j_ratio / lambda_hat;
            if denom == 0.0 || ratio_denom == 0.0 || lambda_hat == 0.0 {
                return Err(Error::BulkEigenvalue { value: lambda_hat });
            }
            Ok((1.0 + j_ratio / lambda_hat) / ratio_denom * overlap2 / denom)
        }
    }
}

/// Noise variance estimate: the mean of the bulk (non-retained) sample
/// eigenvalues, trace-consistent under the spiked model.
pub fn estimate_sigma2(spectrum: &SampleSpectrum, r1: usize, r2: usize) -> Result<f64> {
    let m = spectrum.dim();
    if r1 + r2 >= m {
        return Err(Error::InsufficientData(format!(
            "cannot estimate noise variance with {r1}+{r2} spikes in dimension {m}"
        )));
    }
    let bulk = spectrum.eigenvalues.as_slice();
    let sum: f64 = bulk[r1..m - r2].iter().sum();
    Ok(sum / (m - r1 - r2) as f64)
}

/// Spike-count detection settings: the relative margin applied to the bulk
/// edges and the retained-count caps.
#[derive(Debug, Clone, Copy)]
pub struct DetectConfig {
    pub edge_tolerance: f64,
    pub max_r1: usize,
    pub max_r2: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self { edge_tolerance: 0.05, max_r1: 5, max_r2: 5 }
    }
}

/// Counts sample eigenvalues beyond the tolerance-widened bulk edges.
pub fn detect_spikes(
    spectrum: &SampleSpectrum,
    sigma2: f64,
    config: DetectConfig,
) -> (usize, usize) {
    let (lower, upper) = bulk_edges(sigma2, spectrum.j_ratio());
    let upper = upper * (1.0 + config.edge_tolerance);
    let lower = lower * (1.0 - config.edge_tolerance);
    let eigs = spectrum.eigenvalues.as_slice();
    let r1 = eigs.iter().take_while(|&&s| s > upper).count().min(config.max_r1);
    let r2 = eigs.iter().rev().take_while(|&&s| s < lower).count().min(config.max_r2);
    (r1, r2)
}

/// Iterates spike detection and bulk-mean noise estimation to a fixed point,
/// starting from the all-eigenvalue mean. Returns `(r1, r2, sigma2_hat)`.
pub fn detect_spikes_auto(
    spectrum: &SampleSpectrum,
    config: DetectConfig,
) -> Result<(usize, usize, f64)> {
    let mut sigma2 = spectrum.eigenvalues.mean();
    let mut counts = detect_spikes(spectrum, sigma2, config);
    for _ in 0..32 {
        sigma2 = estimate_sigma2(spectrum, counts.0, counts.1)?;
        let next = detect_spikes(spectrum, sigma2, config);
        if next == counts {
            return Ok((counts.0, counts.1, sigma2));
        }
        counts = next;
    }
    Ok((counts.0, counts.1, sigma2))
}

/// One estimated spike: its signed index, population value, and mass.
#[derive(Debug, Clone, Copy)]
pub struct SpikeEstimate {
    pub index: i32,
    pub lambda_hat: f64,
    pub b_hat: f64,
}

/// Consistent per-spike estimates plus the noise variance, as recovered from
/// one sample spectrum.
#[derive(Debug, Clone)]
pub struct SpikeEstimates {
    estimates: Vec<SpikeEstimate>,
    sigma2_hat: f64,
    r1: usize,
    r2: usize,
    j_ratio: f64,
}

impl SpikeEstimates {
    /// Runs the full estimation pipeline for fixed spike counts: bulk-mean
    /// noise variance, spike inversion for the `r1` largest and `r2` smallest
    /// sample eigenvalues, and the spike-mass estimate for each.
    pub fn from_spectrum(
        spectrum: &SampleSpectrum,
        r1: usize,
        r2: usize,
        bhat_mode: BhatMode,
    ) -> Result<Self> {
        let sigma2_hat = estimate_sigma2(spectrum, r1, r2)?;
        let j_ratio = spectrum.j_ratio();
        let mut estimates = Vec::with_capacity(r1 + r2);
        let indices = (1..=r1 as i32).chain((-(r2 as i32))..=-1);
        for index in indices {
            let s = spectrum.eigenvalue_of(index);
            let lambda_hat = estimate_spike(s, sigma2_hat, j_ratio)?;
            let expected_side = index > 0;
            if (lambda_hat > 0.0) != expected_side {
                return Err(Error::BulkEigenvalue { value: s });
            }
            let b_hat =
                estimate_b(lambda_hat, spectrum.spiked_vector(index), j_ratio, sigma2_hat, bhat_mode)?;
            estimates.push(SpikeEstimate { index, lambda_hat, b_hat });
        }
        Ok(Self { estimates, sigma2_hat, r1, r2, j_ratio })
    }

    pub fn estimates(&self) -> &[SpikeEstimate] {
        &self.estimates
    }

    pub fn sigma2_hat(&self) -> f64 {
        self.sigma2_hat
    }

    pub fn r1(&self) -> usize {
        self.r1
    }

    pub fn r2(&self) -> usize {
        self.r2
    }

    pub fn j_ratio(&self) -> f64 {
        self.j_ratio
    }

    pub fn get(&self, index: i32) -> Option<&SpikeEstimate> {
        self.estimates.iter().find(|e| e.index == index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{child_seed, generate_returns, sample_covariance, MeanVector};
    use crate::spiked::SpikedCovariance;
    use approx::assert_relative_eq;

    #[test]
    fn eigendecompose_diagonal() {
        let s = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let (values, vectors) = eigendecompose_symmetric(&s).unwrap();
        assert_relative_eq!(values[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(values[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(vectors.column(0)[0].abs(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(vectors.column(1)[1].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn eigendecompose_two_by_two_hand_example() {
        let s = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        let (values, _) = eigendecompose_symmetric(&s).unwrap();
        assert_relative_eq!(values[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(values[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn eigendecompose_rejects_asymmetric() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(eigendecompose_symmetric(&s), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn eigendecompose_reconstructs_random_symmetric() {
        let model = SpikedCovariance::canonical(1.0, 12, &[(1, 7.0), (-1, -0.6)]).unwrap();
        let panel = generate_returns(&model, &MeanVector::zeros(12), 40, 17).unwrap();
        let s = sample_covariance(&panel).unwrap();
        let (values, vectors) = eigendecompose_symmetric(&s).unwrap();
        let recon = &vectors * DMatrix::from_diagonal(&values) * vectors.transpose();
        assert!((recon - &s).abs().max() < 1e-8);
        let gram = vectors.transpose() * &vectors;
        assert!((gram - DMatrix::identity(12, 12)).abs().max() < 1e-10);
    }

    #[test]
    fn estimate_spike_classical_regime() {
        // J = 0 reduces to lambda = s - 1.
        assert_relative_eq!(estimate_spike(21.0, 1.0, 0.0).unwrap(), 20.0, epsilon = 1e-12);
    }

    #[test]
    fn estimate_spike_inverts_forward_map() {
        let s = bbp_forward(20.0, 1.0, 0.25);
        assert_relative_eq!(s, 21.2625, epsilon = 1e-12);
        assert_relative_eq!(estimate_spike(s, 1.0, 0.25).unwrap(), 20.0, epsilon = 1e-12);
    }

    #[test]
    fn estimate_spike_is_sigma2_scale_aware() {
        let s = bbp_forward(5.0, 1.0, 0.3);
        let a = estimate_spike(s, 1.0, 0.3).unwrap();
        let b = estimate_spike(2.0 * s, 2.0, 0.3).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn estimate_spike_negative_branch() {
        let s = bbp_forward(-0.99, 1.0, 0.25);
        assert_relative_eq!(estimate_spike(s, 1.0, 0.25).unwrap(), -0.99, epsilon = 1e-10);
    }

    #[test]
    fn estimate_spike_rejects_bulk_values() {
        assert!(matches!(
            estimate_spike(1.0, 1.0, 0.25),
            Err(Error::BulkEigenvalue { .. })
        ));
    }

    #[test]
    fn round_trip_sweep() {
        for &j in &[0.1f64, 0.25, 0.5, 0.9] {
            for &lambda in &[j.sqrt() + 0.01, 1.0, 5.0, 20.0] {
                let s = bbp_forward(lambda, 1.0, j);
                let hat = estimate_spike(s, 1.0, j).unwrap();
                assert!(
                    (hat - lambda).abs() < 1e-10,
                    "J={j} lambda={lambda}: got {hat}"
                );
            }
            // Negative side of the sweep.
            for &lambda in &[-(j.sqrt() + 0.01).min(0.99), -0.99] {
                if lambda <= -1.0 || lambda >= -j.sqrt() {
                    continue;
                }
                let s = bbp_forward(lambda, 1.0, j);
                let hat = estimate_spike(s, 1.0, j).unwrap();
                assert!(
                    (hat - lambda).abs() < 1e-10,
                    "J={j} lambda={lambda}: got {hat}"
                );
            }
        }
    }

    #[test]
    fn estimate_b_classical_regime() {
        let m = 16;
        let u = DVector::from_fn(m, |i, _| if i == 0 { 1.0 } else { 0.0 });
        // J = 0: no high-dimensional correction in any mode.
        for mode in [BhatMode::Consistent, BhatMode::Verbatim, BhatMode::OneMinusJ] {
            let b = estimate_b(5.0, u.column(0), 0.0, 1.0, mode).unwrap();
            assert_relative_eq!(b, 1.0 / m as f64, epsilon = 1e-12);
        }
        // Perfectly aligned direction gives b = 1.
        let aligned = DVector::from_element(m, 1.0 / (m as f64).sqrt());
        let b = estimate_b(5.0, aligned.column(0), 0.0, 1.0, BhatMode::Consistent).unwrap();
        assert_relative_eq!(b, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn estimate_b_monte_carlo_recovers_known_mass() {
        // Known first spike direction e_1 at (M, n) = (200, 400).
        let (m, n, reps) = (200usize, 400usize, 200usize);
        let model =
            SpikedCovariance::canonical(1.0, m, &[(1, 20.0), (2, 10.0), (3, 5.0), (-1, -0.99)])
                .unwrap();
        let mu = MeanVector::zeros(m);
        let mut sum = 0.0;
        for rep in 0..reps {
            let panel = generate_returns(&model, &mu, n, child_seed(2024, rep as u64)).unwrap();
            let spectrum =
                SampleSpectrum::from_sample_covariance(&sample_covariance(&panel).unwrap(), n).unwrap();
            let est = SpikeEstimates::from_spectrum(&spectrum, 3, 1, BhatMode::Consistent).unwrap();
            sum += est.get(1).unwrap().b_hat;
        }
        let mean = sum / reps as f64;
        let truth = 1.0 / m as f64;
        assert!(
            (mean - truth).abs() / truth < 0.25,
            "mean b_hat {mean} vs true {truth}"
        );
    }

    #[test]
    fn estimate_sigma2_on_scaled_identity() {
        let eigs = DVector::from_element(10, 1.0);
        let spectrum = SampleSpectrum::new(eigs, DMatrix::identity(10, 10), 0.5).unwrap();
        assert_relative_eq!(estimate_sigma2(&spectrum, 0, 0).unwrap(), 1.0, epsilon = 1e-14);

        let eigs = DVector::from_element(10, 2.0);
        let spectrum = SampleSpectrum::new(eigs, DMatrix::identity(10, 10), 0.5).unwrap();
        assert_relative_eq!(estimate_sigma2(&spectrum, 0, 0).unwrap(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn estimate_sigma2_monte_carlo() {
        let (m, n, reps) = (100usize, 200usize, 100usize);
        let model =
            SpikedCovariance::canonical(1.0, m, &[(1, 20.0), (2, 10.0), (3, 5.0), (-1, -0.99)])
                .unwrap();
        let mu = MeanVector::zeros(m);
        let mut sum = 0.0;
        for rep in 0..reps {
            let panel = generate_returns(&model, &mu, n, child_seed(7, rep as u64)).unwrap();
            let spectrum =
                SampleSpectrum::from_sample_covariance(&sample_covariance(&panel).unwrap(), n).unwrap();
            sum += estimate_sigma2(&spectrum, 3, 1).unwrap();
        }
        let mean = sum / reps as f64;
        assert!((mean - 1.0).abs() < 0.1, "mean sigma2_hat {mean}");
    }

    #[test]
    fn estimate_sigma2_rejects_too_many_spikes() {
        let eigs = DVector::from_element(4, 1.0);
        let spectrum = SampleSpectrum::new(eigs, DMatrix::identity(4, 4), 0.5).unwrap();
        assert!(estimate_sigma2(&spectrum, 2, 2).is_err());
    }

    #[test]
    fn detect_spikes_deterministic_outlier() {
        let mut eigs = vec![1.0; 20];
        eigs[0] = 50.0;
        let eigs = DVector::from_vec(eigs);
        let spectrum = SampleSpectrum::new(eigs, DMatrix::identity(20, 20), 0.25).unwrap();
        assert_eq!(detect_spikes(&spectrum, 1.0, DetectConfig::default()), (1, 0));
    }

    #[test]
    fn detect_spikes_null_model_false_positive_rate() {
        let (m, n, reps) = (100usize, 400usize, 200usize);
        let model = SpikedCovariance::new(1.0, vec![], m).unwrap();
        let mu = MeanVector::zeros(m);
        let mut clean = 0;
        for rep in 0..reps {
            let panel = generate_returns(&model, &mu, n, child_seed(31, rep as u64)).unwrap();
            let spectrum =
                SampleSpectrum::from_sample_covariance(&sample_covariance(&panel).unwrap(), n).unwrap();
            let (r1, r2, _) = detect_spikes_auto(&spectrum, DetectConfig::default()).unwrap();
            if (r1, r2) == (0, 0) {
                clean += 1;
            }
        }
        assert!(clean as f64 >= 0.95 * reps as f64, "clean runs: {clean}/{reps}");
    }

    #[test]
    fn detect_spikes_recovers_design_counts() {
        let (m, n, reps) = (100usize, 400usize, 200usize);
        let model =
            SpikedCovariance::canonical(1.0, m, &[(1, 20.0), (2, 10.0), (3, 5.0), (-1, -0.99)])
                .unwrap();
        let mu = MeanVector::zeros(m);
        let mut hits = 0;
        for rep in 0..reps {
            let panel = generate_returns(&model, &mu, n, child_seed(87, rep as u64)).unwrap();
            let spectrum =
                SampleSpectrum::from_sample_covariance(&sample_covariance(&panel).unwrap(), n).unwrap();
            let (r1, r2, _) = detect_spikes_auto(&spectrum, DetectConfig::default()).unwrap();
            if (r1, r2) == (3, 1) {
                hits += 1;
            }
        }
        assert!(hits as f64 >= 0.90 * reps as f64, "detections: {hits}/{reps}");
    }

    #[test]
    fn spectrum_rejects_bad_aspect_ratio() {
        let eigs = DVector::from_element(4, 1.0);
        assert!(SampleSpectrum::new(eigs, DMatrix::identity(4, 4), 1.5).is_err());
    }
}
