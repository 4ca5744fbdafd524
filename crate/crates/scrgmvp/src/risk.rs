//! Deterministic-equivalent risk theory and grid-search parameter tuning.
//!
//! The regularized portfolio's normalizer `X` and risk numerator `Y` converge
//! to closed-form deterministic equivalents built from the spike values, the
//! spike masses `b_j`, and the aspect ratio `J`. The asymptotic risk
//! `sigma2 * Ybar / Xbar^2` is minimized over the reparameterized grid
//! `(phi1, phi2) in [0,1)^2`, which pins the regularization multipliers.

use nalgebra::DVector;

use crate::estimators::{CorrectedSpectrumEstimator, RegularizationParams};
use crate::spectral::SpikeEstimates;
use crate::spiked::SpikedCovariance;
use crate::{Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Asymptotic squared alignment between a sample spike eigenvector and its
/// population direction: `(lambda^2 - J) / (lambda (lambda + J))`.
pub fn a_coeff(lambda: f64, j_ratio: f64) -> f64 {
    (lambda * lambda - j_ratio) / (lambda * (lambda + j_ratio))
}

/// Block coefficient `gamma_i lambda / (1 + gamma_i lambda)` of the
/// regularized precision.
pub fn gamma_block(gamma_i: f64, lambda: f64) -> f64 {
    gamma_i * lambda / (1.0 + gamma_i * lambda)
}

/// One spike's contribution to the deterministic equivalents.
#[derive(Debug, Clone, Copy)]
pub struct SpikeInput {
    pub index: i32,
    pub lambda: f64,
    /// Spike mass `b = (1' v / sqrt(M))^2`.
    pub b: f64,
}

/// Everything the deterministic equivalents depend on: per-spike `(lambda, b)`,
/// the aspect ratio, and the noise variance.
#[derive(Debug, Clone)]
pub struct AsymptoticInputs {
    spikes: Vec<SpikeInput>,
    j_ratio: f64,
    sigma2: f64,
}

impl AsymptoticInputs {
    pub fn new(spikes: Vec<SpikeInput>, j_ratio: f64, sigma2: f64) -> Result<Self> {
        if !(j_ratio > 0.0 && j_ratio < 1.0) {
            return Err(Error::InvalidModel(format!("aspect ratio J = {j_ratio} must lie in (0, 1)")));
        }
        if !(sigma2 > 0.0) {
            return Err(Error::InvalidModel(format!("sigma2 = {sigma2} must be positive")));
        }
        let mut total_b = 0.0;
        for spike in &spikes {
            if spike.index == 0 {
                return Err(Error::InvalidModel("spike index must be nonzero".into()));
            }
            if spike.index > 0 && spike.lambda <= 0.0 {
                return Err(Error::InvalidModel(format!(
                    "positive spike {} needs lambda > 0",
                    spike.index
                )));
            }
            if spike.index < 0 && !(-1.0 < spike.lambda && spike.lambda < 0.0) {
                return Err(Error::InvalidModel(format!(
                    "negative spike {} needs lambda in (-1, 0)",
                    spike.index
                )));
            }
            if !(0.0..=1.0).contains(&spike.b) {
                return Err(Error::InvalidModel(format!(
                    "spike mass b = {} must lie in [0, 1]",
                    spike.b
                )));
            }
            total_b += spike.b;
        }
        if total_b > 1.0 + 1e-9 {
            return Err(Error::InvalidModel(format!(
                "spike masses sum to {total_b} > 1; they are projections of a unit vector"
            )));
        }
        Ok(Self { spikes, j_ratio, sigma2 })
    }

    /// Known-parameter inputs: exact spike values and masses from the
    /// population model at sample size `n`.
    pub fn from_model(model: &SpikedCovariance, n: usize) -> Result<Self> {
        let m = model.dim() as f64;
        let spikes = model
            .spikes()
            .iter()
            .map(|s| {
                let proj = s.vector().sum() / m.sqrt();
                SpikeInput { index: s.index(), lambda: s.lambda(), b: proj * proj }
            })
            .collect();
        Self::new(spikes, model.dim() as f64 / n as f64, model.sigma2())
    }

    /// Data-driven inputs from consistent spike estimates. Estimated masses
    /// are clamped into the feasible set (each in [0, 1], summing to at
    /// most 1) before use.
    pub fn from_estimates(estimates: &SpikeEstimates) -> Result<Self> {
        let mut spikes: Vec<SpikeInput> = estimates
            .estimates()
            .iter()
            .map(|e| SpikeInput { index: e.index, lambda: e.lambda_hat, b: e.b_hat.clamp(0.0, 1.0) })
            .collect();
        let total: f64 = spikes.iter().map(|s| s.b).sum();
        if total > 1.0 {
            for spike in &mut spikes {
                spike.b /= total;
            }
        }
        Self::new(spikes, estimates.j_ratio(), estimates.sigma2_hat())
    }

    pub fn spikes(&self) -> &[SpikeInput] {
        &self.spikes
    }

    pub fn j_ratio(&self) -> f64 {
        self.j_ratio
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Leading positive spike value, if the upper block is nonempty.
    pub fn lambda1(&self) -> Option<f64> {
        self.spikes.iter().filter(|s| s.index > 0).map(|s| s.lambda).reduce(f64::max)
    }

    /// Most negative spike value, if the lower block is nonempty.
    pub fn lambda_minus1(&self) -> Option<f64> {
        self.spikes.iter().filter(|s| s.index < 0).map(|s| s.lambda).reduce(f64::min)
    }
}

/// Deterministic equivalent of the normalizer `X = (1'/sqrt(M)) C (1/sqrt(M))`.
pub fn xbar(inputs: &AsymptoticInputs, params: &RegularizationParams) -> f64 {
    let mut x = 1.0;
    for spike in inputs.spikes() {
        let a = a_coeff(spike.lambda, inputs.j_ratio);
        let g = gamma_block(params.gamma_for(spike.index), spike.lambda);
        x -= a * spike.b * g;
    }
    x
}

/// Deterministic equivalent of the numerator `Y = (1'/sqrt(M)) C Sigma C (1/sqrt(M))`
/// in sigma2-normalized units.
pub fn ybar(inputs: &AsymptoticInputs, params: &RegularizationParams) -> f64 {
    let mut y = 1.0;
    for spike in inputs.spikes() {
        let a = a_coeff(spike.lambda, inputs.j_ratio);
        let g = gamma_block(params.gamma_for(spike.index), spike.lambda);
        let (lambda, b) = (spike.lambda, spike.b);
        y += lambda * b;
        y -= 2.0 * (lambda + 1.0) * a * b * g;
        y += a * b * (lambda * a + 1.0) * g * g;
    }
    y
}

/// Asymptotic portfolio risk `M * sigma_bar^2 = sigma2 * Ybar / Xbar^2`.
pub fn asymptotic_risk(inputs: &AsymptoticInputs, params: &RegularizationParams) -> Result<f64> {
    let x = xbar(inputs, params);
    if x == 0.0 || !x.is_finite() {
        return Err(Error::DegeneratePrecision(format!(
            "deterministic equivalent Xbar = {x} cannot be squared away"
        )));
    }
    Ok(inputs.sigma2 * ybar(inputs, params) / (x * x))
}

/// Converts grid variables to regularization multipliers:
/// `gamma1 = phi1 / ((1 - phi1) lambda1)`, `gamma2 = -phi2 / ((1 - phi2) lambda_-1)`.
pub fn phi_to_gamma(
    phi1: f64,
    phi2: f64,
    lambda1: Option<f64>,
    lambda_minus1: Option<f64>,
) -> Result<RegularizationParams> {
    RegularizationParams::from_phi(phi1, phi2, lambda1, lambda_minus1)
}

/// Outcome of the grid search over `(phi1, phi2)`.
#[derive(Debug, Clone, Copy)]
pub struct GridSearchResult {
    pub phi1: f64,
    pub phi2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Minimized asymptotic risk `sigma2 * Ybar / Xbar^2`.
    pub gbar: f64,
}

impl GridSearchResult {
    pub fn params(&self, inputs: &AsymptoticInputs) -> Result<RegularizationParams> {
        phi_to_gamma(self.phi1, self.phi2, inputs.lambda1(), inputs.lambda_minus1())
    }
}

fn grid_objective(inputs: &AsymptoticInputs, phi1: f64, phi2: f64) -> f64 {
    match phi_to_gamma(phi1, phi2, inputs.lambda1(), inputs.lambda_minus1())
        .and_then(|params| asymptotic_risk(inputs, &params))
    {
        Ok(g) if g.is_finite() => g,
        _ => f64::INFINITY,
    }
}

/// Candidate ordering: objective first, ties broken by the smallest
/// `(phi1, phi2)` lexicographically, so the argmin is independent of
/// evaluation order.
fn better(a: (f64, f64, f64), b: (f64, f64, f64)) -> (f64, f64, f64) {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Less => a,
        std::cmp::Ordering::Greater => b,
        std::cmp::Ordering::Equal => match a.1.total_cmp(&b.1) {
            std::cmp::Ordering::Less => a,
            std::cmp::Ordering::Greater => b,
            std::cmp::Ordering::Equal => {
                if a.2 <= b.2 {
                    a
                } else {
                    b
                }
            }
        },
    }
}

fn scan_points(
    inputs: &AsymptoticInputs,
    phi1_values: &[f64],
    phi2_values: &[f64],
) -> (f64, f64, f64) {
    let evaluate_row = |&phi1: &f64| {
        phi2_values
            .iter()
            .map(|&phi2| (grid_objective(inputs, phi1, phi2), phi1, phi2))
            .fold((f64::INFINITY, f64::INFINITY, f64::INFINITY), better)
    };

    #[cfg(feature = "parallel")]
    let best = phi1_values
        .par_iter()
        .map(evaluate_row)
        .reduce(|| (f64::INFINITY, f64::INFINITY, f64::INFINITY), better);
    #[cfg(not(feature = "parallel"))]
    let best = phi1_values
        .iter()
        .map(evaluate_row)
        .fold((f64::INFINITY, f64::INFINITY, f64::INFINITY), better);

    best
}

fn axis(resolution: usize) -> Vec<f64> {
    (0..resolution).map(|i| i as f64 / resolution as f64).collect()
}

fn refined_axis(center: f64, step: f64) -> Vec<f64> {
    let fine = step / 10.0;
    (-10..=10)
        .map(|i| center + i as f64 * fine)
        .filter(|phi| (0.0..1.0).contains(phi))
        .collect()
}

/// Minimizes the asymptotic risk over a uniform `(phi1, phi2)` grid on
/// `[0,1)^2`, then refines once at 10x resolution around the coarse argmin.
/// Deterministic for fixed inputs regardless of worker count; an empty block
/// pins its phi to zero.
pub fn grid_search(inputs: &AsymptoticInputs, resolution: usize) -> Result<GridSearchResult> {
    if resolution < 2 {
        return Err(Error::Config(format!("grid resolution {resolution} must be at least 2")));
    }
    let step = 1.0 / resolution as f64;
    let phi1_values = if inputs.lambda1().is_some() { axis(resolution) } else { vec![0.0] };
    let phi2_values = if inputs.lambda_minus1().is_some() { axis(resolution) } else { vec![0.0] };

    let coarse = scan_points(inputs, &phi1_values, &phi2_values);
    if !coarse.0.is_finite() {
        return Err(Error::DegeneratePrecision(
            "every grid point hit a pole of the asymptotic risk".into(),
        ));
    }

    let fine1 =
        if inputs.lambda1().is_some() { refined_axis(coarse.1, step) } else { vec![0.0] };
    let fine2 =
        if inputs.lambda_minus1().is_some() { refined_axis(coarse.2, step) } else { vec![0.0] };
    let best = better(coarse, scan_points(inputs, &fine1, &fine2));

    let params = phi_to_gamma(best.1, best.2, inputs.lambda1(), inputs.lambda_minus1())?;
    Ok(GridSearchResult {
        phi1: best.1,
        phi2: best.2,
        gamma1: params.gamma1(),
        gamma2: params.gamma2(),
        gbar: best.0,
    })
}

/// Dense surface dump `(phi1, phi2, gbar)` in row-major order, for plotting.
pub fn grid_scan(inputs: &AsymptoticInputs, resolution: usize) -> Vec<(f64, f64, f64)> {
    let phi1_values = if inputs.lambda1().is_some() { axis(resolution) } else { vec![0.0] };
    let phi2_values = if inputs.lambda_minus1().is_some() { axis(resolution) } else { vec![0.0] };
    let mut rows = Vec::with_capacity(phi1_values.len() * phi2_values.len());
    for &phi1 in &phi1_values {
        for &phi2 in &phi2_values {
            rows.push((phi1, phi2, grid_objective(inputs, phi1, phi2)));
        }
    }
    rows
}

/// Finite-sample counterparts of the deterministic equivalents for one
/// realized spectrum: `X = (1'/sqrt(M)) C (1/sqrt(M))` and the
/// sigma2-normalized `Y = (1'/sqrt(M)) C Sigma C (1/sqrt(M)) / sigma2`,
/// both exact in O(M r).
pub fn empirical_xy(
    est: &CorrectedSpectrumEstimator,
    params: &RegularizationParams,
    model: &SpikedCovariance,
) -> Result<(f64, f64)> {
    let m = est.dim();
    if m != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: m });
    }
    let scaled_ones = DVector::from_element(m, 1.0 / (m as f64).sqrt());
    let z = est.apply_regularized_precision(params, &scaled_ones)?;
    let x = z.dot(&scaled_ones);
    let y = model.quadratic_form(&z)? / model.sigma2();
    Ok((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single_spike_inputs() -> AsymptoticInputs {
        AsymptoticInputs::new(
            vec![SpikeInput { index: 1, lambda: 20.0, b: 0.02 }],
            0.5,
            1.0,
        )
        .unwrap()
    }

    fn paper_style_inputs(m: usize, n: usize) -> AsymptoticInputs {
        let b = 1.0 / m as f64;
        AsymptoticInputs::new(
            vec![
                SpikeInput { index: 1, lambda: 20.0, b },
                SpikeInput { index: 2, lambda: 10.0, b },
                SpikeInput { index: 3, lambda: 5.0, b },
                SpikeInput { index: -1, lambda: -0.99, b },
            ],
            m as f64 / n as f64,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn a_coeff_hand_values() {
        let j = 0.36f64;
        assert_relative_eq!(a_coeff(j.sqrt(), j), 0.0, epsilon = 1e-12);
        assert_relative_eq!(a_coeff(3.0, 0.0), 1.0, epsilon = 1e-12);
        assert_relative_eq!(a_coeff(20.0, 0.5), 399.5 / 410.0, epsilon = 1e-12);
    }

    #[test]
    fn a_coeff_stays_in_unit_interval() {
        for &j in &[0.05f64, 0.3, 0.6, 0.9] {
            let mut lambda = j.sqrt() + 1e-6;
            while lambda < 50.0 {
                let a = a_coeff(lambda, j);
                assert!((0.0..1.0).contains(&a), "a({lambda}, {j}) = {a}");
                lambda *= 1.7;
            }
        }
    }

    #[test]
    fn gamma_block_hand_values() {
        assert_eq!(gamma_block(0.0, 5.0), 0.0);
        assert_relative_eq!(gamma_block(1.0, 1.0), 0.5, epsilon = 1e-14);
        // Monotone approach to 1 for positive lambda.
        let mut last = 0.0;
        for &gamma in &[0.1, 1.0, 10.0, 100.0, 1000.0] {
            let g = gamma_block(gamma, 3.0);
            assert!(g > last && g < 1.0);
            last = g;
        }
    }

    #[test]
    fn xbar_hand_values() {
        let empty = AsymptoticInputs::new(vec![], 0.5, 1.0).unwrap();
        let zero = RegularizationParams::unregularized();
        assert_eq!(xbar(&empty, &zero), 1.0);

        let inputs = single_spike_inputs();
        assert_eq!(xbar(&inputs, &zero), 1.0);

        let params = RegularizationParams::from_gamma(1.0, 0.0, Some(20.0), None).unwrap();
        let expect = 1.0 - (399.5 / 410.0) * 0.02 * (20.0 / 21.0);
        assert_relative_eq!(xbar(&inputs, &params), expect, epsilon = 1e-12);
        assert_relative_eq!(xbar(&inputs, &params), 0.9814401858, epsilon = 1e-9);
    }

    #[test]
    fn ybar_hand_values() {
        let empty = AsymptoticInputs::new(vec![], 0.5, 1.0).unwrap();
        let zero = RegularizationParams::unregularized();
        assert_eq!(ybar(&empty, &zero), 1.0);

        // gamma = 0 leaves only the constant terms 1 + sum lambda b.
        let inputs = paper_style_inputs(50, 100);
        let expect = 1.0 + (20.0 + 10.0 + 5.0 - 0.99) / 50.0;
        assert_relative_eq!(ybar(&inputs, &zero), expect, epsilon = 1e-12);
    }

    #[test]
    fn asymptotic_risk_no_spikes_is_sigma2() {
        let inputs = AsymptoticInputs::new(vec![], 0.5, 1.0).unwrap();
        let risk = asymptotic_risk(&inputs, &RegularizationParams::unregularized()).unwrap();
        assert_relative_eq!(risk, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn grid_optimum_beats_the_unregularized_corner() {
        let inputs = paper_style_inputs(50, 100);
        let result = grid_search(&inputs, 100).unwrap();
        let corner = asymptotic_risk(&inputs, &RegularizationParams::unregularized()).unwrap();
        assert!(result.gbar <= corner, "gbar {} vs corner {}", result.gbar, corner);
    }

    #[test]
    fn phi_to_gamma_hand_values() {
        let p = phi_to_gamma(0.0, 0.0, Some(20.0), Some(-0.99)).unwrap();
        assert_eq!(p.gamma1(), 0.0);
        assert_eq!(p.gamma2(), 0.0);

        let p = phi_to_gamma(0.5, 0.0, Some(20.0), None).unwrap();
        assert_relative_eq!(p.gamma1(), 0.05, epsilon = 1e-14);
        assert_relative_eq!(gamma_block(p.gamma1(), 20.0), 0.5, epsilon = 1e-14);

        let p = phi_to_gamma(0.0, 0.5, None, Some(-0.99)).unwrap();
        assert_relative_eq!(p.gamma2(), 1.0 / 0.99, epsilon = 1e-12);
    }

    #[test]
    fn phi_block_form_matches_gamma_block_on_both_blocks() {
        // Theorem-style block coefficients written directly in phi must agree
        // with gamma_block applied to the converted multiplier, for every
        // spike in each block (including the leading ones).
        let (phi1, phi2) = (0.37, 0.61);
        let lambda1 = 20.0;
        let lambda_m1 = -0.99;
        let p = phi_to_gamma(phi1, phi2, Some(lambda1), Some(lambda_m1)).unwrap();
        for lambda in [20.0, 10.0, 5.0] {
            let direct = phi1 * lambda / ((1.0 - phi1) * lambda1 + phi1 * lambda);
            assert_relative_eq!(gamma_block(p.gamma1(), lambda), direct, epsilon = 1e-12);
        }
        for lambda in [-0.99_f64, -0.6] {
            let direct = -phi2 * lambda / ((1.0 - phi2) * lambda_m1 - phi2 * lambda);
            assert_relative_eq!(gamma_block(p.gamma2(), lambda), direct, epsilon = 1e-12);
        }
        // gamma_{1,1} recovers phi1 exactly.
        assert_relative_eq!(gamma_block(p.gamma1(), lambda1), phi1, epsilon = 1e-12);
    }

    #[test]
    fn grid_search_no_spikes_returns_origin() {
        let inputs = AsymptoticInputs::new(vec![], 0.25, 1.0).unwrap();
        let result = grid_search(&inputs, 50).unwrap();
        assert_eq!((result.phi1, result.phi2), (0.0, 0.0));
        assert_relative_eq!(result.gbar, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn grid_search_finds_interior_optimum_of_single_spike() {
        let inputs = single_spike_inputs();
        let result = grid_search(&inputs, 100).unwrap();
        assert!(result.phi1 > 0.0 && result.phi1 < 1.0, "phi1* = {}", result.phi1);

        // Dense 1000-point scan as the oracle for the same one-dimensional
        // objective.
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..1000 {
            let phi1 = i as f64 / 1000.0;
            let g = grid_objective(&inputs, phi1, 0.0);
            if g < best.0 {
                best = (g, phi1);
            }
        }
        assert!(
            (result.gbar - best.0).abs() <= 1e-6 * best.0,
            "grid {} vs dense oracle {}",
            result.gbar,
            best.0
        );
    }

    #[test]
    fn grid_search_beats_the_sce_point() {
        let inputs = paper_style_inputs(50, 100);
        let result = grid_search(&inputs, 100).unwrap();
        // phi values equivalent to gamma = 1 on both blocks.
        let phi1_sce = 20.0 / 21.0;
        let phi2_sce = -(-0.99) / (1.0 - (-0.99));
        let g_sce = grid_objective(&inputs, phi1_sce, phi2_sce);
        assert!(result.gbar <= g_sce, "gbar {} vs SCE point {}", result.gbar, g_sce);
    }

    #[test]
    fn grid_refinement_never_hurts() {
        let inputs = paper_style_inputs(50, 200);
        let coarse = grid_search(&inputs, 50).unwrap();
        let fine = grid_search(&inputs, 100).unwrap();
        assert!(fine.gbar <= coarse.gbar + 1e-12);
    }

    #[test]
    fn mass_validation_rejects_excess() {
        let res = AsymptoticInputs::new(
            vec![
                SpikeInput { index: 1, lambda: 5.0, b: 0.7 },
                SpikeInput { index: 2, lambda: 2.0, b: 0.6 },
            ],
            0.5,
            1.0,
        );
        assert!(res.is_err());
    }
}
