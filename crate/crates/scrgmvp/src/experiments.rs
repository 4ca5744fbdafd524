//! Monte-Carlo and rolling-backtest experiment harnesses.
//!
//! Repetitions and window positions are independent work items: each draws
//! its RNG from `child_seed(level, k)`, results are keyed by index and merged
//! in index order, and output is sorted canonically before it is written, so
//! a run's records are identical for any worker count.

use nalgebra::DVector;

use crate::estimators::{
    weights_sce, weights_scme, weights_scre, weights_shre, weights_wshre,
    CorrectedSpectrumEstimator, EstimatorId, RegularizationParams,
};
use crate::risk::{grid_search, AsymptoticInputs, GridSearchResult};
use crate::sampling::{child_seed, random_mean, sample_covariance, ReturnsMatrix};
use crate::spectral::{bulk_edges, BhatMode, DetectConfig, SampleSpectrum, SpikeEstimates};
use crate::spiked::SpikedCovariance;
use crate::{try_map_indexed, Error, Result};

/// Reserved child-seed stream for the experiment-level mean vector draw.
const MU_STREAM: u64 = u64::MAX;

/// One experiment measurement: which estimator, at which problem size, on
/// which repetition, produced which risk. Synthetic runs record the true
/// risk `w' Sigma w`; backtests record realized out-of-sample variance.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskRecord {
    pub estimator: String,
    pub m: usize,
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub risk: f64,
    pub phi1: Option<f64>,
    pub phi2: Option<f64>,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
}

impl RiskRecord {
    fn plain(estimator: &str, m: usize, n: usize, rep: usize, seed: u64, risk: f64) -> Self {
        Self {
            estimator: estimator.to_string(),
            m,
            n,
            rep,
            seed,
            risk,
            phi1: None,
            phi2: None,
            gamma1: None,
            gamma2: None,
        }
    }

    fn with_params(mut self, gs: &GridSearchResult) -> Self {
        self.phi1 = Some(gs.phi1);
        self.phi2 = Some(gs.phi2);
        self.gamma1 = Some(gs.gamma1);
        self.gamma2 = Some(gs.gamma2);
        self
    }
}

/// Canonical record order for stable output files.
pub fn sort_records(records: &mut [RiskRecord]) {
    records.sort_by(|a, b| {
        (a.estimator.as_str(), a.n, a.rep).cmp(&(b.estimator.as_str(), b.n, b.rep))
    });
}

/// Configuration of the synthetic protocols.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: SpikedCovariance,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub base_seed: u64,
    pub estimators: Vec<EstimatorId>,
    pub grid_resolution: usize,
    /// Weighted-shrinkage constant for the `wshre` baseline.
    pub wshre_c: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.n_grid.is_empty() {
            return Err(Error::Config("the sample-size grid is empty".into()));
        }
        for &n in &self.n_grid {
            if n <= self.model.dim() {
                return Err(Error::Config(format!(
                    "n = {n} must exceed M = {} so the aspect ratio stays below 1",
                    self.model.dim()
                )));
            }
        }
        if self.grid_resolution < 2 {
            return Err(Error::Config("grid resolution must be at least 2".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators requested".into()));
        }
        Ok(())
    }
}

fn known_parameter_scre_plan(
    model: &SpikedCovariance,
    n: usize,
    resolution: usize,
) -> Result<(AsymptoticInputs, GridSearchResult, RegularizationParams)> {
    let inputs = AsymptoticInputs::from_model(model, n)?;
    let gs = grid_search(&inputs, resolution)?;
    let params = gs.params(&inputs)?;
    Ok((inputs, gs, params))
}

/// Consistency protocol: at every sample size, run the regularized portfolio
/// at its grid-optimal parameters and record the realized risk next to its
/// deterministic equivalent (estimator ids `scre` and `scre-deq`). Both are
/// plain per-portfolio variances.
pub fn run_consistency(config: &ExperimentConfig) -> Result<Vec<RiskRecord>> {
    config.validate()?;
    let model = &config.model;
    let m = model.dim();
    let mu = random_mean(m, child_seed(config.base_seed, MU_STREAM));

    let mut records = Vec::new();
    for &n in &config.n_grid {
        let (_, gs, params) = known_parameter_scre_plan(model, n, config.grid_resolution)?;
        let deq_risk = gs.gbar / m as f64;
        let level = child_seed(config.base_seed, n as u64);
        let per_rep = try_map_indexed(config.reps, |rep| {
            let seed = child_seed(level, rep as u64);
            let panel = crate::sampling::generate_returns(model, &mu, n, seed)?;
            let spectrum = SampleSpectrum::from_sample_covariance(&sample_covariance(&panel)?, n)?;
            let est = CorrectedSpectrumEstimator::known_parameters(model, &spectrum)?;
            let w = weights_scre(&est, &params)?;
            let empirical = w.risk_under(model)?;
            Ok([
                RiskRecord::plain("scre", m, n, rep, seed, empirical).with_params(&gs),
                RiskRecord::plain("scre-deq", m, n, rep, seed, deq_risk).with_params(&gs),
            ])
        })?;
        records.extend(per_rep.into_iter().flatten());
    }
    sort_records(&mut records);
    Ok(records)
}

/// Five-estimator comparison protocol on synthetic data: one panel per
/// repetition, true risks against the population model, plus one `oracle`
/// record per sample size carrying the minimum-variance bound.
pub fn run_compare(config: &ExperimentConfig) -> Result<Vec<RiskRecord>> {
    config.validate()?;
    let model = &config.model;
    let m = model.dim();
    let mu = random_mean(m, child_seed(config.base_seed, MU_STREAM));
    let oracle_risk = model.oracle_risk();

    let wants = |id: EstimatorId| config.estimators.contains(&id);
    let needs_spectrum = wants(EstimatorId::Sce) || wants(EstimatorId::Scre);

    let mut records = Vec::new();
    for &n in &config.n_grid {
        if wants(EstimatorId::Oracle) {
            records.push(RiskRecord::plain("oracle", m, n, 0, 0, oracle_risk));
        }
        let scre_plan = if wants(EstimatorId::Scre) {
            let (_, gs, params) = known_parameter_scre_plan(model, n, config.grid_resolution)?;
            Some((gs, params))
        } else {
            None
        };

        let level = child_seed(config.base_seed, n as u64);
        let per_rep = try_map_indexed(config.reps, |rep| {
            let seed = child_seed(level, rep as u64);
            let panel = crate::sampling::generate_returns(model, &mu, n, seed)?;
            let s = sample_covariance(&panel)?;
            let mut out = Vec::with_capacity(config.estimators.len());

            let corrected = if needs_spectrum {
                let spectrum = SampleSpectrum::from_sample_covariance(&s, n)?;
                Some(CorrectedSpectrumEstimator::known_parameters(model, &spectrum)?)
            } else {
                None
            };

            for &id in &config.estimators {
                let record = match id {
                    EstimatorId::Oracle => continue,
                    EstimatorId::Scme => {
                        let w = weights_scme(&s)?;
                        RiskRecord::plain("scme", m, n, rep, seed, w.risk_under(model)?)
                    }
                    EstimatorId::Shre => {
                        let w = weights_shre(&panel)?;
                        RiskRecord::plain("shre", m, n, rep, seed, w.risk_under(model)?)
                    }
                    EstimatorId::Wshre => {
                        let w = weights_wshre(&s, n, config.wshre_c)?;
                        RiskRecord::plain("wshre", m, n, rep, seed, w.risk_under(model)?)
                    }
                    EstimatorId::Sce => {
                        let w = weights_sce(corrected.as_ref().expect("spectrum computed"))?;
                        RiskRecord::plain("sce", m, n, rep, seed, w.risk_under(model)?)
                    }
                    EstimatorId::Scre => {
                        let (gs, params) = scre_plan.as_ref().expect("plan computed");
                        let w = weights_scre(corrected.as_ref().expect("spectrum computed"), params)?;
                        RiskRecord::plain("scre", m, n, rep, seed, w.risk_under(model)?)
                            .with_params(gs)
                    }
                };
                out.push(record);
            }
            Ok(out)
        })?;
        records.extend(per_rep.into_iter().flatten());
    }
    sort_records(&mut records);
    Ok(records)
}

/// Configuration of the rolling real-data protocol.
#[derive(Debug, Clone)]
pub struct BacktestConfig {
    pub window: usize,
    pub horizon: usize,
    pub step: usize,
    /// Upper bound on window positions; `None` uses every available window.
    pub max_windows: Option<usize>,
    pub estimators: Vec<EstimatorId>,
    /// Fixed spike counts; `None` auto-detects per window.
    pub spikes: Option<(usize, usize)>,
    pub grid_resolution: usize,
    pub bhat_mode: BhatMode,
    pub wshre_c: f64,
    pub detect: DetectConfig,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            window: 200,
            horizon: 30,
            step: 1,
            max_windows: None,
            estimators: EstimatorId::ALL.to_vec(),
            spikes: Some((3, 1)),
            grid_resolution: 100,
            bhat_mode: BhatMode::default(),
            wshre_c: 1.0,
            detect: DetectConfig::default(),
        }
    }
}

/// Sample variance of the held-out portfolio return series `w' y_t`.
fn realized_variance(test: &ReturnsMatrix, weights: &DVector<f64>) -> f64 {
    let series = test.data() * weights;
    let mean = series.mean();
    series.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (series.len() as f64 - 1.0)
}

/// Clamps requested spike counts to the sample eigenvalues that actually lie
/// outside the Marchenko-Pastur bulk, so forced counts degrade gracefully on
/// windows whose spectrum does not support them.
fn effective_spike_counts(
    spectrum: &SampleSpectrum,
    requested: (usize, usize),
) -> Result<(usize, usize)> {
    let (r1, r2) = requested;
    let sigma2 = crate::spectral::estimate_sigma2(spectrum, r1, r2)?;
    let (lower, upper) = bulk_edges(sigma2, spectrum.j_ratio());
    let eigs = spectrum.eigenvalues().as_slice();
    let above = eigs.iter().take_while(|&&s| s > upper).count();
    let below = eigs.iter().rev().take_while(|&&s| s < lower).count();
    Ok((r1.min(above), r2.min(below)))
}

/// Rolling backtest: window `k` trains on rows `[k, k + window)` and tests on
/// rows `[k + window, k + window + horizon)`, stepping by `step`. Records
/// carry the window index as `rep` and the realized out-of-sample variance.
pub fn run_backtest(returns: &ReturnsMatrix, config: &BacktestConfig) -> Result<Vec<RiskRecord>> {
    if config.window < 2 || config.horizon < 2 {
        return Err(Error::Config("window and horizon must both be at least 2".into()));
    }
    if config.step == 0 {
        return Err(Error::Config("step must be at least 1".into()));
    }
    if config.window <= returns.dim() {
        return Err(Error::Config(format!(
            "training window {} must exceed the asset count {}",
            config.window,
            returns.dim()
        )));
    }
    let rows = returns.n();
    let needed = config.window + config.horizon;
    if rows < needed {
        return Err(Error::InsufficientData(format!(
            "need at least {needed} rows for one window, found {rows}"
        )));
    }
    let available = (rows - needed) / config.step + 1;
    let windows = config.max_windows.map_or(available, |cap| cap.min(available));

    let wants = |id: EstimatorId| config.estimators.contains(&id);
    let needs_spectrum = wants(EstimatorId::Sce) || wants(EstimatorId::Scre);
    let m = returns.dim();

    let per_window = try_map_indexed(windows, |k| {
        let start = k * config.step;
        let train = returns.slice_rows(start, start + config.window)?;
        let test =
            returns.slice_rows(start + config.window, start + config.window + config.horizon)?;
        let s = sample_covariance(&train)?;
        let n = config.window;
        let mut out = Vec::with_capacity(config.estimators.len());

        let corrected = if needs_spectrum {
            let spectrum = SampleSpectrum::from_sample_covariance(&s, n)?;
            let (r1, r2) = match config.spikes {
                Some(requested) => effective_spike_counts(&spectrum, requested)?,
                None => {
                    let (r1, r2, _) = crate::spectral::detect_spikes_auto(&spectrum, config.detect)?;
                    (r1, r2)
                }
            };
            let estimates = SpikeEstimates::from_spectrum(&spectrum, r1, r2, config.bhat_mode)?;
            Some((CorrectedSpectrumEstimator::data_driven(&spectrum, &estimates)?, estimates))
        } else {
            None
        };

        for &id in &config.estimators {
            let record = match id {
                EstimatorId::Oracle => continue,
                EstimatorId::Scme => {
                    let w = weights_scme(&s)?;
                    RiskRecord::plain("scme", m, n, k, 0, realized_variance(&test, w.weights()))
                }
                EstimatorId::Shre => {
                    let w = weights_shre(&train)?;
                    RiskRecord::plain("shre", m, n, k, 0, realized_variance(&test, w.weights()))
                }
                EstimatorId::Wshre => {
                    let w = weights_wshre(&s, n, config.wshre_c)?;
                    RiskRecord::plain("wshre", m, n, k, 0, realized_variance(&test, w.weights()))
                }
                EstimatorId::Sce => {
                    let (est, _) = corrected.as_ref().expect("spectrum computed");
                    let w = weights_sce(est)?;
                    RiskRecord::plain("sce", m, n, k, 0, realized_variance(&test, w.weights()))
                }
                EstimatorId::Scre => {
                    let (est, estimates) = corrected.as_ref().expect("spectrum computed");
                    let inputs = AsymptoticInputs::from_estimates(estimates)?;
                    let gs = grid_search(&inputs, config.grid_resolution)?;
                    let params = gs.params(&inputs)?;
                    let w = weights_scre(est, &params)?;
                    RiskRecord::plain("scre", m, n, k, 0, realized_variance(&test, w.weights()))
                        .with_params(&gs)
                }
            };
            out.push(record);
        }
        Ok(out)
    })?;

    let mut records: Vec<RiskRecord> = per_window.into_iter().flatten().collect();
    sort_records(&mut records);
    Ok(records)
}

/// One line of the per-(estimator, n) summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub estimator: String,
    pub n: usize,
    pub mean_risk: f64,
    pub stderr: f64,
    pub reps: usize,
}

/// Mean risk and standard error per `(estimator, n)` cell, rows sorted
/// canonically. A single-record cell reports a standard error of zero.
pub fn summarize(records: &[RiskRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no records to summarize".into()));
    }
    use std::collections::BTreeMap;
    let mut cells: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for record in records {
        cells.entry((record.estimator.clone(), record.n)).or_default().push(record.risk);
    }
    let rows = cells
        .into_iter()
        .map(|((estimator, n), risks)| {
            let count = risks.len();
            let mean = risks.iter().sum::<f64>() / count as f64;
            let stderr = if count > 1 {
                let var = risks.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
                    / (count as f64 - 1.0);
                (var / count as f64).sqrt()
            } else {
                0.0
            };
            SummaryRow { estimator, n, mean_risk: mean, stderr, reps: count }
        })
        .collect();
    Ok(rows)
}
