//! File formats: returns/price CSVs, record and summary CSVs, the sectioned
//! key-value config format, and run manifests.
//!
//! Every writer uses fixed field ordering and 17-significant-digit float
//! serialization, so files are byte-identical across runs with the same
//! config and seeds, and returns round-trip exactly through write/read.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::experiments::{RiskRecord, SummaryRow};
use crate::sampling::ReturnsMatrix;
use crate::spiked::SpikedCovariance;
use crate::{Error, Result};

/// 17 significant digits: enough to reproduce any f64 exactly on re-read.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Raw price history: strictly increasing dates, positive prices.
#[derive(Debug, Clone)]
pub struct PricePanel {
    dates: Vec<String>,
    prices: DMatrix<f64>,
    tickers: Vec<String>,
}

impl PricePanel {
    pub fn new(dates: Vec<String>, prices: DMatrix<f64>, tickers: Vec<String>) -> Result<Self> {
        if dates.len() != prices.nrows() {
            return Err(Error::DimensionMismatch { expected: prices.nrows(), got: dates.len() });
        }
        if tickers.len() != prices.ncols() {
            return Err(Error::DimensionMismatch { expected: prices.ncols(), got: tickers.len() });
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("dates must be strictly increasing".into()));
        }
        if prices.iter().any(|&p| !(p.is_finite() && p > 0.0)) {
            return Err(Error::Data("prices must be positive and finite".into()));
        }
        Ok(Self { dates, prices, tickers })
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn prices(&self) -> &DMatrix<f64> {
        &self.prices
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }
}

/// Per-asset log returns `ln(p_t / p_{t-1})`; one fewer row than the panel.
pub fn log_returns(panel: &PricePanel) -> Result<ReturnsMatrix> {
    let n = panel.prices.nrows();
    if n < 2 {
        return Err(Error::InsufficientData("need at least 2 price rows".into()));
    }
    let m = panel.prices.ncols();
    let data = DMatrix::from_fn(n - 1, m, |t, a| {
        (panel.prices[(t + 1, a)] / panel.prices[(t, a)]).ln()
    });
    ReturnsMatrix::new(data, Some(panel.tickers.clone()))
}

/// Uniform subset of `k` asset columns without replacement, deterministic in
/// the seed; the surviving columns keep their original relative order.
pub fn subset_columns(returns: &ReturnsMatrix, k: usize, seed: u64) -> Result<ReturnsMatrix> {
    let m = returns.dim();
    if k > m {
        return Err(Error::Config(format!("cannot select {k} columns out of {m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, m, k).into_vec();
    chosen.sort_unstable();
    let data = DMatrix::from_fn(returns.n(), k, |r, c| returns.data()[(r, chosen[c])]);
    let labels = returns
        .labels()
        .map(|labels| chosen.iter().map(|&c| labels[c].clone()).collect::<Vec<_>>());
    ReturnsMatrix::new(data, labels)
}

/// Writes the `date,TICKER1,...,TICKERM` returns schema. Synthetic panels
/// without labels get `A1..AM` tickers and `t1..tn` dates.
pub fn write_returns_csv(path: &Path, returns: &ReturnsMatrix, dates: Option<&[String]>) -> Result<()> {
    let m = returns.dim();
    let tickers: Vec<String> = match returns.labels() {
        Some(labels) => labels.to_vec(),
        None => (1..=m).map(|i| format!("A{i}")).collect(),
    };
    if let Some(dates) = dates {
        if dates.len() != returns.n() {
            return Err(Error::DimensionMismatch { expected: returns.n(), got: dates.len() });
        }
    }
    let mut out = String::new();
    out.push_str("date");
    for ticker in &tickers {
        out.push(',');
        out.push_str(ticker);
    }
    out.push('\n');
    for t in 0..returns.n() {
        match dates {
            Some(dates) => out.push_str(&dates[t]),
            None => {
                let _ = write!(out, "t{}", t + 1);
            }
        }
        for a in 0..m {
            out.push(',');
            out.push_str(&fmt_f64(returns.data()[(t, a)]));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<String>, DMatrix<f64>)> {
    if !path.exists() {
        return Err(Error::Data(format!("file not found: {}", path.display())));
    }
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 2 {
        return Err(Error::Data(format!(
            "{}: expected a date column plus at least one asset",
            path.display()
        )));
    }
    let tickers: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let m = tickers.len();
    let mut dates = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if record.len() != m + 1 {
            return Err(Error::Data(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                row_idx + 2,
                record.len(),
                m + 1
            )));
        }
        dates.push(record[0].to_string());
        for field in record.iter().skip(1) {
            let value: f64 = field.parse().map_err(|_| {
                Error::Data(format!(
                    "{}: row {} has a non-numeric value '{field}'",
                    path.display(),
                    row_idx + 2
                ))
            })?;
            values.push(value);
        }
    }
    let n = dates.len();
    let data = DMatrix::from_row_slice(n, m, &values);
    Ok((dates, tickers, data))
}

/// Reads the returns schema back; inverse of [`write_returns_csv`].
pub fn read_returns_csv(path: &Path) -> Result<(ReturnsMatrix, Vec<String>)> {
    let (dates, tickers, data) = read_table(path)?;
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Data(format!("{}: non-finite return value", path.display())));
    }
    Ok((ReturnsMatrix::new(data, Some(tickers))?, dates))
}

/// Reads a price panel in the same schema (prices instead of returns).
pub fn read_price_csv(path: &Path) -> Result<PricePanel> {
    let (dates, tickers, data) = read_table(path)?;
    PricePanel::new(dates, data, tickers)
}

/// Risk-record schema: `estimator,M,n,rep,seed,risk,phi1,phi2,gamma1,gamma2`
/// with empty parameter fields on rows from unparameterized estimators.
pub fn write_records_csv(path: &Path, records: &[RiskRecord]) -> Result<()> {
    let mut out = String::from("estimator,M,n,rep,seed,risk,phi1,phi2,gamma1,gamma2\n");
    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.estimator,
            r.m,
            r.n,
            r.rep,
            r.seed,
            fmt_f64(r.risk),
            opt(r.phi1),
            opt(r.phi2),
            opt(r.gamma1),
            opt(r.gamma2)
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Summary schema: `estimator,n,mean_risk,stderr,reps`.
pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut out = String::from("estimator,n,mean_risk,stderr,reps\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.estimator,
            row.n,
            fmt_f64(row.mean_risk),
            fmt_f64(row.stderr),
            row.reps
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Grid-scan surface schema: `phi1,phi2,gbar` in row-major order.
pub fn write_grid_scan_csv(path: &Path, rows: &[(f64, f64, f64)]) -> Result<()> {
    let mut out = String::from("phi1,phi2,gbar\n");
    for &(phi1, phi2, gbar) in rows {
        let _ = writeln!(out, "{},{},{}", fmt_f64(phi1), fmt_f64(phi2), fmt_f64(gbar));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Sectioned flat key-value text: `[section]` headers, `key = value` lines,
/// `#` comments. Repeated keys accumulate (used for spike lists). Entry
/// order is preserved, so a file round-trips losslessly through
/// parse/render.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConfigFile {
    entries: Vec<(String, String, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            match line.split_once('=') {
                Some((key, value)) => entries.push((
                    section.clone(),
                    key.trim().to_string(),
                    value.trim().to_string(),
                )),
                None => {
                    return Err(Error::Config(format!(
                        "line {}: expected 'key = value', got '{line}'",
                        idx + 1
                    )))
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Config(format!("config file not found: {}", path.display())));
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Last value wins for singly-valued keys.
    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(s, k, _)| s == section && k == key)
            .map(|(_, _, v)| v.as_str())
    }

    pub fn get_all(&self, section: &str, key: &str) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(s, k, _)| s == section && k == key)
            .map(|(_, _, v)| v.as_str())
            .collect()
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl Into<String>) {
        self.entries.push((section.to_string(), key.to_string(), value.into()));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut current = None::<&str>;
        for (section, key, value) in &self.entries {
            if current != Some(section.as_str()) {
                if current.is_some() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                current = Some(section);
            }
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    /// Sections present, in first-appearance order.
    pub fn sections(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (section, _, _) in &self.entries {
            if seen.insert(section.as_str()) {
                out.push(section.as_str());
            }
        }
        out
    }
}

/// A run's provenance: the resolved configuration echo plus seeds, code
/// version, and creation timestamp, in the same sectioned flat text format.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config: ConfigFile,
    pub base_seed: u64,
    pub subset_seed: Option<u64>,
    pub version: String,
    pub created: String,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut full = self.config.clone();
        full.set("run", "base-seed", self.base_seed.to_string());
        if let Some(seed) = self.subset_seed {
            full.set("run", "subset-seed", seed.to_string());
        }
        full.set("run", "version", &self.version);
        full.set("run", "created", &self.created);
        full.render()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let full = ConfigFile::parse(text)?;
        let base_seed = full
            .get("run", "base-seed")
            .ok_or_else(|| Error::Config("manifest is missing [run] base-seed".into()))?
            .parse()
            .map_err(|_| Error::Config("manifest base-seed must be an integer".into()))?;
        let subset_seed = match full.get("run", "subset-seed") {
            Some(raw) => Some(
                raw.parse()
                    .map_err(|_| Error::Config("manifest subset-seed must be an integer".into()))?,
            ),
            None => None,
        };
        let version = full
            .get("run", "version")
            .ok_or_else(|| Error::Config("manifest is missing [run] version".into()))?
            .to_string();
        let created = full
            .get("run", "created")
            .ok_or_else(|| Error::Config("manifest is missing [run] created".into()))?
            .to_string();
        let config = ConfigFile {
            entries: full.entries.into_iter().filter(|(s, _, _)| s != "run").collect(),
        };
        Ok(Self { config, base_seed, subset_seed, version, created })
    }
}

/// Builds the spiked model from a `[model]` section: `dim`, `sigma2`,
/// repeated `spike = <index> <lambda>` lines, and the `vectors` preset
/// (only `canonical-basis` is defined).
pub fn model_from_config(config: &ConfigFile) -> Result<SpikedCovariance> {
    let dim: usize = config
        .get("model", "dim")
        .ok_or_else(|| Error::Config("[model] dim is required".into()))?
        .parse()
        .map_err(|_| Error::Config("[model] dim must be an integer".into()))?;
    let sigma2: f64 = match config.get("model", "sigma2") {
        Some(raw) => raw
            .parse()
            .map_err(|_| Error::Config("[model] sigma2 must be a number".into()))?,
        None => 1.0,
    };
    let preset = config.get("model", "vectors").unwrap_or("canonical-basis");
    if preset != "canonical-basis" {
        return Err(Error::Config(format!(
            "unknown vector preset '{preset}' (only canonical-basis is defined)"
        )));
    }
    let mut spikes = Vec::new();
    for raw in config.get_all("model", "spike") {
        let mut parts = raw.split_whitespace();
        let (index, lambda) = match (parts.next(), parts.next(), parts.next()) {
            (Some(i), Some(l), None) => (
                i.parse::<i32>()
                    .map_err(|_| Error::Config(format!("bad spike index in '{raw}'")))?,
                l.parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad spike value in '{raw}'")))?,
            ),
            _ => {
                return Err(Error::Config(format!(
                    "spike entries are '<index> <lambda>', got '{raw}'"
                )))
            }
        };
        spikes.push((index, lambda));
    }
    SpikedCovariance::canonical(sigma2, dim, &spikes)
}

/// Parses a sample-size grid: a single value, a comma list, or `lo:hi:step`.
pub fn parse_n_grid(raw: &str) -> Result<Vec<usize>> {
    let parse_one = |s: &str| -> Result<usize> {
        s.trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad sample size '{s}' in n-grid '{raw}'")))
    };
    let values: Vec<usize> = if raw.contains(':') {
        let parts: Vec<&str> = raw.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!("n-grid range must be lo:hi:step, got '{raw}'")));
        }
        let (lo, hi, step) = (parse_one(parts[0])?, parse_one(parts[1])?, parse_one(parts[2])?);
        if step == 0 || hi < lo {
            return Err(Error::Config(format!("degenerate n-grid range '{raw}'")));
        }
        (lo..=hi).step_by(step).collect()
    } else if raw.contains(',') {
        raw.split(',').map(parse_one).collect::<Result<_>>()?
    } else {
        vec![parse_one(raw)?]
    };
    if values.is_empty() {
        return Err(Error::Config(format!("n-grid '{raw}' is empty")));
    }
    Ok(values)
}

/// Parses fixed spike counts `r1,r2`.
pub fn parse_spike_counts(raw: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!("spike counts must be 'r1,r2', got '{raw}'")));
    }
    let parse_one = |s: &str| -> Result<usize> {
        s.trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad spike count '{s}' in '{raw}'")))
    };
    Ok((parse_one(parts[0])?, parse_one(parts[1])?))
}
