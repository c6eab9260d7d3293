//! Closing-price series and log-volatility regression targets.
//!
//! Day `t` has return `r_t = P_t / P_{t-1} - 1`. The log volatility over a
//! window `τ` ending at day `t` uses the `τ + 1` returns `r_{t-τ} ..= r_t`:
//!
//! `v = ln( sqrt( Σ_{i=0..τ} (r_{t-i} - r̄)² / τ ) )`
//!
//! with `r̄` the mean of those `τ + 1` returns.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::model::{Dataset, Example, TaskKind};
use crate::rng::RngStream;

/// One closing-price series with its group token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub id: String,
    pub group: String,
    pub prices: Vec<f64>,
}

impl PriceSeries {
    pub fn new(id: impl Into<String>, group: impl Into<String>, prices: Vec<f64>) -> Result<Self, DataError> {
        let s = Self {
            id: id.into(),
            group: group.into(),
            prices,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if let Some(p) = self.prices.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
            return Err(DataError::InvalidPrices(format!(
                "series `{}` has non-positive price {p}",
                self.id
            )));
        }
        Ok(())
    }

    pub fn returns(&self) -> Result<Vec<f64>, DataError> {
        return_series(&self.prices)
    }

    pub fn log_volatility(&self, t: usize, tau: usize) -> Result<f64, DataError> {
        log_volatility(&self.prices, t, tau)
    }
}

/// `r_t = P_t / P_{t-1} - 1` for each consecutive pair of days.
pub fn return_series(prices: &[f64]) -> Result<Vec<f64>, DataError> {
    if prices.len() < 2 {
        return Err(DataError::InvalidPrices(format!(
            "need at least 2 prices for returns, got {}",
            prices.len()
        )));
    }
    if prices.iter().any(|p| !(*p > 0.0)) {
        return Err(DataError::InvalidPrices("prices must be strictly positive".into()));
    }
    Ok(prices.windows(2).map(|w| w[1] / w[0] - 1.0).collect())
}

/// Log volatility over the window of `tau + 1` returns ending at day `t`.
pub fn log_volatility(prices: &[f64], t: usize, tau: usize) -> Result<f64, DataError> {
    if tau == 0 || t < tau + 1 || t >= prices.len() {
        return Err(DataError::WindowOutOfRange {
            t,
            tau,
            len: prices.len(),
        });
    }
    let window = &prices[t - tau - 1..=t];
    let returns = return_series(window)?;
    if returns.iter().all(|r| *r == returns[0]) {
        return Err(DataError::DegenerateVolatility { t, tau });
    }
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    let ss: f64 = returns.iter().map(|r| (r - mean) * (r - mean)).sum();
    let var = ss / tau as f64;
    if !(var > 0.0) {
        return Err(DataError::DegenerateVolatility { t, tau });
    }
    Ok(var.sqrt().ln())
}

/// Reads `series_id, group, day, close_price` rows. Days must strictly
/// increase within a series; series keep their order of first appearance.
pub fn load_price_csv(path: impl AsRef<Path>) -> Result<Vec<PriceSeries>, DataError> {
    let path = path.as_ref();
    let io = |e: csv::Error| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(io)?;
    let headers = reader.headers().map_err(io)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let (c_id, c_group, c_day, c_price) = (col("series_id")?, col("group")?, col("day")?, col("close_price")?);

    let mut series: Vec<(PriceSeries, i64)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(io)?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |c: usize| record.get(c).unwrap_or("");
        let day: i64 = field(c_day).parse().map_err(|_| DataError::Parse {
            line,
            column: "day".into(),
            value: field(c_day).to_string(),
        })?;
        let price: f64 = field(c_price)
            .parse()
            .ok()
            .filter(|p: &f64| p.is_finite())
            .ok_or_else(|| DataError::Parse {
                line,
                column: "close_price".into(),
                value: field(c_price).to_string(),
            })?;
        if !(price > 0.0) {
            return Err(DataError::InvalidRow {
                line,
                message: format!("close price {price} is not positive"),
            });
        }
        let (id, group) = (field(c_id), field(c_group));
        match series.iter_mut().find(|(s, _)| s.id == id) {
            Some((s, last_day)) => {
                if s.group != group {
                    return Err(DataError::InvalidRow {
                        line,
                        message: format!("series `{id}` changes group from `{}` to `{group}`", s.group),
                    });
                }
                if day <= *last_day {
                    return Err(DataError::InvalidRow {
                        line,
                        message: format!("day {day} does not increase past {last_day} in series `{id}`"),
                    });
                }
                s.prices.push(price);
                *last_day = day;
            }
            None => series.push((
                PriceSeries {
                    id: id.to_string(),
                    group: group.to_string(),
                    prices: vec![price],
                },
                day,
            )),
        }
    }
    if series.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(series.into_iter().map(|(s, _)| s).collect())
}

/// How price series become a regression dataset.
///
/// For each day `t`, the features are the trailing log volatilities over `tau`
/// and over `lookback` days, and the target is the log volatility over the
/// `tau`-window ending at `t + tau + 1`, i.e. built only from returns after `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolatilityTask {
    pub tau: usize,
    #[serde(default = "default_lookback")]
    pub lookback: usize,
    /// Trailing fraction of every series' days held out for testing.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_lookback() -> usize {
    20
}

fn default_test_fraction() -> f64 {
    0.25
}

impl VolatilityTask {
    pub fn new(tau: usize) -> Self {
        Self {
            tau,
            lookback: default_lookback(),
            test_fraction: default_test_fraction(),
        }
    }
}

/// Chronological train/test datasets with group tokens indexed by id.
#[derive(Debug, Clone, PartialEq)]
pub struct VolatilityDataset {
    pub train: Dataset,
    pub test: Dataset,
    pub group_tokens: Vec<String>,
}

pub fn volatility_dataset(
    series: &[PriceSeries],
    task: &VolatilityTask,
) -> Result<VolatilityDataset, DataError> {
    if task.tau == 0 || task.lookback == 0 {
        return Err(DataError::InvalidSpec("tau and lookback must be >= 1".into()));
    }
    if !(task.test_fraction > 0.0 && task.test_fraction < 1.0) {
        return Err(DataError::InvalidSpec("test_fraction must lie in (0, 1)".into()));
    }
    let mut tokens: Vec<String> = Vec::new();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    let first_t = task.tau.max(task.lookback) + 1;
    for s in series {
        s.validate()?;
        let group = match tokens.iter().position(|t| *t == s.group) {
            Some(g) => g,
            None => {
                tokens.push(s.group.clone());
                tokens.len() - 1
            }
        };
        let n = s.prices.len();
        let mut rows = Vec::new();
        let mut t = first_t;
        while t + task.tau + 1 < n {
            let features = vec![
                log_volatility(&s.prices, t, task.tau)?,
                log_volatility(&s.prices, t, task.lookback)?,
            ];
            let target = log_volatility(&s.prices, t + task.tau + 1, task.tau)?;
            rows.push(Example::new(features, group, target));
            t += 1;
        }
        if rows.is_empty() {
            return Err(DataError::InvalidPrices(format!(
                "series `{}` has {n} days, too short for tau = {} and lookback = {}",
                s.id, task.tau, task.lookback
            )));
        }
        let n_train = ((1.0 - task.test_fraction) * rows.len() as f64).floor() as usize;
        let mut rest = rows.split_off(n_train);
        train.append(&mut rows);
        test.append(&mut rest);
    }
    let g = tokens.len();
    Ok(VolatilityDataset {
        train: Dataset::new(train, g, TaskKind::Regression)?,
        test: Dataset::new(test, g, TaskKind::Regression)?,
        group_tokens: tokens,
    })
}

/// Simulated price series with group-specific stochastic volatility:
/// `h_t = μ_g + φ (h_{t-1} - μ_g) + ν_g ε_t`, `P_t = P_{t-1} exp(e^{h_t} z_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceSimSpec {
    pub groups: Vec<String>,
    pub series_per_group: Vec<usize>,
    pub days: usize,
    /// Long-run mean of the daily log volatility, per group.
    pub mean_log_vol: Vec<f64>,
    /// Volatility-of-volatility, per group.
    pub vol_of_vol: Vec<f64>,
    pub persistence: f64,
    pub seed: u64,
}

impl Default for PriceSimSpec {
    fn default() -> Self {
        Self {
            groups: vec!["M".into(), "F".into()],
            series_per_group: vec![8, 2],
            days: 300,
            mean_log_vol: vec![-4.2, -3.8],
            vol_of_vol: vec![0.15, 0.35],
            persistence: 0.95,
            seed: 0,
        }
    }
}

pub fn generate_price_series(spec: &PriceSimSpec) -> Result<Vec<PriceSeries>, DataError> {
    let g = spec.groups.len();
    if g == 0 || spec.series_per_group.len() != g || spec.mean_log_vol.len() != g || spec.vol_of_vol.len() != g {
        return Err(DataError::InvalidSpec(
            "groups, series_per_group, mean_log_vol and vol_of_vol must have equal non-zero length".into(),
        ));
    }
    if spec.days < 2 || !(0.0..1.0).contains(&spec.persistence) {
        return Err(DataError::InvalidSpec("need days >= 2 and persistence in [0, 1)".into()));
    }
    let mut out = Vec::new();
    for (gi, token) in spec.groups.iter().enumerate() {
        for k in 0..spec.series_per_group[gi] {
            let id = format!("{token}-{k}");
            let mut rng = RngStream::new(spec.seed, format!("prices/{id}"));
            let mu = spec.mean_log_vol[gi];
            let mut h = mu;
            let mut prices = Vec::with_capacity(spec.days);
            let mut p = 100.0;
            prices.push(p);
            for _ in 1..spec.days {
                h = mu + spec.persistence * (h - mu) + spec.vol_of_vol[gi] * rng.normal();
                p *= (h.exp() * rng.normal()).exp();
                prices.push(p);
            }
            out.push(PriceSeries::new(id, token.clone(), prices)?);
        }
    }
    Ok(out)
}
