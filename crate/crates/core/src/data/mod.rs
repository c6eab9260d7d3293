//! Dataset sources: synthetic spurious-correlation data, CSV ingestion and
//! price series for volatility targets.

mod csv_source;
mod prices;
mod synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Dataset, ModelError};

pub use csv_source::{load_csv, load_csv_with_groups, CsvDataset, CsvSchema};
pub use prices::{
    generate_price_series, load_price_csv, log_volatility, return_series, volatility_dataset,
    PriceSeries, PriceSimSpec, VolatilityDataset, VolatilityTask,
};
pub use synthetic::{generate_synthetic, SyntheticSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: column `{column}` has non-numeric value `{value}`")]
    Parse {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}: unknown group token `{token}`")]
    UnknownGroup { line: u64, token: String },
    #[error("line {line}: {message}")]
    InvalidRow { line: u64, message: String },
    #[error("file contains no data rows")]
    Empty,
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid price series: {0}")]
    InvalidPrices(String),
    #[error("volatility window of {tau} days ending at day {t} falls outside a {len}-day series")]
    WindowOutOfRange { t: usize, tau: usize, len: usize },
    #[error("zero return variance in the {tau}-day window ending at day {t}")]
    DegenerateVolatility { t: usize, tau: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Example counts per group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupDistribution {
    pub counts: Vec<usize>,
    pub total: usize,
}

impl GroupDistribution {
    pub fn proportions(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| c as f64 / self.total as f64)
            .collect()
    }
}

pub fn group_distribution(dataset: &Dataset) -> GroupDistribution {
    let mut counts = vec![0usize; dataset.num_groups()];
    for ex in dataset.examples() {
        counts[ex.group] += 1;
    }
    GroupDistribution {
        counts,
        total: dataset.len(),
    }
}
