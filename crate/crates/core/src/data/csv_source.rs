//! `(features, group, label)` CSV ingestion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::model::{Dataset, Example, TaskKind};

/// Which columns hold features, the group token and the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub features: Vec<String>,
    pub group: String,
    pub label: String,
    pub task: TaskKind,
}

/// A loaded dataset plus the group tokens, indexed by group id.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvDataset {
    pub dataset: Dataset,
    pub group_tokens: Vec<String>,
}

/// Loads a CSV, assigning group ids to tokens by first appearance.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<CsvDataset, DataError> {
    read(path.as_ref(), schema, None)
}

/// Loads a CSV whose group tokens must all appear in `known_groups`
/// (for example the mapping of a previously loaded training split).
pub fn load_csv_with_groups(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    known_groups: &[String],
) -> Result<CsvDataset, DataError> {
    read(path.as_ref(), schema, Some(known_groups))
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn read(path: &Path, schema: &CsvSchema, known: Option<&[String]>) -> Result<CsvDataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_error(path, e))?;
    let headers = reader.headers().map_err(|e| io_error(path, e))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let feature_cols = schema
        .features
        .iter()
        .map(|f| column(f))
        .collect::<Result<Vec<_>, _>>()?;
    let group_col = column(&schema.group)?;
    let label_col = column(&schema.label)?;

    let mut tokens: Vec<String> = known.map(<[String]>::to_vec).unwrap_or_default();
    let mut examples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| io_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let number = |col: usize, name: &str| -> Result<f64, DataError> {
            let raw = record.get(col).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::Parse {
                    line,
                    column: name.to_string(),
                    value: raw.to_string(),
                })
        };
        let features = feature_cols
            .iter()
            .zip(&schema.features)
            .map(|(&c, name)| number(c, name))
            .collect::<Result<Vec<_>, _>>()?;
        let label = number(label_col, &schema.label)?;
        if schema.task == TaskKind::Classification && label != 0.0 && label != 1.0 {
            return Err(DataError::InvalidRow {
                line,
                message: format!("classification label must be 0 or 1, found {label}"),
            });
        }
        let token = record.get(group_col).unwrap_or("");
        let group = match tokens.iter().position(|t| t == token) {
            Some(g) => g,
            None if known.is_some() => {
                return Err(DataError::UnknownGroup {
                    line,
                    token: token.to_string(),
                })
            }
            None => {
                tokens.push(token.to_string());
                tokens.len() - 1
            }
        };
        examples.push(Example::new(features, group, label));
    }
    if examples.is_empty() {
        return Err(DataError::Empty);
    }
    let dataset = Dataset::new(examples, tokens.len(), schema.task)?;
    Ok(CsvDataset {
        dataset,
        group_tokens: tokens,
    })
}
