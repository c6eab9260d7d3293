//! Sweep configuration, read from TOML.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::data::{CsvSchema, PriceSimSpec, SyntheticSpec};
use crate::dp::DEFAULT_DELTA;
use crate::metrics::MetricKind;
use crate::model::{ModelFamily, TaskKind};
use crate::objectives::{Objective, DEFAULT_DRO_STEP_SIZE};

/// A full sweep: objectives × privacy levels × (τ) × seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Where artifacts go. Not part of the fingerprint and not persisted,
    /// so the same sweep written to two places yields identical files.
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
    pub data: DataSource,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    #[serde(default = "default_objectives")]
    pub objectives: Vec<Objective>,
    #[serde(default = "default_privacy_levels")]
    pub privacy: Vec<PrivacyLevel>,
    /// Defaults to 3 seeds for classification and 5 for regression.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub base_seed: u64,
    /// Defaults to accuracy for classification and MSE for regression.
    #[serde(default)]
    pub metric: Option<MetricKind>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_objectives() -> Vec<Objective> {
    vec![Objective::Erm, Objective::GroupDro]
}

fn default_privacy_levels() -> Vec<PrivacyLevel> {
    let mut levels = vec![PrivacyLevel::non_private("No DP")];
    for eps in [10.0, 5.0, 1.0] {
        levels.push(PrivacyLevel::target(format!("eps={eps}"), eps));
    }
    levels
}

/// Where the examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Generated spurious-correlation data; the test split shares the
    /// feature distribution with its own cell sizes and seed.
    Synthetic {
        #[serde(default)]
        spec: SyntheticSpec,
        #[serde(default = "default_test_sizes")]
        test_sizes: [usize; 4],
        #[serde(default = "default_test_seed")]
        test_seed: u64,
    },
    /// Pre-split CSV files; test groups must appear in the training file.
    Csv {
        train: PathBuf,
        test: PathBuf,
        schema: CsvSchema,
    },
    /// Log-volatility regression over price series, one dataset per `tau`.
    /// Exactly one of `path` and `simulate` must be given.
    Prices {
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default)]
        simulate: Option<PriceSimSpec>,
        taus: Vec<usize>,
        #[serde(default = "default_lookback")]
        lookback: usize,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
}

fn default_test_sizes() -> [usize; 4] {
    [500; 4]
}

fn default_test_seed() -> u64 {
    1
}

fn default_lookback() -> usize {
    20
}

fn default_test_fraction() -> f64 {
    0.25
}

impl DataSource {
    pub fn task(&self) -> TaskKind {
        match self {
            DataSource::Synthetic { .. } => TaskKind::Classification,
            DataSource::Csv { schema, .. } => schema.task,
            DataSource::Prices { .. } => TaskKind::Regression,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: ModelFamily,
    /// Hidden width of the MLP.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

fn default_hidden() -> usize {
    16
}

/// Optimisation settings shared by every run of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    #[serde(default = "default_dro_step_size")]
    pub dro_step_size: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Defaults to 1.2 for classification and 0.8 for regression.
    #[serde(default)]
    pub clipping_bound: Option<f64>,
}

fn default_dro_step_size() -> f64 {
    DEFAULT_DRO_STEP_SIZE
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

/// One column of the results table. With neither field set the runs are
/// non-private; `target_epsilon` calibrates σ, `noise_multiplier` fixes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyLevel {
    pub label: String,
    #[serde(default)]
    pub target_epsilon: Option<f64>,
    #[serde(default)]
    pub noise_multiplier: Option<f64>,
}

impl PrivacyLevel {
    pub fn non_private(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            target_epsilon: None,
            noise_multiplier: None,
        }
    }

    pub fn target(label: impl Into<String>, epsilon: f64) -> Self {
        Self {
            label: label.into(),
            target_epsilon: Some(epsilon),
            noise_multiplier: None,
        }
    }

    pub fn is_private(&self) -> bool {
        self.target_epsilon.is_some() || self.noise_multiplier.is_some()
    }
}

/// File-name-safe form of a label.
pub(crate) fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '-' })
        .collect()
}

fn invalid(field: &str, message: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Invalid {
        field: field.to_string(),
        message: message.to_string(),
    }
}

impl ExperimentConfig {
    /// Parses TOML text. Syntax and type errors carry line and column.
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Parse {
            source_name: "<config>".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file; relative data paths resolve against its directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| ExperimentError::Parse {
            source_name: path.display().to_string(),
            message: e.to_string(),
        })?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes relative data paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.data {
            DataSource::Csv { train, test, .. } => {
                fix(train);
                fix(test);
            }
            DataSource::Prices { path: Some(p), .. } => fix(p),
            _ => {}
        }
    }

    pub fn task(&self) -> TaskKind {
        self.data.task()
    }

    pub fn seeds(&self) -> Vec<u64> {
        match (&self.seeds, self.task()) {
            (Some(s), _) => s.clone(),
            (None, TaskKind::Classification) => (0..3).collect(),
            (None, TaskKind::Regression) => (0..5).collect(),
        }
    }

    pub fn metric(&self) -> MetricKind {
        self.metric.unwrap_or(match self.task() {
            TaskKind::Classification => MetricKind::Accuracy,
            TaskKind::Regression => MetricKind::Mse,
        })
    }

    /// The τ values of the sweep; `[None]` unless the data are price series.
    pub fn taus(&self) -> Vec<Option<usize>> {
        match &self.data {
            DataSource::Prices { taus, .. } => taus.iter().copied().map(Some).collect(),
            _ => vec![None],
        }
    }

    /// SHA-256 (hex) of the canonical JSON form of the config.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(digest)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        let t = &self.training;
        if t.steps == 0 {
            return Err(invalid("training.steps", "must be >= 1"));
        }
        if t.batch_size == 0 {
            return Err(invalid("training.batch_size", "must be >= 1"));
        }
        if !(t.lr > 0.0) || !t.lr.is_finite() {
            return Err(invalid("training.lr", format!("{} is not a positive number", t.lr)));
        }
        if !(t.dro_step_size >= 0.0) || !t.dro_step_size.is_finite() {
            return Err(invalid("training.dro_step_size", "must be finite and >= 0"));
        }
        if !(t.delta > 0.0 && t.delta < 1.0) {
            return Err(invalid("training.delta", format!("{} is outside (0, 1)", t.delta)));
        }
        if let Some(c) = t.clipping_bound {
            if !(c > 0.0) || !c.is_finite() {
                return Err(invalid("training.clipping_bound", format!("{c} is not positive")));
            }
        }

        let task = self.task();
        match (self.model.family, task) {
            (ModelFamily::LinearRegressor, TaskKind::Classification) => {
                return Err(invalid("model.family", "linear_regressor needs a regression task"))
            }
            (ModelFamily::LogisticClassifier, TaskKind::Regression) => {
                return Err(invalid(
                    "model.family",
                    "logistic_classifier needs a classification task",
                ))
            }
            _ => {}
        }
        if self.model.family == ModelFamily::Mlp && self.model.hidden == 0 {
            return Err(invalid("model.hidden", "must be >= 1"));
        }
        let metric = self.metric();
        if (metric == MetricKind::Mse) != (task == TaskKind::Regression) {
            return Err(invalid(
                "metric",
                format!("{metric:?} does not fit a {task:?} task").to_lowercase(),
            ));
        }

        if self.objectives.is_empty() {
            return Err(invalid("objectives", "must list at least one objective"));
        }
        let mut seen_obj = HashSet::new();
        for o in &self.objectives {
            if !seen_obj.insert(*o) {
                return Err(invalid("objectives", format!("{o} is listed twice")));
            }
        }
        let seeds = self.seeds();
        if seeds.is_empty() {
            return Err(invalid("seeds", "must list at least one seed"));
        }
        let mut seen_seed = HashSet::new();
        for s in &seeds {
            if !seen_seed.insert(*s) {
                return Err(invalid("seeds", format!("seed {s} is listed twice")));
            }
        }

        if self.privacy.is_empty() {
            return Err(invalid("privacy", "must list at least one level"));
        }
        let mut slugs = HashSet::new();
        for (i, level) in self.privacy.iter().enumerate() {
            let field = |f: &str| format!("privacy[{i}].{f}");
            if level.label.trim().is_empty() {
                return Err(invalid(&field("label"), "must not be empty"));
            }
            if !slugs.insert(slug(&level.label)) {
                return Err(invalid(
                    &field("label"),
                    format!("`{}` clashes with an earlier label", level.label),
                ));
            }
            match (level.target_epsilon, level.noise_multiplier) {
                (Some(_), Some(_)) => {
                    return Err(invalid(
                        &field("target_epsilon"),
                        "set either target_epsilon or noise_multiplier, not both",
                    ))
                }
                (Some(e), None) if !(e > 0.0) || !e.is_finite() => {
                    return Err(invalid(&field("target_epsilon"), format!("{e} is not positive")))
                }
                (None, Some(s)) if !(s > 0.0) || !s.is_finite() => {
                    return Err(invalid(&field("noise_multiplier"), format!("{s} is not positive")))
                }
                _ => {}
            }
        }

        match &self.data {
            DataSource::Synthetic { spec, test_sizes, .. } => {
                spec.validate()
                    .map_err(|e| invalid("data.spec", e))?;
                if test_sizes.contains(&0) {
                    return Err(invalid("data.test_sizes", "every test cell needs >= 1 example"));
                }
            }
            DataSource::Csv { schema, .. } => {
                if schema.features.is_empty() {
                    return Err(invalid("data.schema.features", "must name at least one column"));
                }
            }
            DataSource::Prices {
                path,
                simulate,
                taus,
                lookback,
                test_fraction,
            } => {
                if path.is_some() == simulate.is_some() {
                    return Err(invalid("data", "set exactly one of `path` and `simulate`"));
                }
                if taus.is_empty() || taus.contains(&0) {
                    return Err(invalid("data.taus", "must list τ values >= 1"));
                }
                let mut seen = HashSet::new();
                if let Some(dup) = taus.iter().find(|t| !seen.insert(**t)) {
                    return Err(invalid("data.taus", format!("τ = {dup} is listed twice")));
                }
                if *lookback == 0 {
                    return Err(invalid("data.lookback", "must be >= 1"));
                }
                if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                    return Err(invalid("data.test_fraction", "must lie in (0, 1)"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "demo"

[data]
kind = "synthetic"

[model]
family = "logistic_classifier"

[training]
steps = 10
lr = 0.1
batch_size = 8
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.objectives, vec![Objective::Erm, Objective::GroupDro]);
        assert_eq!(cfg.privacy.len(), 4);
        assert_eq!(cfg.seeds(), vec![0, 1, 2]);
        assert_eq!(cfg.metric(), MetricKind::Accuracy);
        assert_eq!(cfg.training.delta, 1e-5);
        assert_eq!(cfg.taus(), vec![None]);
        match &cfg.data {
            DataSource::Synthetic { spec, test_sizes, .. } => {
                assert_eq!(*spec, SyntheticSpec::default());
                assert_eq!(*test_sizes, [500; 4]);
            }
            other => panic!("unexpected source {other:?}"),
        }
    }

    #[test]
    fn unknown_key_reports_its_location() {
        let text = MINIMAL.replace("lr = 0.1", "lr = 0.1\nlearning_rate = 0.2");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("learning_rate"), "{err}");
        assert!(err.contains("line 13"), "{err}");
    }

    #[test]
    fn unknown_key_inside_tagged_source_is_rejected() {
        let text = MINIMAL.replace("kind = \"synthetic\"", "kind = \"synthetic\"\ntest_size = 3");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("test_size"), "{err}");
    }

    #[test]
    fn type_error_reports_its_location() {
        let text = MINIMAL.replace("steps = 10", "steps = \"ten\"");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("line 11"), "{err}");
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let text = format!(
            "{MINIMAL}\n[[privacy]]\nlabel = \"a\"\n\n[[privacy]]\nlabel = \"b\"\ntarget_epsilon = -1.0\n"
        );
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("privacy[1].target_epsilon"), "{err}");

        let dup = format!("{MINIMAL}\n[[privacy]]\nlabel = \"x y\"\n\n[[privacy]]\nlabel = \"x-y\"\n");
        let err = ExperimentConfig::from_toml_str(&dup).unwrap_err().to_string();
        assert!(err.contains("privacy[1].label"), "{err}");
    }

    #[test]
    fn family_must_fit_task() {
        let text = MINIMAL.replace("logistic_classifier", "linear_regressor");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("model.family"), "{err}");
    }

    #[test]
    fn price_source_needs_one_origin() {
        let text = r#"
name = "vol"
[data]
kind = "prices"
taus = [3, 7]
[model]
family = "linear_regressor"
[training]
steps = 10
lr = 0.1
batch_size = 8
"#;
        let err = ExperimentConfig::from_toml_str(text).unwrap_err().to_string();
        assert!(err.contains("simulate"), "{err}");
        let ok = text.replace("taus = [3, 7]", "taus = [3, 7]\n[data.simulate]\ngroups = [\"M\", \"F\"]\nseries_per_group = [2, 1]\ndays = 80\nmean_log_vol = [-4.0, -3.5]\nvol_of_vol = [0.1, 0.3]\npersistence = 0.9\nseed = 4\n");
        let cfg = ExperimentConfig::from_toml_str(&ok).unwrap();
        assert_eq!(cfg.taus(), vec![Some(3), Some(7)]);
        assert_eq!(cfg.metric(), MetricKind::Mse);
        assert_eq!(cfg.seeds().len(), 5);
    }

    #[test]
    fn fingerprint_ignores_output_dir_only() {
        let a = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("/elsewhere");
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.training.lr = 0.2;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn relative_csv_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.toml");
        let text = MINIMAL.replace(
            "kind = \"synthetic\"",
            "kind = \"csv\"\ntrain = \"train.csv\"\ntest = \"/abs/test.csv\"\n[data.schema]\nfeatures = [\"x\"]\ngroup = \"g\"\nlabel = \"y\"\ntask = \"classification\"",
        );
        std::fs::write(&path, text).unwrap();
        let cfg = ExperimentConfig::from_path(&path).unwrap();
        match cfg.data {
            DataSource::Csv { train, test, .. } => {
                assert_eq!(train, dir.path().join("train.csv"));
                assert_eq!(test, PathBuf::from("/abs/test.csv"));
            }
            other => panic!("unexpected source {other:?}"),
        }
    }
}
