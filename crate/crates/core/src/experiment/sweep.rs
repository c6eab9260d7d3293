//! Running a sweep, persisting run reports and aggregating them.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{slug, DataSource, ExperimentConfig, PrivacyLevel};
use super::ExperimentError;
use crate::data::{
    generate_price_series, generate_synthetic, load_csv, load_csv_with_groups, load_price_csv,
    volatility_dataset, DataError, PriceSeries, VolatilityTask,
};
use crate::dp::{default_clipping_bound, DpError, PrivacySpec};
use crate::metrics::{group_disparity, predict_all, scores_by_group, DisparityReport, GroupScores, MetricKind};
use crate::model::{Dataset, Model};
use crate::objectives::{train, Objective, TrainConfig, TrainTrace};
use crate::rng::hash_seed;

/// Train and test splits of one sweep task, with group tokens indexed by id.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub group_tokens: Vec<String>,
}

const SYNTHETIC_GROUPS: [&str; 4] = ["a0_y0", "a0_y1", "a1_y0", "a1_y1"];

fn load_series(cfg: &ExperimentConfig) -> Result<Vec<PriceSeries>, DataError> {
    match &cfg.data {
        DataSource::Prices { path: Some(p), .. } => load_price_csv(p),
        DataSource::Prices { simulate: Some(s), .. } => generate_price_series(s),
        _ => Err(DataError::InvalidSpec("not a price-series source".into())),
    }
}

/// Builds the train/test splits for one τ (`None` outside the volatility task).
pub fn prepare_data(cfg: &ExperimentConfig, tau: Option<usize>) -> Result<PreparedData, DataError> {
    prepare_with_series(cfg, tau, None)
}

fn prepare_with_series(
    cfg: &ExperimentConfig,
    tau: Option<usize>,
    series: Option<&Result<Vec<PriceSeries>, DataError>>,
) -> Result<PreparedData, DataError> {
    match &cfg.data {
        DataSource::Synthetic {
            spec,
            test_sizes,
            test_seed,
        } => Ok(PreparedData {
            train: generate_synthetic(spec)?,
            test: generate_synthetic(&spec.with_sizes(*test_sizes, *test_seed))?,
            group_tokens: SYNTHETIC_GROUPS.iter().map(|s| s.to_string()).collect(),
        }),
        DataSource::Csv { train, test, schema } => {
            let tr = load_csv(train, schema)?;
            let te = load_csv_with_groups(test, schema, &tr.group_tokens)?;
            Ok(PreparedData {
                train: tr.dataset,
                test: te.dataset,
                group_tokens: tr.group_tokens,
            })
        }
        DataSource::Prices {
            lookback,
            test_fraction,
            ..
        } => {
            let tau = tau.ok_or_else(|| DataError::InvalidSpec("price task needs a τ".into()))?;
            let owned;
            let series = match series {
                Some(s) => s.as_ref().map_err(Clone::clone)?,
                None => {
                    owned = load_series(cfg)?;
                    &owned
                }
            };
            let task = VolatilityTask {
                tau,
                lookback: *lookback,
                test_fraction: *test_fraction,
            };
            let v = volatility_dataset(series, &task)?;
            Ok(PreparedData {
                train: v.train,
                test: v.test,
                group_tokens: v.group_tokens,
            })
        }
    }
}

/// Privacy parameters of a level for a training set of `n` examples.
fn privacy_for(cfg: &ExperimentConfig, level: &PrivacyLevel, n: usize) -> Result<Option<PrivacySpec>, DpError> {
    let t = &cfg.training;
    let q = (t.batch_size as f64 / n as f64).min(1.0);
    let clip = t.clipping_bound.unwrap_or_else(|| default_clipping_bound(cfg.task()));
    match (level.target_epsilon, level.noise_multiplier) {
        (Some(eps), _) => PrivacySpec::calibrated(eps, t.delta, clip, q, t.steps).map(Some),
        (None, Some(sigma)) => {
            let spec = PrivacySpec {
                delta: t.delta,
                ..PrivacySpec::with_noise(sigma, clip, q, t.steps)
            };
            spec.validate()?;
            Ok(Some(spec))
        }
        (None, None) => Ok(None),
    }
}

/// Results of a run that finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Present exactly when the run was private.
    pub realized_epsilon: Option<f64>,
    /// The metric over the whole test split.
    pub overall_score: f64,
    pub group_scores: GroupScores,
    pub disparity: DisparityReport,
    pub param_norm: f64,
    pub trace: TrainTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunOutcome {
    Completed(RunMetrics),
    Failed { error: String },
}

/// The persisted record of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_fingerprint: String,
    pub objective: Objective,
    pub privacy_label: String,
    pub tau: Option<usize>,
    pub seed_index: usize,
    pub seed: u64,
    /// Seed of the training streams, derived from the base seed and the cell.
    pub run_seed: u64,
    pub metric: MetricKind,
    pub privacy: Option<PrivacySpec>,
    pub group_tokens: Vec<String>,
    pub outcome: RunOutcome,
}

impl RunReport {
    pub fn metrics(&self) -> Option<&RunMetrics> {
        match &self.outcome {
            RunOutcome::Completed(m) => Some(m),
            RunOutcome::Failed { .. } => None,
        }
    }

    /// Artifact file name, unique within a sweep.
    pub fn file_name(&self) -> String {
        let tau = self.tau.map(|t| format!("__tau{t}")).unwrap_or_default();
        format!(
            "{}__{}{}__seed{}.json",
            self.objective,
            slug(&self.privacy_label),
            tau,
            self.seed_index
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub file: String,
    pub wall_clock_secs: f64,
}

/// Arithmetic mean and sample standard deviation (0 for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n == 1 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Self { mean, std, n })
    }
}

/// One (objective, privacy level, τ) cell aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub objective: Objective,
    pub privacy_label: String,
    pub tau: Option<usize>,
    pub target_epsilon: Option<f64>,
    pub noise_multiplier: Option<f64>,
    /// Mean realized ε over completed seeds.
    pub realized_epsilon: Option<f64>,
    pub seeds_completed: usize,
    pub seeds_failed: usize,
    /// True when any seed of the cell failed.
    pub failed: bool,
    pub score: Option<MeanStd>,
    pub disparity: Option<MeanStd>,
    /// Mean score of every group over completed seeds.
    pub mean_group_scores: Option<Vec<f64>>,
    /// Distinct failure messages, in order of first occurrence.
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub name: String,
    pub config_fingerprint: String,
    pub metric: MetricKind,
    pub higher_is_better: bool,
    pub group_tokens: Vec<String>,
    pub cells: Vec<CellSummary>,
}

impl SweepSummary {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.failed).count()
    }

    pub fn cell(&self, objective: Objective, privacy_label: &str, tau: Option<usize>) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.objective == objective && c.privacy_label == privacy_label && c.tau == tau)
    }
}

/// Everything a sweep produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub summary: SweepSummary,
    pub reports: Vec<RunReport>,
    pub timings: Vec<RunTiming>,
}

struct Job<'a> {
    objective: Objective,
    level: &'a PrivacyLevel,
    tau: Option<usize>,
    seed_index: usize,
    seed: u64,
    setup: &'a Result<(PreparedData, Option<PrivacySpec>), String>,
}

fn run_job(cfg: &ExperimentConfig, fingerprint: &str, job: &Job) -> (RunReport, f64) {
    let start = Instant::now();
    let tau_part = job.tau.map(|t| t.to_string()).unwrap_or_default();
    let run_seed = hash_seed(
        cfg.base_seed,
        &[
            job.objective.as_str(),
            &job.level.label,
            &tau_part,
            &job.seed_index.to_string(),
            &job.seed.to_string(),
        ],
    );
    let metric = cfg.metric();
    let (privacy, group_tokens, outcome) = match job.setup {
        Err(e) => (None, Vec::new(), RunOutcome::Failed { error: e.clone() }),
        Ok((data, privacy)) => {
            let outcome = match train_and_evaluate(cfg, data, privacy.clone(), job.objective, run_seed, metric) {
                Ok(m) => RunOutcome::Completed(m),
                Err(error) => RunOutcome::Failed { error },
            };
            (privacy.clone(), data.group_tokens.clone(), outcome)
        }
    };
    let report = RunReport {
        config_fingerprint: fingerprint.to_string(),
        objective: job.objective,
        privacy_label: job.level.label.clone(),
        tau: job.tau,
        seed_index: job.seed_index,
        seed: job.seed,
        run_seed,
        metric,
        privacy,
        group_tokens,
        outcome,
    };
    (report, start.elapsed().as_secs_f64())
}

fn train_and_evaluate(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    privacy: Option<PrivacySpec>,
    objective: Objective,
    run_seed: u64,
    metric: MetricKind,
) -> Result<RunMetrics, String> {
    let t = &cfg.training;
    let model = Model::for_task(cfg.model.family, data.train.dim(), cfg.model.hidden, data.train.task());
    let mut tc = TrainConfig::new(objective, t.steps, t.lr, t.batch_size, run_seed).with_dro_step_size(t.dro_step_size);
    tc.privacy = privacy;
    let (params, trace) = train(&model, &data.train, &tc).map_err(|e| e.to_string())?;
    data.test.require_nonempty_groups().map_err(|e| format!("test split: {e}"))?;
    let preds = predict_all(&model, &params, &data.test).map_err(|e| e.to_string())?;
    let labels: Vec<f64> = data.test.examples().iter().map(|e| e.label).collect();
    let overall_score = metric.compute(&preds, &labels).map_err(|e| e.to_string())?;
    let group_scores = scores_by_group(&preds, &data.test, metric).map_err(|e| e.to_string())?;
    let disparity = group_disparity(&group_scores).map_err(|e| e.to_string())?;
    Ok(RunMetrics {
        realized_epsilon: trace.realized_epsilon,
        overall_score,
        group_scores,
        disparity,
        param_norm: params.norm(),
        trace,
    })
}

/// Runs every cell of the sweep without touching the filesystem beyond
/// reading input data. Runs execute in parallel; results keep config order.
pub fn execute_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput, ExperimentError> {
    cfg.validate()?;
    let fingerprint = cfg.fingerprint();
    let series = matches!(cfg.data, DataSource::Prices { .. }).then(|| load_series(cfg));

    // σ is calibrated once per (τ, level) and shared by objectives and seeds
    let mut setups = Vec::new();
    for tau in cfg.taus() {
        let data = prepare_with_series(cfg, tau, series.as_ref());
        for level in &cfg.privacy {
            let setup = match &data {
                Err(e) => Err(format!("data: {e}")),
                Ok(d) => privacy_for(cfg, level, d.train.len())
                    .map(|p| (d.clone(), p))
                    .map_err(|e| format!("calibration: {e}")),
            };
            setups.push((tau, level, setup));
        }
    }

    let seeds = cfg.seeds();
    let mut jobs = Vec::new();
    for tau in cfg.taus() {
        for &objective in &cfg.objectives {
            for level in &cfg.privacy {
                let setup = &setups
                    .iter()
                    .find(|(t, l, _)| *t == tau && l.label == level.label)
                    .expect("setup exists for every cell")
                    .2;
                for (seed_index, &seed) in seeds.iter().enumerate() {
                    jobs.push(Job {
                        objective,
                        level,
                        tau,
                        seed_index,
                        seed,
                        setup,
                    });
                }
            }
        }
    }

    let results: Vec<(RunReport, f64)> = jobs.par_iter().map(|job| run_job(cfg, &fingerprint, job)).collect();
    let timings = results
        .iter()
        .map(|(r, secs)| RunTiming {
            file: r.file_name(),
            wall_clock_secs: *secs,
        })
        .collect();
    let reports: Vec<RunReport> = results.into_iter().map(|(r, _)| r).collect();
    let summary = aggregate(cfg, &reports)?;
    Ok(SweepOutput {
        summary,
        reports,
        timings,
    })
}

/// Runs the sweep and persists its artifacts under `cfg.output_dir`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput, ExperimentError> {
    let out = execute_sweep(cfg)?;
    write_artifacts(cfg, &out, &cfg.output_dir)?;
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| ExperimentError::io(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| ExperimentError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| ExperimentError::Artifact {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Writes `config.json`, `runs/*.json`, `summary.json` and `timings.json` to `dir`.
pub fn write_artifacts(cfg: &ExperimentConfig, out: &SweepOutput, dir: &Path) -> Result<(), ExperimentError> {
    let runs = dir.join("runs");
    std::fs::create_dir_all(&runs).map_err(|e| ExperimentError::io(&runs, e))?;
    write_json(&dir.join("config.json"), cfg)?;
    for report in &out.reports {
        write_json(&runs.join(report.file_name()), report)?;
    }
    write_json(&dir.join("summary.json"), &out.summary)?;
    write_json(&dir.join("timings.json"), &out.timings)
}

/// Reads every run report under `dir/runs`, ordered by file name.
pub fn load_reports(dir: &Path) -> Result<Vec<RunReport>, ExperimentError> {
    let runs = dir.join("runs");
    let mut paths: Vec<_> = std::fs::read_dir(&runs)
        .map_err(|e| ExperimentError::io(&runs, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_json(p)).collect()
}

pub fn load_summary(dir: &Path) -> Result<SweepSummary, ExperimentError> {
    read_json(&dir.join("summary.json"))
}

/// Rebuilds the summary of a persisted sweep from its config and run reports.
pub fn reaggregate(dir: &Path) -> Result<SweepSummary, ExperimentError> {
    let cfg: ExperimentConfig = read_json(&dir.join("config.json"))?;
    let reports = load_reports(dir)?;
    let fingerprint = cfg.fingerprint();
    if let Some(r) = reports.iter().find(|r| r.config_fingerprint != fingerprint) {
        return Err(ExperimentError::Artifact {
            path: dir.join("runs").join(r.file_name()).display().to_string(),
            message: "report belongs to a different config".into(),
        });
    }
    aggregate(&cfg, &reports)
}

/// Aggregates reports into one cell per (τ, objective, level), in config order.
/// Seeds within a cell are taken in seed-index order.
pub fn aggregate(cfg: &ExperimentConfig, reports: &[RunReport]) -> Result<SweepSummary, ExperimentError> {
    let metric = cfg.metric();
    let mut cells = Vec::new();
    for tau in cfg.taus() {
        for &objective in &cfg.objectives {
            for level in &cfg.privacy {
                let mut runs: Vec<&RunReport> = reports
                    .iter()
                    .filter(|r| r.tau == tau && r.objective == objective && r.privacy_label == level.label)
                    .collect();
                runs.sort_by_key(|r| r.seed_index);
                cells.push(summarize_cell(objective, level, tau, &runs));
            }
        }
    }
    let group_tokens = reports
        .iter()
        .find(|r| !r.group_tokens.is_empty())
        .map(|r| r.group_tokens.clone())
        .unwrap_or_default();
    Ok(SweepSummary {
        name: cfg.name.clone(),
        config_fingerprint: cfg.fingerprint(),
        metric,
        higher_is_better: metric.higher_is_better(),
        group_tokens,
        cells,
    })
}

fn summarize_cell(objective: Objective, level: &PrivacyLevel, tau: Option<usize>, runs: &[&RunReport]) -> CellSummary {
    let done: Vec<&RunMetrics> = runs.iter().filter_map(|r| r.metrics()).collect();
    let mut errors: Vec<String> = Vec::new();
    for r in runs {
        if let RunOutcome::Failed { error } = &r.outcome {
            if !errors.contains(error) {
                errors.push(error.clone());
            }
        }
    }
    let scores: Vec<f64> = done.iter().map(|m| m.overall_score).collect();
    let gaps: Vec<f64> = done.iter().map(|m| m.disparity.delta).collect();
    let eps: Vec<f64> = done.iter().filter_map(|m| m.realized_epsilon).collect();
    let mean_group_scores = done.first().map(|first| {
        (0..first.group_scores.per_group.len())
            .map(|g| done.iter().map(|m| m.group_scores.per_group[g]).sum::<f64>() / done.len() as f64)
            .collect()
    });
    let seeds_failed = runs.len() - done.len();
    CellSummary {
        objective,
        privacy_label: level.label.clone(),
        tau,
        target_epsilon: level.target_epsilon,
        noise_multiplier: runs.iter().find_map(|r| r.privacy.as_ref()).map(|p| p.noise_multiplier),
        realized_epsilon: MeanStd::of(&eps).map(|m| m.mean),
        seeds_completed: done.len(),
        seeds_failed,
        failed: seeds_failed > 0 || runs.is_empty(),
        score: MeanStd::of(&scores),
        disparity: MeanStd::of(&gaps),
        mean_group_scores,
        errors,
    }
}
