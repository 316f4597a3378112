//! End-to-end experiments: data, DAG, one lasso selection per node with
//! parents, pooled evaluation, and a manifest of everything written.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{load_matrix, DataMatrix, TableFormat};
use crate::error::{Error, Result};
use crate::evalsuite::{evaluate, BatchedStatistics, EvalOptions, EvalReport, StatKind};
use crate::lassopv::{selection_pvalues, selection_to_tsv, SelectionResult};
use crate::netharness::{batches_from_dag, generate_null, greedy_max_dag, reduce_dataset, Dag, RegressionTask, ScoredEdgeList};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    GenerateNull {
        n_samples: usize,
        n_vars: usize,
        seed: u64,
    },
    Load {
        path: PathBuf,
        #[serde(default)]
        format: Option<TableFormat>,
        /// Apply the rank inverse-normal transform instead of plain centering.
        #[serde(default)]
        rank_normalize: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DagSource {
    CompleteRandomOrder { seed: u64 },
    /// Scored edges, turned into a greedy maximal DAG.
    EdgeList { path: PathBuf },
    /// A ready DAG as `source, target` rows.
    DagFile { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalPreset {
    /// High-dimensional when any task has at least as many predictors as
    /// samples, standard otherwise.
    #[default]
    Auto,
    Standard,
    RealData,
    HighDimensional,
}

/// Evaluation settings: a preset plus optional overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub preset: EvalPreset,
    pub real_data_cutoff: f64,
    pub n_thresholds: Option<usize>,
    pub n_bins: Option<usize>,
    pub lower: Option<f64>,
    pub exclude_ones: Option<bool>,
    pub ks_bounds: Option<(f64, f64)>,
    pub scatter_quantiles: Option<Vec<f64>>,
    pub auc_bounds: Option<Vec<(f64, f64)>>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            preset: EvalPreset::Auto,
            real_data_cutoff: 0.01,
            n_thresholds: None,
            n_bins: None,
            lower: None,
            exclude_ones: None,
            ks_bounds: None,
            scatter_quantiles: None,
            auc_bounds: None,
        }
    }
}

impl EvaluationConfig {
    pub fn options(&self, high_dimensional: bool) -> EvalOptions {
        let mut o = match self.preset {
            EvalPreset::Auto if high_dimensional => EvalOptions::high_dimensional(),
            EvalPreset::Auto | EvalPreset::Standard => EvalOptions::default(),
            EvalPreset::RealData => EvalOptions::real_data(self.real_data_cutoff),
            EvalPreset::HighDimensional => EvalOptions::high_dimensional(),
        };
        if let Some(v) = self.n_thresholds {
            o.n_thresholds = v;
        }
        if let Some(v) = self.n_bins {
            o.n_bins = v;
        }
        if let Some(v) = self.lower {
            o.lower = v;
        }
        if let Some(v) = self.exclude_ones {
            o.exclude_ones = v;
        }
        if let Some(v) = self.ks_bounds {
            o.ks_bounds = v;
        }
        if let Some(v) = &self.scatter_quantiles {
            o.scatter_quantiles = v.clone();
        }
        if let Some(v) = &self.auc_bounds {
            o.auc_bounds = v.clone();
        }
        o
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub dag: DagSource,
    /// Keep only this many highest-degree nodes.
    #[serde(default)]
    pub reduce: Option<usize>,
    #[serde(default)]
    pub max_knots: Option<usize>,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub parallelism: usize,
    /// Fail the run if any task fails.
    #[serde(default)]
    pub strict: bool,
}

impl ExperimentConfig {
    /// Reads a JSON config and resolves its relative paths against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::from(e).in_file(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(config.relative_to(base))
    }

    pub fn relative_to(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DatasetSource::Load { path, .. } = &mut self.dataset {
            fix(path);
        }
        match &mut self.dag {
            DagSource::EdgeList { path } | DagSource::DagFile { path } => fix(path),
            DagSource::CompleteRandomOrder { .. } => {}
        }
        fix(&mut self.output_dir);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: usize,
    pub target: String,
    pub n_predictors: usize,
    pub ok: bool,
    pub error: Option<String>,
    pub truncated: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRegistry {
    pub dataset: Option<u64>,
    pub dag: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub seeds: SeedRegistry,
    pub n_samples: usize,
    pub n_vars: usize,
    pub n_tasks: usize,
    pub n_failed: usize,
    pub tasks: Vec<TaskRecord>,
    pub evaluation: EvalOptions,
    pub warnings: Vec<String>,
    pub seconds_selection: f64,
    pub seconds_total: f64,
    pub outputs: Vec<OutputFile>,
}

/// Everything a run produces before it is written out.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub tasks: Vec<RegressionTask>,
    pub records: Vec<TaskRecord>,
    pub selections: Vec<SelectionResult>,
    pub statistics: BatchedStatistics,
    pub report: EvalReport,
    pub options: EvalOptions,
    pub n_samples: usize,
    pub n_vars: usize,
    pub seconds_selection: f64,
}

fn load_dataset(source: &DatasetSource) -> Result<DataMatrix> {
    match source {
        DatasetSource::GenerateNull {
            n_samples,
            n_vars,
            seed,
        } => generate_null(*n_samples, *n_vars, *seed),
        DatasetSource::Load {
            path,
            format,
            rank_normalize,
        } => {
            let raw = load_matrix(path, format.unwrap_or_else(|| TableFormat::from_path(path)))?;
            if *rank_normalize {
                raw.rank_inverse_normal()
            } else {
                Ok(raw.center_columns())
            }
        }
    }
}

fn load_dag(source: &DagSource, m: &DataMatrix) -> Result<Dag> {
    match source {
        DagSource::CompleteRandomOrder { seed } => Dag::complete_random_order(m.var_names(), *seed),
        DagSource::EdgeList { path } => Ok(greedy_max_dag(&ScoredEdgeList::read_tsv(path)?)),
        DagSource::DagFile { path } => Dag::read_tsv(path),
    }
}

/// Runs one lasso selection per task on a pool of `parallelism` threads.
/// Results come back in task order whatever the scheduling.
pub fn run_tasks(
    m: &DataMatrix,
    tasks: &[RegressionTask],
    max_knots: Option<usize>,
    parallelism: usize,
) -> Result<Vec<(TaskRecord, Option<SelectionResult>)>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| {
        tasks
            .par_iter()
            .enumerate()
            .map(|(id, task)| {
                let start = Instant::now();
                let outcome = m
                    .select_columns(&task.predictor_columns)
                    .and_then(|x| selection_pvalues(&task.target, &x, m.column(task.target_column), max_knots));
                let seconds = start.elapsed().as_secs_f64();
                let mut record = TaskRecord {
                    task_id: id,
                    target: task.target.clone(),
                    n_predictors: task.predictor_columns.len(),
                    ok: outcome.is_ok(),
                    error: None,
                    truncated: false,
                    seconds,
                };
                match outcome {
                    Ok(r) => {
                        record.truncated = r.truncated;
                        (record, Some(r))
                    }
                    Err(e) => {
                        log::warn!("task {id} ({}) failed: {e}", task.target);
                        record.error = Some(e.to_string());
                        (record, None)
                    }
                }
            })
            .collect()
    }))
}

/// Generates or loads data, builds tasks, runs selection and evaluation,
/// without writing anything.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut m = load_dataset(&config.dataset)?;
    let mut dag = load_dag(&config.dag, &m)?;
    if let Some(k) = config.reduce {
        (dag, m) = reduce_dataset(&dag, &m, k)?;
    }
    let tasks = batches_from_dag(&dag, &m)?;
    log::info!(
        "{} tasks over {} samples x {} variables",
        tasks.len(),
        m.n_samples(),
        m.n_vars()
    );

    let start = Instant::now();
    let outcomes = run_tasks(&m, &tasks, config.max_knots, config.parallelism)?;
    let seconds_selection = start.elapsed().as_secs_f64();

    let mut records = Vec::with_capacity(outcomes.len());
    let mut selections = Vec::new();
    for (record, result) in outcomes {
        records.push(record);
        selections.extend(result);
    }
    let n_failed = records.iter().filter(|r| !r.ok).count();
    if config.strict && n_failed > 0 {
        let first = records.iter().find(|r| !r.ok).unwrap();
        return Err(Error::invalid(format!(
            "{n_failed} task(s) failed in strict mode; first: {} ({})",
            first.target,
            first.error.as_deref().unwrap_or("")
        )));
    }

    let high_dim = tasks.iter().any(|t| t.predictor_columns.len() >= m.n_samples());
    let options = config.evaluation.options(high_dim);
    let statistics = BatchedStatistics::from_selection(&selections)?;
    let mut report = evaluate(&statistics, &options)?;
    if tasks.is_empty() {
        report.warnings.insert(0, "DAG yields no regression tasks".into());
    }
    if n_failed > 0 {
        report.warnings.push(format!("{n_failed} task(s) failed and are left out"));
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok(ExperimentResult {
        tasks,
        records,
        selections,
        statistics,
        report,
        options,
        n_samples: m.n_samples(),
        n_vars: m.n_vars(),
        seconds_selection,
    })
}

/// Runs an experiment and writes `selection.tsv`, `pvalues.tsv`, the report
/// files and `manifest.json` into the configured output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunManifest> {
    let start = Instant::now();
    let result = execute(config)?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))?;

    let mut names = Vec::new();
    for (name, body) in [
        ("selection.tsv", selection_to_tsv(&result.selections)),
        ("pvalues.tsv", result.statistics.to_tsv()),
    ] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::from(e).in_file(&path))?;
        names.push(name.to_string());
    }
    names.extend(result.report.write_dir(dir)?);
    let outputs = names
        .into_iter()
        .map(|name| digest(&dir.join(&name)).map(|(bytes, sha256)| OutputFile { name, bytes, sha256 }))
        .collect::<Result<Vec<_>>>()?;

    let seeds = SeedRegistry {
        dataset: match config.dataset {
            DatasetSource::GenerateNull { seed, .. } => Some(seed),
            DatasetSource::Load { .. } => None,
        },
        dag: match config.dag {
            DagSource::CompleteRandomOrder { seed } => Some(seed),
            _ => None,
        },
    };
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        seeds,
        n_samples: result.n_samples,
        n_vars: result.n_vars,
        n_tasks: result.tasks.len(),
        n_failed: result.records.iter().filter(|r| !r.ok).count(),
        tasks: result.records,
        evaluation: result.options,
        warnings: result.report.warnings.clone(),
        seconds_selection: result.seconds_selection,
        seconds_total: start.elapsed().as_secs_f64(),
        outputs,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::from(e).in_file(&path))?;
    Ok(manifest)
}

fn digest(path: &Path) -> Result<(u64, String)> {
    let bytes = fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    Ok((bytes.len() as u64, format!("{:x}", Sha256::digest(&bytes))))
}

/// Evaluates a `(batch_id, value)` or selection TSV written elsewhere.
/// Generic statistics get one-vs-rest KS tests.
pub fn evaluate_external(pvalue_file: &Path, kind: StatKind, options: &EvalOptions) -> Result<EvalReport> {
    let s = BatchedStatistics::read_tsv(pvalue_file, kind)?;
    evaluate(&s, options)
}
