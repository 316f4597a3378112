use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Result};
use clap::{Parser, Subcommand, ValueEnum};
use lassopv_core::evalsuite::{parse_bounds, Direction, EvalOptions, StatKind};
use lassopv_core::lassopv::{monte_carlo_pvalue, selection_pvalues, write_selection_tsv, MIN_SIMULATIONS};
use lassopv_core::netharness::{batches_from_dag, generate_null, greedy_max_dag, Dag, ScoredEdgeList};
use lassopv_core::pipeline::{evaluate_external, run_experiment, run_tasks, ExperimentConfig};
use lassopv_core::{load_matrix, DataMatrix, TableFormat};

/// Exit code for computation failures; usage and IO errors use 2.
const EXIT_COMPUTE: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "lassopv", version, propagate_version = true, about = "Lasso first-activation p-values and batched p-value quality tests")]
struct Cli {
    /// More log output on stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a centered iid standard normal matrix.
    Simulate {
        #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
        samples: u64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        vars: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a DAG: greedy maximal from scored edges, or complete over a
    /// random ordering of a data file's columns.
    Dag {
        /// Scored edge list (source, target, score).
        #[arg(long, conflicts_with = "random_order", required_unless_present = "random_order")]
        edges: Option<PathBuf>,
        /// Data file whose columns become the nodes of a random-order complete DAG.
        #[arg(long)]
        random_order: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Lasso selection p-values for every node with parents.
    Select {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dag: PathBuf,
        #[arg(long)]
        max_knots: Option<usize>,
        /// Rank inverse-normal transform the data instead of only centering it.
        #[arg(long)]
        rank_normalize: bool,
        /// Worker threads (0: all cores).
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the evaluation battery on a (batch_id, value) or selection TSV.
    Evaluate {
        #[arg(long)]
        pvalues: PathBuf,
        /// Treat values as a generic statistic with this significance direction.
        #[arg(long, value_enum)]
        generic: Option<GenericDirection>,
        #[arg(long, value_enum, default_value_t = Preset::Standard)]
        preset: Preset,
        /// Cutoff for the real-data preset.
        #[arg(long, default_value_t = 0.01)]
        cutoff: f64,
        #[arg(long)]
        thresholds: Option<usize>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        lower: Option<f64>,
        #[arg(long)]
        exclude_ones: bool,
        /// KS window as `lo,hi`.
        #[arg(long)]
        ks_bounds: Option<String>,
        /// AUC bounds as `lo,hi;lo,hi;...`.
        #[arg(long)]
        bounds: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads when the config leaves parallelism at 0.
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Compare a selection p-value with its Monte-Carlo estimate.
    McCheck {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dag: PathBuf,
        #[arg(long)]
        target: String,
        /// Predictor name, or its position among the target's parents.
        #[arg(long)]
        predictor: String,
        #[arg(long, value_parser = clap::value_parser!(u64).range(MIN_SIMULATIONS as u64..))]
        sims: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        rank_normalize: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GenericDirection {
    Larger,
    Smaller,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Standard,
    RealData,
    HighDimensional,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// IO and malformed input are usage errors; everything else is a
/// computation failure.
fn exit_code(e: &anyhow::Error) -> u8 {
    if e.is::<UsageError>() {
        return EXIT_USAGE;
    }
    match e.downcast_ref::<lassopv_core::Error>() {
        Some(err) => core_exit_code(err),
        None if e.chain().any(|c| c.is::<std::io::Error>()) => EXIT_USAGE,
        None => EXIT_COMPUTE,
    }
}

fn core_exit_code(err: &lassopv_core::Error) -> u8 {
    use lassopv_core::Error::*;
    match err {
        File { source, .. } => core_exit_code(source),
        Io(_) | Json(_) | EmptyInput | Parse { .. } | RaggedRow { .. } => EXIT_USAGE,
        _ => EXIT_COMPUTE,
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Simulate { samples, vars, seed, out } => {
            let m = generate_null(samples as usize, vars as usize, seed)?;
            m.write_table(&out, TableFormat::from_path(&out))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Dag {
            edges,
            random_order,
            seed,
            out,
        } => {
            let dag = match (edges, random_order) {
                (Some(e), _) => greedy_max_dag(&ScoredEdgeList::read_tsv(&e)?),
                (None, Some(d)) => Dag::complete_random_order(read_data(&d, false)?.var_names(), seed)?,
                (None, None) => unreachable!("clap requires one source"),
            };
            dag.write_tsv(&out)?;
            log::info!("{} nodes, {} edges", dag.nodes().len(), dag.edge_count());
            Ok(ExitCode::SUCCESS)
        }
        Command::Select {
            data,
            dag,
            max_knots,
            rank_normalize,
            threads,
            out,
        } => {
            let m = read_data(&data, rank_normalize)?;
            let dag = Dag::read_tsv(&dag)?;
            let tasks = batches_from_dag(&dag, &m)?;
            let outcomes = run_tasks(&m, &tasks, max_knots, threads)?;
            let mut results = Vec::new();
            let mut failed = 0;
            for (record, result) in outcomes {
                match result {
                    Some(r) => results.push(r),
                    None => {
                        failed += 1;
                        eprintln!("task {} failed: {}", record.target, record.error.unwrap_or_default());
                    }
                }
            }
            write_selection_tsv(&out, &results)?;
            Ok(if failed > 0 {
                ExitCode::from(EXIT_COMPUTE)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Evaluate {
            pvalues,
            generic,
            preset,
            cutoff,
            thresholds,
            bins,
            lower,
            exclude_ones,
            ks_bounds,
            bounds,
            out,
        } => {
            let mut options = match preset {
                Preset::Standard => EvalOptions::default(),
                Preset::RealData => EvalOptions::real_data(cutoff),
                Preset::HighDimensional => EvalOptions::high_dimensional(),
            };
            if let Some(t) = thresholds {
                options.n_thresholds = t;
            }
            if let Some(b) = bins {
                options.n_bins = b;
            }
            if let Some(l) = lower {
                options.lower = l;
            }
            options.exclude_ones |= exclude_ones;
            if let Some(s) = ks_bounds {
                let parsed = parse_bounds(&s).map_err(usage)?;
                match parsed.as_slice() {
                    [b] => options.ks_bounds = *b,
                    _ => return Err(usage("--ks-bounds takes a single `lo,hi` pair")),
                }
            }
            if let Some(s) = bounds {
                options.auc_bounds = parse_bounds(&s).map_err(usage)?;
            }
            options.validate().map_err(usage)?;
            let kind = match generic {
                None => StatKind::Pvalue,
                Some(GenericDirection::Larger) => StatKind::Generic(Direction::LargerIsSignificant),
                Some(GenericDirection::Smaller) => StatKind::Generic(Direction::SmallerIsSignificant),
            };
            let report = evaluate_external(&pvalues, kind, &options)?;
            for w in &report.warnings {
                log::warn!("{w}");
            }
            report.write_dir(&out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, threads } => {
            let mut c = ExperimentConfig::load(&config)?;
            if c.parallelism == 0 {
                c.parallelism = threads;
            }
            let manifest = run_experiment(&c)?;
            log::info!(
                "{} tasks, {} failed, outputs in {}",
                manifest.n_tasks,
                manifest.n_failed,
                c.output_dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::McCheck {
            data,
            dag,
            target,
            predictor,
            sims,
            seed,
            rank_normalize,
        } => {
            let m = read_data(&data, rank_normalize)?;
            let dag = Dag::read_tsv(&dag)?;
            let task = batches_from_dag(&dag, &m)?
                .into_iter()
                .find(|t| t.target == target)
                .ok_or_else(|| anyhow!("`{target}` is not a DAG node with parents"))?;
            let x = m.select_columns(&task.predictor_columns)?;
            let y = m.column(task.target_column);
            let i = match x.column_index(&predictor) {
                Some(i) => i,
                None => predictor
                    .parse::<usize>()
                    .ok()
                    .filter(|&i| i < x.n_vars())
                    .ok_or_else(|| anyhow!("`{predictor}` is not a parent of `{target}`"))?,
            };
            let sel = selection_pvalues(&target, &x, y, None)?;
            let row = &sel.predictors[i];
            let Some(lambda) = row.entry_lambda else {
                bail!("predictor `{}` never becomes active, so its p-value is 1 by convention", row.predictor);
            };
            let est = monte_carlo_pvalue(&x, y, i, lambda, sims as usize, seed)?;
            let z = if est.stderr > 0.0 {
                (est.p_hat - row.pvalue) / est.stderr
            } else {
                f64::NAN
            };
            println!("target\tpredictor\tentry_lambda\tpvalue\tp_hat\tstderr\tz_gap\tn_valid");
            println!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                target, row.predictor, lambda, row.pvalue, est.p_hat, est.stderr, z, est.n_valid
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

fn read_data(path: &Path, rank_normalize: bool) -> Result<DataMatrix> {
    let m = load_matrix(path, TableFormat::from_path(path))?;
    Ok(if rank_normalize {
        m.rank_inverse_normal()?
    } else {
        m.center_columns()
    })
}
