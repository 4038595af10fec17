use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use wsynth::backend::{AdapterBackend, ExecutionBackend, MockAdapter, RecordingBackend, SimulatedBackend};
use wsynth::catalog::{gen_synthetic_catalog, load_dataset, save_dataset, SyntheticSpec};
use wsynth::costmodel::{collect_profiles, fit, JoinRegressorKind};
use wsynth::pipeline::{
    apply_overrides, parse_report, summarize, summary_to_string, synthesize_workload, BackendKind, PipelineConfig,
};
use wsynth::pool::QueryPool;
use wsynth::trace::{answer_key_to_string, gen_synthetic_trace, load_trace, save_trace, TraceGenOptions};
use wsynth::LocalModel;

#[derive(Parser)]
#[command(name = "wsynth", version, about = "Synthesize SQL workloads that reproduce a query trace")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Regressor {
    Parametric,
    Trees,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic proxy dataset (catalog plus table files).
    GenData {
        #[arg(long, default_value_t = 4)]
        tables: usize,
        #[arg(long, default_value_t = 5000)]
        rows: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Profile random queries on the dataset and fit the local cost model.
    Profile {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long, default_value_t = 200)]
        queries: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Regressor::Parametric)]
        join_regressor: Regressor,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a trace from random queries, with an answer key.
    GenTrace {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long, default_value_t = 50)]
        n: usize,
        /// Fraction of exact repeats.
        #[arg(long, default_value_t = 0.0)]
        dup: f64,
        /// Fraction of same-template repeats with new literals.
        #[arg(long, default_value_t = 0.0)]
        template_dup: f64,
        /// Emit presence bits instead of operator counts.
        #[arg(long)]
        presence: bool,
        /// Leave the vendor hash columns empty.
        #[arg(long)]
        no_hashes: bool,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        key: Option<PathBuf>,
    },
    /// Synthesize a workload for a trace.
    Synth {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Config override, `key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Query pool directory, loaded if present and saved afterwards.
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Write every executed profile here for later mock-adapter replay.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Print the percentile summary of a report.
    Eval {
        #[arg(long)]
        report: PathBuf,
    },
    /// Print the default configuration.
    Config,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn simulated(dir: &Path) -> Result<SimulatedBackend> {
    let (catalog, tables) = load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    Ok(SimulatedBackend::new(catalog, &tables)?)
}

fn load_config(path: Option<&Path>, sets: &[String]) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            PipelineConfig::parse(&text)?
        }
        None => PipelineConfig::default(),
    };
    for s in sets {
        let Some((k, v)) = s.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{s}`");
        };
        cfg.set(k, v)?;
    }
    cfg.search.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { tables, rows, seed, out } => {
            let (catalog, data) = gen_synthetic_catalog(SyntheticSpec {
                n_tables: tables,
                rows_per_table: rows,
                seed,
            })?;
            save_dataset(&out, &catalog, &data)?;
            println!("wrote {} tables to {}", data.len(), out.display());
        }
        Command::Profile {
            catalog,
            queries,
            seed,
            join_regressor,
            out,
        } => {
            let backend = simulated(&catalog)?;
            let samples = collect_profiles(&backend, queries, seed)?;
            let kind = match join_regressor {
                Regressor::Parametric => JoinRegressorKind::Parametric,
                Regressor::Trees => JoinRegressorKind::TreeEnsemble,
            };
            let model: LocalModel = fit(&samples, kind, backend.parallel_tasks())?;
            model.save(&out)?;
            println!(
                "fitted on {} operator samples; in-sample median relative error {:.4}",
                model.meta.samples, model.meta.median_relative_error
            );
        }
        Command::GenTrace {
            catalog,
            n,
            dup,
            template_dup,
            presence,
            no_hashes,
            seed,
            out,
            key,
        } => {
            let backend = simulated(&catalog)?;
            let opts = TraceGenOptions {
                dup,
                template_dup,
                presence,
                with_hashes: !no_hashes,
                ..TraceGenOptions::default()
            };
            let trace = gen_synthetic_trace(&backend, n, seed, opts)?;
            save_trace(&trace.records, &out)?;
            if let Some(k) = key {
                write(&k, &answer_key_to_string(&trace.answer_key))?;
            }
            println!("wrote {} records to {}", trace.records.len(), out.display());
        }
        Command::Synth {
            trace,
            catalog,
            model,
            config,
            set,
            out,
            report,
            pool,
            record,
        } => {
            let cfg = load_config(config.as_deref(), &set)?;
            let mut records = load_trace(&trace)?;
            apply_overrides(&mut records, &cfg);
            let model = LocalModel::load(&model)?;
            let sim: Arc<dyn ExecutionBackend> = Arc::new(simulated(&catalog)?);
            let mut backend: Arc<dyn ExecutionBackend> = match cfg.backend {
                BackendKind::Simulated => sim,
                BackendKind::MockAdapter => {
                    let Some(dir) = &cfg.mock_dir else {
                        bail!("backend=mock-adapter needs mock_dir");
                    };
                    Arc::new(AdapterBackend::new(MockAdapter::new(dir), sim))
                }
            };
            if let Some(dir) = record {
                backend = Arc::new(RecordingBackend::new(backend, dir)?);
            }
            let qpool = match &pool {
                Some(dir) if dir.join("index.csv").exists() => QueryPool::load(dir, cfg.tau)?,
                _ => QueryPool::new(cfg.tau),
            };
            let result = synthesize_workload(&records, backend.as_ref(), &model, &cfg, &qpool)?;
            write(&out, &result.workload)?;
            write(&report, &result.report)?;
            if let Some(dir) = pool {
                qpool.save(&dir)?;
            }
            print!("{}", summary_to_string(&summarize(&result.rows)));
        }
        Command::Eval { report } => {
            let text = fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            let rows = parse_report(&text)?;
            let s = summarize(&rows);
            println!("{:<14}{:>12}{:>12}{:>12}", "metric", "p50", "p90", "p99");
            for (name, v) in [("cpu q-error", s.cpu_qerror), ("bytes q-error", s.bytes_qerror)] {
                println!("{name:<14}{:>12.4}{:>12.4}{:>12.4}", v[0], v[1], v[2]);
            }
            println!("operator MAE: join {:.4} aggregate {:.4} sort {:.4}", s.op_mae[0], s.op_mae[1], s.op_mae[2]);
            println!(
                "records {} failed {} flagged {} within tolerance {}",
                s.records, s.failed, s.flagged, s.within_tolerance
            );
            println!(
                "reuse: miss {} exact {} template {} proxy {}; executions {}",
                s.reuse[0], s.reuse[1], s.reuse[2], s.reuse[3], s.executions
            );
        }
        Command::Config => print!("{}", PipelineConfig::default().to_text()),
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
