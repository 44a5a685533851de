//! `eegkd`: data preparation, training, distillation, studies and reports.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 when a
//! validated configuration fails at run time.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use eegkd::experiments::{load_config, prepare, render_report, ExperimentConfig, ReportOptions, ResultsStore, Runner, Study};
use eegkd::training::{Role, RunRecord};

/// Environment variable holding the default prepared-data directory.
const DATA_ROOT_ENV: &str = "EEGKD_DATA_ROOT";

#[derive(Parser, Debug)]
#[command(name = "eegkd", version, about = "Similarity-keeping distillation for low-density EEG decoding")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    #[command(flatten)]
    common: Common,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Experiment config file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a config value by dotted path, e.g. `distill.beta=450`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Results directory, or the report directory for `report`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Maximum number of concurrent training runs.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Comma-separated student seeds, e.g. `0,1,2`.
    #[arg(long, global = true, value_name = "CSV", value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Verb {
    /// Convert raw recordings (or synthetic data) into prepared containers.
    Prepare,
    /// Train the teacher of the first subject and pair.
    TrainTeacher,
    /// Distill one student from its teacher.
    Distill,
    /// Train one student without distillation.
    Baseline,
    /// Run the study named by the config's `study` key.
    Sweep,
    /// Run backward electrode elimination.
    Eliminate,
    /// Run the similarity-criterion ablation.
    Ablate,
    /// Render tables and figures from the results store.
    Report,
}

/// Failure kinds mapped to exit codes.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn load(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut defaults = ExperimentConfig::default();
    if let Some(root) = std::env::var_os(DATA_ROOT_ENV) {
        defaults.data.root = PathBuf::from(root);
    }
    let text = common
        .config
        .as_ref()
        .map(|p| std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display())))
        .transpose()?;
    let mut cfg = load_config(&defaults, text.as_deref(), &common.overrides)?;
    if let Some(jobs) = common.jobs {
        cfg.jobs = jobs;
    }
    if let Some(seeds) = &common.seed_list {
        cfg.seeds = seeds.clone();
        cfg.elimination.seeds = seeds.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_records(records: &[RunRecord]) {
    for r in records {
        let acc = r.test_accuracy.map_or_else(|| "-".to_string(), |a| format!("{a:.2}"));
        println!("{}\t{}\t{}\t{}\t{}\tseed={}\t{}\t{}", r.run_id, r.role, r.architecture, r.montage, r.subject_id, r.seed, acc, r.status);
    }
}

fn execute(verb: Verb, common: &Common) -> Result<(), Failure> {
    let mut cfg = load(common).map_err(Failure::Usage)?;
    let runtime = |e: eegkd::experiments::ExperimentError| Failure::Runtime(e.into());
    match verb {
        Verb::Prepare => {
            let paths = prepare(&cfg.data, &cfg.preprocess, &cfg.subjects).map_err(runtime)?;
            for p in paths {
                println!("{}", p.display());
            }
            return Ok(());
        }
        Verb::Report => {
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("report"));
            let store = ResultsStore::open_existing(&cfg.results_dir).map_err(runtime)?;
            let opts = ReportOptions { significance: cfg.cross_subject.significance, studies: None };
            for p in render_report(&store, &out, &opts).map_err(runtime)? {
                println!("{}", p.display());
            }
            return Ok(());
        }
        _ => {}
    }
    if let Some(out) = &common.out {
        cfg.results_dir = out.clone();
    }
    let store = ResultsStore::open(&cfg.results_dir).map_err(runtime)?;
    let runner = Runner::new(&cfg, &store).map_err(runtime)?;
    let records = match verb {
        Verb::TrainTeacher => vec![runner.single(Role::Teacher).map_err(runtime)?],
        Verb::Distill => vec![runner.single(Role::StudentDistilled).map_err(runtime)?],
        Verb::Baseline => vec![runner.single(Role::StudentBaseline).map_err(runtime)?],
        Verb::Sweep => runner.run_study(cfg.study).map_err(runtime)?,
        Verb::Eliminate => runner.run_study(Study::Elimination).map_err(runtime)?,
        Verb::Ablate => runner.run_study(Study::Ablation).map_err(runtime)?,
        Verb::Prepare | Verb::Report => unreachable!("handled above"),
    };
    print_records(&records);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.verb, &cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            eprintln!("run `eegkd --help` for usage");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            log::error!("{e:#}");
            ExitCode::from(2)
        }
    }
}
