//! Command-line driver.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use htil_core::AccuracyMatrix;

use crate::checkpoint::Checkpoint;
use crate::config::{Config, Source};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::experiment;
use crate::report::{stage_metrics, RunReport, StageMetrics, Status};

#[derive(Debug, Parser)]
#[command(name = "htil", version, about = "Hebbian task-incremental learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML, or a run report whose embedded config is reused).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// First seed (overrides the config).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Number of consecutive seeds (overrides the config).
    #[arg(long, global = true, value_name = "K")]
    seeds: Option<u64>,
    /// Kernel plasticity for `til` (defaults to the config).
    #[arg(long, global = true, value_enum)]
    kp: Option<Switch>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Checkpoint to continue (`til`) or to read the extractor from (`common-head`).
    #[arg(long, global = true, value_name = "PATH")]
    resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decode audio and build the feature cache.
    Prepare,
    /// Task-incremental runs, checkpointed after every stage.
    Til {
        /// Also train the joint references needed for intransigence.
        #[arg(long)]
        with_joint: bool,
    },
    /// Joint reference runs over the union of tasks at every stage.
    Joint,
    /// A single head over all classes on a finished run's extractor.
    CommonHead,
    /// KP on vs. off on shared seeds, with joint and common-head references.
    Compare,
    /// Recomputes per-stage metrics from a stored accuracy matrix.
    Metrics {
        /// CSV rows of a lower-triangular matrix (fractions), or a run report.
        #[arg(long, value_name = "PATH")]
        matrix: PathBuf,
        /// Joint reference accuracies per stage, comma separated.
        #[arg(long, value_delimiter = ',', value_name = "A0,A1,..")]
        joint: Vec<f64>,
    },
}

/// Parses `argv` (program name first) and runs the command. Returns the exit
/// code: 0 on success, 2 for usage errors, 1 for everything else.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_threads();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Sizes the global pool from `HTIL_THREADS`, if set.
fn init_threads() {
    if let Some(n) = std::env::var("HTIL_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Fails only when the pool already exists, e.g. a second call in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    if let Some(seeds) = cli.seeds {
        config.run.seeds = seeds;
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(cli: &Cli, mode: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| Path::new("runs").join(mode))
}

/// Writes the report, then turns a partial run into an error exit.
fn publish(report: &RunReport, dir: &Path) -> Result<()> {
    report.write_all(dir)?;
    eprintln!("wrote {}", dir.join("report.json").display());
    print_summary(report);
    match report.status {
        Status::Complete => Ok(()),
        Status::Partial => Err(Error::Report(format!(
            "run incomplete; partial results saved in {}",
            dir.display()
        ))),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Prepare => {
            let config = load_config(&cli)?;
            let dataset = Dataset::load(&config)?;
            let classes: std::collections::BTreeSet<usize> = dataset.records.iter().map(|r| r.class).collect();
            println!(
                "{} clips, {} classes, features {:?}; train {} / val {} / test {}",
                dataset.records.len(),
                classes.len(),
                dataset.records[0].features.shape(),
                dataset.split.train.len(),
                dataset.split.val.len(),
                dataset.split.test.len()
            );
            if config.data.source == Source::Esc {
                if let Some(dir) = &config.data.esc.cache_dir {
                    println!("feature cache: {}", dir.display());
                }
            }
            Ok(())
        }
        Command::Til { with_joint } => {
            let dir = out_dir(&cli, "til");
            let checkpoints = dir.join("checkpoints");
            if let Some(path) = &cli.resume {
                let checkpoint = Checkpoint::load(path)?;
                eprintln!(
                    "resuming seed {} (kp {}) at task {}",
                    checkpoint.seed,
                    checkpoint.kp_enabled,
                    checkpoint.run.next_task()
                );
                let dataset = Dataset::load(&checkpoint.config)?;
                let report = experiment::resume_mode(checkpoint, &dataset, Some(&checkpoints))?;
                return publish(&report, &dir);
            }
            let config = load_config(&cli)?;
            let kp = cli.kp.map_or(config.plasticity.enabled, |s| s == Switch::On);
            let dataset = Dataset::load(&config)?;
            let report = experiment::til_mode(&config, &dataset, &config.seeds(), kp, *with_joint, Some(&checkpoints))?;
            publish(&report, &dir)
        }
        Command::Joint => {
            let config = load_config(&cli)?;
            let dataset = Dataset::load(&config)?;
            let report = experiment::joint_mode(&config, &dataset, &config.seeds())?;
            publish(&report, &out_dir(&cli, "joint"))
        }
        Command::CommonHead => {
            let path = cli
                .resume
                .as_ref()
                .ok_or_else(|| Error::Invalid("common-head needs --resume with a finished til checkpoint".into()))?;
            let checkpoint = Checkpoint::load(path)?;
            if !checkpoint.run.is_done() {
                return Err(Error::Invalid(format!(
                    "checkpoint {} stops after task {} of {}; finish it with `til --resume` first",
                    path.display(),
                    checkpoint.run.next_task(),
                    checkpoint.run.tasks().len()
                )));
            }
            let dataset = Dataset::load(&checkpoint.config)?;
            let report = experiment::common_head_mode(&checkpoint, &dataset)?;
            publish(&report, &out_dir(&cli, "common-head"))
        }
        Command::Compare => {
            let config = load_config(&cli)?;
            let dataset = Dataset::load(&config)?;
            let report = experiment::compare_mode(&config, &dataset, &config.seeds())?;
            publish(&report, &out_dir(&cli, "compare"))
        }
        Command::Metrics { matrix, joint } => {
            let text = fs::read_to_string(matrix).map_err(|e| Error::io(matrix, e))?;
            if text.trim_start().starts_with('{') {
                let mut report = RunReport::read_json(matrix)?;
                report.refresh_metrics()?;
                for t in &report.til {
                    println!("# seed {} kp {}", t.seed, t.kp_enabled);
                    print_metrics(&t.stages);
                }
            } else {
                let m = parse_matrix(&text, matrix)?;
                let joint = (!joint.is_empty()).then_some(joint.as_slice());
                print_metrics(&stage_metrics(&m, joint));
            }
            Ok(())
        }
    }
}

/// One row per line, values separated by commas or whitespace; `#` starts a comment.
pub fn parse_matrix(text: &str, path: &Path) -> Result<AccuracyMatrix> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    AccuracyMatrix::from_rows(rows).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

fn print_metrics(stages: &[StageMetrics]) {
    let f = |v: Option<f64>| v.map_or(String::new(), |v| format!("{:.4}", 100.0 * v));
    println!("stage,overall,previous,last,fm,bwt,im");
    for s in stages {
        println!(
            "{},{},{},{},{},{},{}",
            s.stage,
            f(Some(s.overall)),
            f(s.previous),
            f(Some(s.last)),
            f(s.fm),
            f(s.bwt),
            f(s.im)
        );
    }
}

fn print_summary(report: &RunReport) {
    for kp in [false, true] {
        if !report.til.iter().any(|t| t.kp_enabled == kp) {
            continue;
        }
        let f = |v: &[Option<f64>]| {
            v.iter()
                .map(|x| x.map_or("-".to_string(), |x| format!("{:.1}", 100.0 * x)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        eprintln!(
            "kp {:<3} overall [{}]  fm [{}]  bwt [{}]",
            if kp { "on" } else { "off" },
            f(&report.mean_by_stage(kp, |s| Some(s.overall))),
            f(&report.mean_by_stage(kp, |s| s.fm)),
            f(&report.mean_by_stage(kp, |s| s.bwt)),
        );
    }
}
