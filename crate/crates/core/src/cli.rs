//! Command-line entry point.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | i/o or other runtime failure |
//! | 2 | invalid config or scene (field-level message on stderr) |
//! | 3 | remote backend unreachable |
//! | 4 | run directory lacks the requested datasets or metrics |
//! | 5 | replay diverged from the archive |
//!
//! Data goes to stdout, diagnostics to stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::actor::replay_trajectory;
use crate::backends::BackendError;
use crate::manifest::{self, ManifestError, RunManifest};
use crate::runner::{self, Experiment, RunError, Variant};
use crate::schema::{self, FieldError};
use crate::worldsim::{SceneError, SceneSpec};
use crate::{report, seed};

pub const EXIT_OK: u8 = 0;
pub const EXIT_IO: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_CONNECTIVITY: u8 = 3;
pub const EXIT_MISSING: u8 = 4;
pub const EXIT_DIVERGED: u8 = 5;

#[derive(Debug, Parser)]
#[command(name = "selu", version, about = "Actor-critic self-learning loop for embodied instruction following")]
pub struct Cli {
    /// Repeat for more log output on stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the configured variant and write a run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Measure the untrained backends on the evaluation batch; writes nothing.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Re-emit the fine-tuning datasets of a run.
    ExportDataset {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only this iteration; all iterations concatenated otherwise.
        #[arg(long)]
        iteration: Option<u32>,
        /// Train fraction of a seeded train/holdout split.
        #[arg(long)]
        split: Option<f64>,
    },
    /// Re-execute archived trajectories and check they reproduce.
    Replay {
        #[arg(long)]
        archive: PathBuf,
        /// Defaults to the `scene.toml` of the run holding the archive.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Render the metrics of a run.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        let code = if e.is_connectivity() {
            EXIT_CONNECTIVITY
        } else {
            match &e {
                RunError::Config(_)
                | RunError::Scene(_)
                | RunError::Backend(BackendError::Config(_) | BackendError::Prompt(_)) => EXIT_CONFIG,
                _ => EXIT_IO,
            }
        };
        Failure::new(code, e.to_string())
    }
}

impl From<ManifestError> for Failure {
    fn from(e: ManifestError) -> Self {
        let code = match e {
            ManifestError::Missing(_) => EXIT_MISSING,
            _ => EXIT_IO,
        };
        Failure::new(code, e.to_string())
    }
}

fn field_errors(path: &Path, errs: &[FieldError]) -> Failure {
    let lines: Vec<String> = errs.iter().map(|e| format!("{}: {e}", path.display())).collect();
    Failure::new(EXIT_IO, lines.join("\n"))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display())))
}

fn load_experiment(config: &Path, seed: Option<u64>, variant: Option<Variant>) -> Result<Experiment, Failure> {
    let mut exp = Experiment::load(config)?;
    if let Some(s) = seed {
        exp.config.seed = s;
    }
    if let Some(v) = variant {
        exp.config.variant = v;
    }
    exp.config.validate_against(&exp.scene).map_err(RunError::from)?;
    Ok(exp)
}

fn render(report: &runner::MetricsReport, format: Format) -> String {
    match format {
        Format::Table => report::render_table(report),
        Format::Json => report::render_json(report),
    }
}

pub fn cmd_run(config: &Path, out: &Path, seed: Option<u64>, variant: Option<Variant>, format: Format) -> Result<String, Failure> {
    let exp = load_experiment(config, seed, variant)?;
    let run = runner::run(&exp)?;
    let (dir, manifest) = manifest::write_run(out, &exp, &run)?;
    eprintln!("run directory: {}", dir.display());
    eprintln!("manifest sha256: {}", manifest.digest());
    Ok(render(&run.report, format))
}

pub fn cmd_evaluate(config: &Path, seed: Option<u64>, variant: Option<Variant>, format: Format) -> Result<String, Failure> {
    let mut exp = load_experiment(config, seed, variant)?;
    let variant = exp.config.variant;
    // Evaluation only: keep the decision mode, drop training.
    exp.config.iterations = 0;
    let mut run = runner::run(&exp)?;
    run.report.variant = variant;
    Ok(render(&run.report, format))
}

/// Indices `0..n` split into (train, holdout), each in ascending order.
pub fn split_indices(n: usize, train_fraction: f64, split_seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    runner::seeded_shuffle(&mut idx, split_seed);
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let (train, hold) = idx.split_at(n_train.min(n));
    let (mut train, mut hold) = (train.to_vec(), hold.to_vec());
    train.sort_unstable();
    hold.sort_unstable();
    (train, hold)
}

pub fn cmd_export_dataset(run_dir: &Path, out: &Path, iteration: Option<u32>, split: Option<f64>) -> Result<String, Failure> {
    if let Some(s) = split {
        if !(0.0..=1.0).contains(&s) {
            return Err(Failure::new(EXIT_CONFIG, format!("--split must lie in [0, 1], got {s}")));
        }
    }
    let m = RunManifest::load(run_dir)?;
    let mut its = m.dataset_iterations();
    if let Some(k) = iteration {
        its.retain(|&i| i == k);
    }
    if its.is_empty() {
        return Err(Failure::new(EXIT_MISSING, format!("no datasets in {}", run_dir.display())));
    }
    let mut actor = Vec::new();
    let mut critic = Vec::new();
    for k in its {
        let d = manifest::iter_dir(k);
        let rel_a = format!("{d}/d_actor.jsonl");
        let rel_c = format!("{d}/d_critic.jsonl");
        let text_a = manifest::read_listed(run_dir, &m, &rel_a)?;
        let text_c = manifest::read_listed(run_dir, &m, &rel_c)?;
        actor.extend(
            schema::parse_jsonl(&text_a, schema::parse_actor_line).map_err(|e| field_errors(&run_dir.join(&rel_a), &e))?,
        );
        critic.extend(
            schema::parse_jsonl(&text_c, schema::parse_critic_line).map_err(|e| field_errors(&run_dir.join(&rel_c), &e))?,
        );
    }
    fs::create_dir_all(out).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", out.display())))?;
    let mut summary = String::new();
    match split {
        None => {
            write_file(&out.join("d_actor.jsonl"), &schema::actor_jsonl(&actor))?;
            write_file(&out.join("d_critic.jsonl"), &schema::critic_jsonl(&critic))?;
            summary.push_str(&format!("d_actor.jsonl\t{}\nd_critic.jsonl\t{}\n", actor.len(), critic.len()));
        }
        Some(frac) => {
            let (at, ah) = split_indices(actor.len(), frac, seed::derive(m.seed, &[seed::domain::SPLIT, 0]));
            let (ct, ch) = split_indices(critic.len(), frac, seed::derive(m.seed, &[seed::domain::SPLIT, 1]));
            let a_train: Vec<_> = at.iter().map(|&i| actor[i].clone()).collect();
            let a_hold: Vec<_> = ah.iter().map(|&i| actor[i].clone()).collect();
            let c_train: Vec<_> = ct.iter().map(|&i| critic[i].clone()).collect();
            let c_hold: Vec<_> = ch.iter().map(|&i| critic[i].clone()).collect();
            for (name, text, n) in [
                ("d_actor.train.jsonl", schema::actor_jsonl(&a_train), a_train.len()),
                ("d_actor.holdout.jsonl", schema::actor_jsonl(&a_hold), a_hold.len()),
                ("d_critic.train.jsonl", schema::critic_jsonl(&c_train), c_train.len()),
                ("d_critic.holdout.jsonl", schema::critic_jsonl(&c_hold), c_hold.len()),
            ] {
                write_file(&out.join(name), &text)?;
                summary.push_str(&format!("{name}\t{n}\n"));
            }
        }
    }
    Ok(summary)
}

pub fn cmd_replay(archive: &Path, scene: Option<&Path>) -> Result<String, Failure> {
    let scene_path = match scene {
        Some(p) => p.to_path_buf(),
        None => archive
            .parent()
            .and_then(Path::parent)
            .map(|run| run.join(manifest::SCENE_FILE))
            .ok_or_else(|| Failure::new(EXIT_CONFIG, "cannot locate scene.toml; pass --scene"))?,
    };
    let spec = SceneSpec::load(&scene_path).map_err(|e: SceneError| Failure::new(EXIT_CONFIG, e.to_string()))?;
    let text = fs::read_to_string(archive)
        .map_err(|e| Failure::new(EXIT_MISSING, format!("{}: {e}", archive.display())))?;
    let trajs = schema::parse_jsonl(&text, schema::parse_trajectory_line).map_err(|e| field_errors(archive, &e))?;
    let mut out = String::new();
    let mut failures = Vec::new();
    for t in &trajs {
        match replay_trajectory(&spec, t) {
            Ok(()) => out.push_str(&format!("{}\tok\n", t.id)),
            Err(e) => {
                out.push_str(&format!("{}\tdiverged\n", t.id));
                failures.push(e.to_string());
            }
        }
    }
    if failures.is_empty() {
        Ok(out)
    } else {
        print!("{out}");
        Err(Failure::new(EXIT_DIVERGED, failures.join("\n")))
    }
}

pub fn cmd_report(run_dir: &Path, format: Format) -> Result<String, Failure> {
    let report = manifest::read_metrics(run_dir)?;
    Ok(render(&report, format))
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        2 => tracing::Level::DEBUG,
        _ => tracing::Level::TRACE,
    };
    let _ = tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).try_init();
}

pub fn dispatch(cli: Cli) -> Result<String, Failure> {
    match cli.command {
        Command::Run { config, out, seed, variant, format } => cmd_run(&config, &out, seed, variant, format),
        Command::Evaluate { config, seed, variant, format } => cmd_evaluate(&config, seed, variant, format),
        Command::ExportDataset { run, out, iteration, split } => cmd_export_dataset(&run, &out, iteration, split),
        Command::Replay { archive, scene } => cmd_replay(&archive, scene.as_deref()),
        Command::Report { run, format } => cmd_report(&run, format),
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match dispatch(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::from(EXIT_OK)
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts_and_disjointness() {
        let (t, h) = split_indices(100, 0.9, 7);
        assert_eq!((t.len(), h.len()), (90, 10));
        assert!(t.iter().all(|i| !h.contains(i)));
        assert_eq!(split_indices(100, 0.9, 7), (t, h));
    }

    #[test]
    fn parses_every_subcommand() {
        for args in [
            vec!["selu", "run", "--config", "c.toml", "--seed", "7", "--variant", "wo_hr"],
            vec!["selu", "evaluate", "--config", "c.toml"],
            vec!["selu", "export-dataset", "--run", "r", "--out", "o", "--split", "0.9"],
            vec!["selu", "replay", "--archive", "a.jsonl"],
            vec!["selu", "report", "--run", "r", "--format", "json"],
        ] {
            Cli::try_parse_from(&args).unwrap_or_else(|e| panic!("{args:?}: {e}"));
        }
        assert!(Cli::try_parse_from(["selu", "run"]).is_err(), "run requires a config");
        assert!(Cli::try_parse_from(["selu", "replay"]).is_err(), "replay requires an archive");
    }
}
