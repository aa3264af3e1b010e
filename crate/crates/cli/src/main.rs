//! `ripple`: change-aware differential GUI testing from the command line.
//!
//! The main entry point is `ripple run`, which takes a pull request id and
//! drives the whole pipeline: ingest the change, generate test scenarios,
//! execute them against the changed and baseline builds, diff the paired
//! screenshots, classify the differences, filter the candidate reports, and
//! render a summary. Each stage also exists as its own subcommand for
//! resuming or re-running part of a pipeline, and `skb` subcommands maintain
//! the scenario knowledge base the generator retrieves from.
//!
//! Exit codes: 0 success, 2 configuration error, 3 stage failure, 4 model
//! provider failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand};
use ripple_core::clock::{fixed_clock, system_clock, SharedClock};
use ripple_core::config::{load_config, Config};
use ripple_core::llm::LlmGateway;
use ripple_core::orchestrator::{run_id_for, Pipeline, PipelineStage, RunManifest, StageStatus};
use ripple_core::prompts::PromptSet;
use ripple_core::report::{RunSummary, SUMMARY_JSON, SUMMARY_MD};
use ripple_core::skb::{self, HistoricalReport, SkbError, SkbIndex};
use ripple_core::testkit::{build_fixture, FixtureOptions, FIXTURE_PR_ID};

/// Differential GUI testing: what did this pull request change on screen,
/// and which of those changes are bugs?
#[derive(Parser)]
#[command(name = "ripple", version)]
struct Cli {
    #[command(flatten)]
    globals: Globals,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Globals {
    /// Pipeline configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Parent directory for run artifacts, overriding the configured one.
    #[arg(long, global = true, value_name = "DIR")]
    run_dir: Option<PathBuf>,

    /// Re-run stages even when a previous run already completed them.
    #[arg(long, global = true)]
    force: bool,

    /// Worker threads for parallel stages, overriding the configured count.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<u32>,

    /// Freeze all timestamps for byte-reproducible runs.
    #[arg(long, global = true)]
    fixed_clock: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run every pipeline stage end to end for one pull request.
    Run {
        /// Pull request id on the configured tracker.
        pr_id: String,
    },
    /// Fetch the pull request, linked issues, and commit context.
    Ingest { pr_id: String },
    /// Generate enriched test scenarios for an ingested pull request.
    Generate { pr_id: String },
    /// Execute the scenarios against the changed and baseline builds.
    Execute { pr_id: String },
    /// Compute visual difference regions for captured screenshot pairs.
    Diff { pr_id: String },
    /// Classify difference regions and draft candidate bug reports.
    Detect { pr_id: String },
    /// Filter candidate reports for duplicates and noise.
    Filter { pr_id: String },
    /// Render the final run summary.
    Report { pr_id: String },
    /// Maintain the scenario knowledge base.
    #[command(subcommand)]
    Skb(SkbCommand),
    /// Materialize a self-contained demo project: a git repository with a
    /// small GUI app, tracker records, and scripted model replies.
    Fixture {
        /// Directory to create the demo project in.
        #[arg(long, value_name = "DIR")]
        dir: PathBuf,
        /// Plant a real regression in the changed build for the pipeline
        /// to catch; without this the change is cosmetic only.
        #[arg(long)]
        seeded_regression: bool,
    },
}

#[derive(Subcommand)]
enum SkbCommand {
    /// Triage historical reports and build the retrieval index.
    Build {
        /// JSON array of historical reports to triage and index.
        #[arg(long, value_name = "FILE")]
        reports: PathBuf,
    },
    /// Search the index, honoring a knowledge cutoff.
    Query {
        /// Free-text query.
        text: String,
        /// Exclude chunks created at or after this RFC 3339 instant;
        /// defaults to now.
        #[arg(long, value_name = "WHEN")]
        cutoff: Option<String>,
        /// Chunks to return; defaults to the configured top_k.
        #[arg(long, value_name = "N")]
        top_k: Option<usize>,
    },
}

/// A terminal failure: exit code plus the message printed to stderr.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<ripple_core::orchestrator::PipelineError> for Failure {
    fn from(e: ripple_core::orchestrator::PipelineError) -> Self {
        Failure::new(e.exit_code() as u8, e.to_string())
    }
}

impl From<ripple_core::config::ConfigError> for Failure {
    fn from(e: ripple_core::config::ConfigError) -> Self {
        Failure::new(2, e.to_string())
    }
}

impl From<SkbError> for Failure {
    fn from(e: SkbError) -> Self {
        let code = if matches!(e, SkbError::Llm(_)) { 4 } else { 3 };
        Failure::new(code, e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let globals = cli.globals;
    let clock: SharedClock = if globals.fixed_clock {
        fixed_clock()
    } else {
        system_clock()
    };
    let (stage, pr_id) = match cli.command {
        Command::Fixture {
            dir,
            seeded_regression,
        } => return fixture(&dir, seeded_regression),
        Command::Skb(cmd) => {
            let cfg = load(&globals)?;
            return skb_command(&cfg, cmd, clock);
        }
        Command::Run { pr_id } => (None, pr_id),
        Command::Ingest { pr_id } => (Some(PipelineStage::Ingest), pr_id),
        Command::Generate { pr_id } => (Some(PipelineStage::Generate), pr_id),
        Command::Execute { pr_id } => (Some(PipelineStage::Execute), pr_id),
        Command::Diff { pr_id } => (Some(PipelineStage::Diff), pr_id),
        Command::Detect { pr_id } => (Some(PipelineStage::Detect), pr_id),
        Command::Filter { pr_id } => (Some(PipelineStage::Filter), pr_id),
        Command::Report { pr_id } => (Some(PipelineStage::Report), pr_id),
    };

    let cfg = load(&globals)?;
    let run_dir = cfg.paths.runs_dir.join(run_id_for(&pr_id));
    let mut pipeline = Pipeline::new(cfg, clock);
    let manifest = match stage {
        None => pipeline.run(&pr_id, globals.force)?,
        Some(stage) => pipeline.run_stage(&pr_id, stage, globals.force)?,
    };
    print_progress(&manifest, &run_dir);
    Ok(())
}

/// Loads the configuration named by `--config` and applies command line
/// overrides.
fn load(globals: &Globals) -> Result<Config, Failure> {
    let path = globals
        .config
        .as_deref()
        .ok_or_else(|| Failure::new(2, "--config is required for this command"))?;
    let mut cfg = load_config(path)?;
    if let Some(dir) = &globals.run_dir {
        cfg.paths.runs_dir = dir.clone();
    }
    if let Some(workers) = globals.workers {
        cfg.executor.workers = workers;
    }
    Ok(cfg)
}

fn print_progress(manifest: &RunManifest, run_dir: &Path) {
    for stage in PipelineStage::ALL {
        let status = match manifest.status(stage) {
            StageStatus::Pending => "pending",
            StageStatus::Done => "done",
            StageStatus::Failed => "failed",
        };
        println!("{stage}: {status}");
    }
    if manifest.status(PipelineStage::Report) != StageStatus::Done {
        return;
    }
    let report_dir = run_dir.join(PipelineStage::Report.dir_name());
    if let Ok(bytes) = std::fs::read(report_dir.join(SUMMARY_JSON)) {
        if let Ok(summary) = serde_json::from_slice::<RunSummary>(&bytes) {
            println!(
                "kept {} of {} candidate reports; total cost {} micro-USD",
                summary.kept.len(),
                summary.candidates_total,
                summary.usage.total.cost_micros
            );
        }
    }
    println!("summary: {}", report_dir.join(SUMMARY_MD).display());
}

fn skb_command(cfg: &Config, cmd: SkbCommand, clock: SharedClock) -> Result<(), Failure> {
    let llm = LlmGateway::new(cfg, clock.clone());
    match cmd {
        SkbCommand::Build { reports } => {
            let text = std::fs::read_to_string(&reports).map_err(|e| {
                Failure::new(3, format!("reading {}: {e}", reports.display()))
            })?;
            let raw: Vec<HistoricalReport> = serde_json::from_str(&text).map_err(|e| {
                Failure::new(3, format!("parsing {}: {e}", reports.display()))
            })?;
            let total = raw.len();
            let prompts = PromptSet::new(cfg.paths.prompt_dir.clone());
            let triaged = skb::filter_reports(raw, &llm, &prompts, &cfg.skb);
            let kept = triaged.iter().filter(|r| r.kept).count();
            let dim = cfg.models.embedding_dim as usize;
            let (index, warnings) = SkbIndex::build(&triaged, &llm, &cfg.skb, dim)?;
            for warning in &warnings {
                eprintln!("warning: {warning}");
            }
            let out = &cfg.paths.skb_index;
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent).map_err(|e| {
                    Failure::new(3, format!("creating {}: {e}", parent.display()))
                })?;
            }
            index.save(out)?;
            println!(
                "kept {kept} of {total} reports, indexed {} chunks into {}",
                index.len(),
                out.display()
            );
            Ok(())
        }
        SkbCommand::Query {
            text,
            cutoff,
            top_k,
        } => {
            let index = SkbIndex::load(&cfg.paths.skb_index)?;
            let cutoff = match cutoff {
                Some(s) => DateTime::parse_from_rfc3339(&s)
                    .map_err(|e| Failure::new(2, format!("bad --cutoff {s:?}: {e}")))?
                    .with_timezone(&Utc),
                None => clock.now(),
            };
            let k = top_k.unwrap_or(cfg.skb.top_k as usize);
            let results = index.query(&llm, &text, cutoff, k)?;
            if results.is_empty() {
                println!("no chunks matched before the cutoff");
            }
            for (rank, hit) in results.iter().enumerate() {
                println!(
                    "{:>2}. {:.4} {} ({})",
                    rank + 1,
                    hit.fused_score,
                    hit.chunk.chunk_id,
                    hit.chunk.created_at.format("%Y-%m-%d")
                );
                println!("    {}", excerpt(&hit.chunk.text));
            }
            Ok(())
        }
    }
}

/// First line of `text`, shortened to a width that fits a terminal.
fn excerpt(text: &str) -> String {
    const MAX: usize = 96;
    let line = text.lines().next().unwrap_or_default();
    let mut out: String = line.chars().take(MAX).collect();
    if line.chars().count() > MAX {
        out.push_str("...");
    }
    out
}

fn fixture(dir: &Path, seeded_regression: bool) -> Result<(), Failure> {
    let opts = FixtureOptions { seeded_regression };
    let fx = build_fixture(dir, &opts)
        .map_err(|e| Failure::new(3, format!("building fixture: {e}")))?;
    println!("fixture ready in {}", fx.root.display());
    println!(
        "run it with: ripple --config {} run {FIXTURE_PR_ID}",
        fx.config_path().display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_line_parses() {
        let cli = Cli::try_parse_from([
            "ripple",
            "--config",
            "cfg.toml",
            "--workers",
            "3",
            "--force",
            "run",
            "41",
        ])
        .unwrap();
        assert_eq!(cli.globals.config.as_deref(), Some(Path::new("cfg.toml")));
        assert_eq!(cli.globals.workers, Some(3));
        assert!(cli.globals.force);
        assert!(matches!(cli.command, Command::Run { pr_id } if pr_id == "41"));

        let cli = Cli::try_parse_from(["ripple", "skb", "query", "save note", "--top-k", "2"])
            .unwrap();
        match cli.command {
            Command::Skb(SkbCommand::Query { text, top_k, .. }) => {
                assert_eq!(text, "save note");
                assert_eq!(top_k, Some(2));
            }
            _ => panic!("expected skb query"),
        }
    }

    #[test]
    fn global_flags_may_follow_the_subcommand() {
        let cli =
            Cli::try_parse_from(["ripple", "diff", "7", "--config", "c.toml", "--force"]).unwrap();
        assert!(cli.globals.force);
        assert!(matches!(cli.command, Command::Diff { pr_id } if pr_id == "7"));
    }

    #[test]
    fn missing_config_is_a_configuration_error() {
        let cli = Cli::try_parse_from(["ripple", "run", "7"]).unwrap();
        let err = load(&cli.globals).unwrap_err();
        assert_eq!(err.code, 2);
    }

    #[test]
    fn excerpt_clips_to_the_first_line() {
        assert_eq!(excerpt("alpha\nbeta"), "alpha");
        let long = "x".repeat(200);
        assert!(excerpt(&long).ends_with("..."));
    }
}
