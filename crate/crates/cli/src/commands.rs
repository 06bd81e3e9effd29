//! Command-line surface and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dbb_core::Method;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::write_report;
use crate::run::{AnalyseSelection, Run};
use crate::validate::{validate_reconstructors, write_validation, ValidationRequest};

#[derive(Debug, Parser)]
#[command(name = "dbb", version, about = "Summarise debates with LLMs and audit the summaries for speaker bias")]
pub struct Cli {
    /// Directory holding run directories and the shared response cache.
    #[arg(long, global = true, env = "DBB_RUNS_DIR", default_value = "runs")]
    pub runs_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every stage of a configured run, resuming where it stopped.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Delete any existing run directory with this id first.
        #[arg(long)]
        fresh: bool,
    },
    /// Write the report tables of a scored run.
    Report { run_id: String },
    /// Score reconstructions and write scores.csv.
    Score {
        run_id: String,
        /// Recompute scores (and the analysis) even when complete.
        #[arg(long)]
        force: bool,
    },
    /// Fit the bias models of a scored run.
    Analyze {
        run_id: String,
        #[arg(long)]
        order_bias: bool,
        #[arg(long)]
        party_bias: bool,
    },
    /// Compare reconstructor backends on a sample of interventions.
    ValidateReconstructor(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub run_id: String,
    /// Comma-separated backend names from the run config.
    #[arg(long, value_delimiter = ',', required = true)]
    pub backends: Vec<String>,
    /// Number of interventions to sample (all when omitted).
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Debate summaries of this method are reconstructed.
    #[arg(long, default_value = "default", value_parser = parse_method)]
    pub method: Method,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: dbb_core::PipelineError| e.to_string())
}

fn print_counters(run: &Run) {
    for line in run.counter_lines() {
        println!("{line}");
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let runs_dir = cli.runs_dir;
    match cli.command {
        Command::Run { config, fresh } => {
            let config = RunConfig::load(&config)?;
            let mut run = Run::create(config, &runs_dir, fresh)?;
            let outcome = run.execute();
            print_counters(&run);
            outcome?;
            let written = write_report(&mut run)?;
            println!(
                "run {} complete: {} score rows, report files: {}",
                run.config.run_id,
                run.manifest.record("score").count,
                written.join(", ")
            );
        }
        Command::Report { run_id } => {
            let mut run = Run::open(&runs_dir, &run_id)?;
            let written = write_report(&mut run)?;
            println!("wrote {}", written.join(", "));
        }
        Command::Score { run_id, force } => {
            let mut run = Run::open(&runs_dir, &run_id)?;
            run.score(force)?;
            println!("{} score rows", run.manifest.record("score").count);
        }
        Command::Analyze {
            run_id,
            order_bias,
            party_bias,
        } => {
            let mut run = Run::open(&runs_dir, &run_id)?;
            let selection = if order_bias || party_bias {
                AnalyseSelection {
                    order_bias,
                    party_bias,
                }
            } else {
                AnalyseSelection::all()
            };
            if selection.order_bias && !selection.party_bias && run.methods().len() < Method::ALL.len() {
                return Err(CliError::Refused(
                    "the order-bias model needs all four methods".into(),
                ));
            }
            run.analyse(true, selection)?;
            for note in &run.manifest.record("analyse").notes {
                println!("note: {note}");
            }
            println!("{} fit file(s)", run.manifest.record("analyse").count);
        }
        Command::ValidateReconstructor(args) => {
            let run = Run::open(&runs_dir, &args.run_id)?;
            let request = ValidationRequest {
                backends: args.backends,
                method: args.method,
                sample: args.sample,
                seed: args.seed,
            };
            let report = validate_reconstructors(&run, &request)?;
            write_validation(&run, &report)?;
            print_counters(&run);
            println!("{} common interventions", report.interventions.len());
            for (name, row) in report.backends.iter().zip(&report.pearson) {
                let cells: Vec<String> = row
                    .iter()
                    .map(|r| r.map_or("NA".to_string(), |r| format!("{r:.4}")))
                    .collect();
                println!("{name}: {}", cells.join(" "));
            }
            for (name, p) in report.backends.iter().zip(&report.mean_precision) {
                println!("{name}: mean precision {p:.4}");
            }
        }
    }
    Ok(())
}
