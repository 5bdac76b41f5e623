use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use curate_core::pipeline::{run_pipeline, run_report, run_single, PipelineConfig, PipelineError, Stage};

/// Deterministic corpus curation over JSON-lines manifests.
#[derive(Parser)]
#[command(name = "curate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage listed in a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override a configuration key, e.g. `--set dedup.seed=7`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Language id, rule filters, quality signals and buckets.
    Filter(StageArgs),
    /// URL blocklist, exact and MinHash-LSH deduplication.
    Dedup(StageArgs),
    /// Dependency-ordered repository documents.
    RepoSort(StageArgs),
    /// Benchmark contamination removal.
    Decontam(StageArgs),
    /// Fill-in-the-middle rewriting.
    Fim(StageArgs),
    /// Token-budget mixing and epoch orders.
    Mix(StageArgs),
    /// Print the retention table of a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Args)]
struct StageArgs {
    /// Manifest file, or a directory of `*.records` shards.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig, PipelineError> {
    match path {
        Some(p) => PipelineConfig::load(p, overrides),
        None => PipelineConfig::from_toml_str("", overrides),
    }
}

fn single(stage: Stage, a: &StageArgs) -> Result<(), PipelineError> {
    let cfg = load_config(a.config.as_deref(), &a.overrides)?;
    let out = run_single(stage, &a.input, &a.output, &cfg)?;
    let s = &out.stats;
    println!(
        "{}: records {} -> {}, tokens {} -> {}",
        stage.as_str(),
        s.records_in,
        s.records_out,
        s.tokens_in,
        s.tokens_out
    );
    for (flag, n) in &out.rejections {
        println!("rejected {flag} {n}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = PipelineConfig::load(&config, &overrides)?;
            let summary = run_pipeline(&cfg)?;
            print!("{}", summary.report);
            Ok(())
        }
        Command::Filter(a) => single(Stage::Filter, &a),
        Command::Dedup(a) => single(Stage::Dedup, &a),
        Command::RepoSort(a) => single(Stage::RepoSort, &a),
        Command::Decontam(a) => single(Stage::Decontam, &a),
        Command::Fim(a) => single(Stage::Fim, &a),
        Command::Mix(a) => single(Stage::Mix, &a),
        Command::Report { run } => {
            print!("{}", run_report(&run)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("curate: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
