use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gramflow::cli_io::{
    ablate, evaluate, optimize, parse_modes, parse_seeds, validate_grammar, CliError, Metric, Overrides,
    RunConfigFile,
};
use gramflow::engine::{Mode, RunOptions};

#[derive(Parser)]
#[command(name = "gramflow", version, about = "Grammar-guided search for classification workflows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for workflows and write report.json, ensemble.json and generations.csv.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<Mode>,
        /// Wall-clock budget in seconds.
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Score a saved ensemble on a labelled CSV file.
    Evaluate {
        #[arg(long)]
        ensemble: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Label column; the last column when omitted.
        #[arg(long)]
        label: Option<String>,
        #[arg(long, default_value = "balanced_accuracy")]
        metric: Metric,
    },
    /// Check a grammar file and list every issue found.
    ValidateGrammar {
        #[arg(long)]
        grammar: PathBuf,
    },
    /// Run several modes under several seeds and compare them.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated modes.
        #[arg(long, default_value = "full,basic,op_only,ens_only,top10,top10w")]
        modes: String,
        /// A range such as 1..5, or a comma-separated list.
        #[arg(long, default_value = "1..5")]
        seeds: String,
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

fn execute(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Optimize { config, seed, mode, budget, threads, output_dir } => {
            let overrides = Overrides { seed, mode, budget, threads, output_dir };
            let cfg = RunConfigFile::load(&config)?.resolve(&overrides)?;
            let summary = optimize(&cfg, RunOptions::default())?;
            print_json(&summary);
        }
        Command::Evaluate { ensemble, data, label, metric } => {
            let value = evaluate(&ensemble, &data, label.as_deref(), metric)?;
            print_json(&serde_json::json!({ "metric": metric.as_str(), "value": value }));
        }
        Command::ValidateGrammar { grammar } => {
            let issues: Vec<String> = validate_grammar(&grammar)?.iter().map(ToString::to_string).collect();
            let ok = issues.is_empty();
            print_json(&serde_json::json!({ "grammar": grammar, "ok": ok, "issues": issues }));
            if !ok {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Ablate { config, modes, seeds, budget, threads, output_dir } => {
            let modes = parse_modes(&modes).map_err(CliError::InvalidArgument)?;
            let seeds = parse_seeds(&seeds).map_err(CliError::InvalidArgument)?;
            let overrides = Overrides { budget, threads, output_dir, ..Default::default() };
            let cfg = RunConfigFile::load(&config)?.resolve(&overrides)?;
            let report = ablate(&cfg, &modes, &seeds)?;
            print_json(&serde_json::json!({ "summary": report.summary, "checks": report.checks }));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let message = e.render().to_string();
            eprintln!("{}", CliError::InvalidArgument(message.trim_end().to_string()).to_json());
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
