use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use notegen::config::PipelineConfig;
use notegen::index::QueryMode;
use notegen::pipeline::{self, RetrieveTarget};
use notegen::prompt::Strategy;

#[derive(Parser)]
#[command(name = "notegen", version, about = "Generate and evaluate clinical notes from ICD codes")]
struct Cli {
    /// Pipeline config file.
    #[arg(long, global = true, default_value = "notegen.toml")]
    config: PathBuf,
    /// Log at debug level.
    #[arg(long, short, global = true)]
    verbose: bool,
    /// Validate inputs and report what would happen without writing or calling providers.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read notes, annotations and demographics and cache the split corpus.
    Ingest,
    /// Embed the retrieval pool and write the index.
    Index,
    /// Build the SNOMED CT knowledge graph.
    BuildKg,
    /// Print the most related indexed cases for a query.
    Retrieve {
        /// Query text.
        #[arg(long, conflicts_with = "case")]
        query: Option<String>,
        /// Build the query from this cached case.
        #[arg(long)]
        case: Option<String>,
        #[arg(long, short, default_value_t = 10)]
        k: usize,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<QueryMode>,
    },
    /// Run the generation calls for every test case and strategy.
    Generate {
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long)]
        n_calls: Option<u32>,
        /// Restrict to these strategies (repeatable).
        #[arg(long = "strategy")]
        strategies: Vec<Strategy>,
    },
    /// Compute distances and statistics for a run and write the report.
    Evaluate {
        #[arg(long)]
        run_id: Option<String>,
    },
}

fn parse_mode(s: &str) -> Result<QueryMode, String> {
    match s {
        "icd_codes" => Ok(QueryMode::IcdCodes),
        "text_references" => Ok(QueryMode::TextReferences),
        _ => Err(format!("expected icd_codes or text_references, got {s:?}")),
    }
}

fn run(cli: Cli) -> notegen::Result<bool> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    let dry = cli.dry_run;
    match cli.command {
        Command::Ingest => {
            let s = pipeline::cmd_ingest(&cfg, dry)?;
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            println!("{s}");
        }
        Command::Index => println!("{}", pipeline::cmd_index(&cfg, dry)?),
        Command::BuildKg => println!("{}", pipeline::cmd_build_kg(&cfg, dry)?),
        Command::Retrieve { query, case, k, mode } => {
            let target = match (query, case) {
                (Some(q), _) => RetrieveTarget::Text(q),
                (None, Some(c)) => RetrieveTarget::Case(c),
                (None, None) => {
                    return Err(notegen::Error::Config("retrieve needs --query or --case".into()))
                }
            };
            let hits = pipeline::cmd_retrieve(&cfg, &target, k, mode.unwrap_or(cfg.run.query_mode))?;
            print!("{}", pipeline::format_hits(&hits));
        }
        Command::Generate { run_id, n_calls, strategies } => {
            if let Some(id) = run_id {
                cfg.run.run_id = id;
            }
            if let Some(n) = n_calls {
                cfg.run.n_calls = n;
            }
            if !strategies.is_empty() {
                cfg.run.strategies = strategies;
            }
            cfg.validate()?;
            let s = pipeline::cmd_generate(&cfg, dry)?;
            println!("{s}");
            return Ok(s.failed == 0);
        }
        Command::Evaluate { run_id } => {
            if let Some(id) = run_id {
                cfg.run.run_id = id;
            }
            let s = pipeline::cmd_evaluate(&cfg, dry)?;
            println!("{s}");
            return Ok(s.failed_records == 0);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
