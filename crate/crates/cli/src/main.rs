//! `restdep`: build the dependency graph, generate a plan, run it, report.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use restdep_core::llm::BackendKind;

use crate::commands::{Outcome, UsageError};
use crate::config::Settings;

#[derive(Parser)]
#[command(name = "restdep", version, about = "Dependency-aware test generation for REST APIs")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum BackendArg {
    Mock,
    Remote,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Mock => BackendKind::Mock,
            BackendArg::Remote => BackendKind::Remote,
        }
    }
}

#[derive(Args, Default)]
pub struct GlobalArgs {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// OpenAPI 3 document (YAML or JSON).
    #[arg(long, global = true)]
    pub spec: Option<PathBuf>,
    /// Directory for every artifact [default: restdep-out].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, global = true)]
    pub backend: Option<BackendArg>,
    /// Chat-completions URL for the remote backend.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, global = true)]
    pub api_key_env: Option<String>,
    /// Prompt/reply cache [default: <out>/llm-cache].
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Serve model replies from the cache only.
    #[arg(long, global = true)]
    pub offline: bool,
    /// Bind array responses through a seeded random element instead of the first.
    #[arg(long, global = true)]
    pub random_element: bool,
    #[arg(long, global = true)]
    pub base_url: Option<String>,
    #[arg(long, global = true)]
    pub timeout_ms: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// `name: value`, repeatable.
    #[arg(long, global = true)]
    pub auth_header: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write odg.json, os_deps.json and ss_deps.json.
    BuildOdg,
    /// Write sequences.json, data/, constraints/ and plan.json.
    Generate,
    /// Execute plan.json and write results.jsonl.
    Run,
    /// Write report.json and report.txt; exit 3 on mismatches or 5xx.
    Report,
    /// Serve the bundled flight booking service.
    MockServe {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Add a 500 route, an undocumented 304 route and a no-op DELETE.
        #[arg(long)]
        faults: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = Settings::resolve(&cli.global).and_then(|s| match &cli.command {
        Command::BuildOdg => commands::build_odg_cmd(&s),
        Command::Generate => commands::generate_cmd(&s),
        Command::Run => commands::run_cmd(&s),
        Command::Report => commands::report_cmd(&s),
        Command::MockServe { host, port, faults } => commands::mock_serve_cmd(&format!("{host}:{port}"), *faults),
    });
    match result {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::FailuresFound) => ExitCode::from(3),
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
