mod config;
mod runner;

use std::path::PathBuf;

use clap::Parser;
use serde_json::json;

use autodml::error::{Error, ErrorCategory};
use config::RunConfig;

/// Debiased estimation of regression functionals, driven by one JSON
/// config. Commands: estimate, simulate, coverage, diagnose, sweep.
#[derive(Parser)]
#[command(name = "autodml", version)]
struct Cli {
    /// Run configuration (JSON document)
    #[arg(long)]
    config: PathBuf,
    /// Directory for output artifacts
    #[arg(long, default_value = ".")]
    output: PathBuf,
    /// Overrides the seed in the config
    #[arg(long)]
    seed: Option<u64>,
}

fn main() {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Err(e) => {
            let (code, category) = match e.category() {
                ErrorCategory::Config => (2, "config"),
                ErrorCategory::Data => (3, "data"),
                ErrorCategory::Numerical => (4, "numerical"),
            };
            let messages = match &e {
                Error::Config { violations } => violations.clone(),
                other => vec![other.to_string()],
            };
            let doc = json!({
                "error": { "category": category, "exit_code": code, "messages": messages }
            });
            println!("{doc}");
            std::process::exit(code);
        }
    }
}

fn execute(cli: &Cli) -> autodml::Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(&cli.config).map_err(|e| {
        Error::data(format!("cannot read config '{}': {e}", cli.config.display()))
    })?;
    let mut cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Error::config_one(format!("config parse: {e}")))?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    runner::run(&cfg, &cli.output)
}
