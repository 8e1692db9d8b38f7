mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::ConfigProblem;

/// Differential WAF/framework harness and strict request normalizer.
#[derive(Debug, Parser)]
#[command(name = "parsegap", version)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Normalizer policy file (TOML).
    #[arg(long, global = true)]
    policy: Option<PathBuf>,
    /// WAF rule file replacing the built-in signatures.
    #[arg(long, global = true)]
    rules: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize `.http` files or directories of them.
    Normalize(NormalizeArgs),
    /// Generate a seeded mutant corpus with its manifest.
    Generate(GenerateArgs),
    /// Run a corpus through every WAF and framework model pair.
    Diff(DiffArgs),
    /// Reduce every bypass to its minimal mutation sets and deduplicate.
    Minimize(MinimizeArgs),
    /// Summarize outcome, bypass and normalizer records.
    Report(ReportArgs),
    /// Run the normalizing reverse proxy.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct NormalizeArgs {
    /// Files or directories of `.http` requests.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Directory for normalized requests and `normalize.jsonl`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated class names; all classes by default.
    #[arg(long, value_delimiter = ',')]
    classes: Vec<String>,
    #[arg(long, default_value_t = 5)]
    per_class: usize,
    #[arg(long, default_value_t = 1)]
    stack_depth: usize,
    #[arg(long, default_value_t = 0)]
    extra_fields: usize,
}

#[derive(Debug, Args)]
struct ModelSelection {
    /// WAF model names; all presets by default.
    #[arg(long = "waf", value_delimiter = ',')]
    wafs: Vec<String>,
    /// Framework model names; all presets by default.
    #[arg(long = "framework", value_delimiter = ',')]
    frameworks: Vec<String>,
}

#[derive(Debug, Args)]
struct DiffArgs {
    corpus: PathBuf,
    #[command(flatten)]
    models: ModelSelection,
    /// Outcome records (JSONL); stdout by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MinimizeArgs {
    corpus: PathBuf,
    #[command(flatten)]
    models: ModelSelection,
    /// Unique bypass records (JSONL); stdout by default.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep duplicates of the same class, site kind and model pair.
    #[arg(long)]
    all: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Outcome records written by `diff`.
    #[arg(long)]
    outcomes: Option<PathBuf>,
    /// Bypass records written by `minimize`.
    #[arg(long)]
    bypasses: Option<PathBuf>,
    /// Records written by `normalize`.
    #[arg(long)]
    normalized: Option<PathBuf>,
    /// Summary as one JSON line; the table goes to stdout either way.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    listen: String,
    #[arg(long)]
    upstream: String,
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    max_body_bytes: Option<usize>,
    #[arg(long, default_value_t = parsegap_proxy::DEFAULT_REJECT_STATUS)]
    reject_status: u16,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<ConfigProblem>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
