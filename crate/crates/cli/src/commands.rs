use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use parsegap::harness::{framework_preset, run_matrix, waf_preset, FRAMEWORK_PRESET_NAMES, WAF_PRESET_NAMES};
use parsegap::minimize::{dedupe, find_bypasses, BypassRecord};
use parsegap::mutation::{generate_corpus, read_corpus, write_corpus, CorpusOptions, MutationClass};
use parsegap::normalizer::{normalize, NormalizationOutcome, NormalizerPolicy};
use parsegap::report::{to_jsonl, NormalizerTally, OutcomeRecord, ReportSummary};
use parsegap::rules::{parse_rules, Rule};
use parsegap::{parse_raw_request, FrameworkModel, WafModel};
use parsegap_proxy::{Proxy, ProxyConfig};

use crate::{Cli, Command, DiffArgs, GenerateArgs, MinimizeArgs, ModelSelection, NormalizeArgs, ReportArgs, ServeArgs};

/// A flag, file or setting that makes the whole invocation unusable.
#[derive(Debug)]
pub struct ConfigProblem(String);

impl fmt::Display for ConfigProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigProblem {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigProblem(msg.into()).into()
}

/// One line of `normalize.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizeRecord {
    pub file: String,
    /// `normalized`, `rejected`, `passed-through` or `error`.
    pub outcome: String,
    pub reason: Option<String>,
    pub changes: Vec<String>,
}

struct Settings {
    seed: u64,
    policy: NormalizerPolicy,
    rules: Option<Vec<Rule>>,
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(config_error("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| config_error(format!("--jobs: {e}")))?;
    }
    let policy = match &cli.policy {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            NormalizerPolicy::from_toml(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?
        }
        None => NormalizerPolicy::default(),
    };
    let rules = match &cli.rules {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            Some(parse_rules(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?)
        }
        None => None,
    };
    let ctx = Settings {
        seed: cli.seed,
        policy,
        rules,
    };
    match cli.command {
        Command::Normalize(args) => cmd_normalize(&ctx, args),
        Command::Generate(args) => cmd_generate(&ctx, args),
        Command::Diff(args) => cmd_diff(&ctx, args),
        Command::Minimize(args) => cmd_minimize(&ctx, args),
        Command::Report(args) => cmd_report(args),
        Command::Serve(args) => cmd_serve(&ctx, args),
    }
}

fn http_files(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<io::Result<_>>()?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|x| x == "http"));
    files.sort();
    Ok(files)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => io::stdout().write_all(text.as_bytes()).context("writing stdout"),
    }
}

fn print_tally(tally: &NormalizerTally) {
    println!("{:<16} {:>8}", "normalized", tally.normalized);
    println!("{:<16} {:>8}", "rejected", tally.rejected);
    println!("{:<16} {:>8}", "passed through", tally.passed_through);
}

fn tally_of(records: &[NormalizeRecord]) -> NormalizerTally {
    let count = |o: &str| records.iter().filter(|r| r.outcome == o).count();
    NormalizerTally {
        normalized: count("normalized"),
        rejected: count("rejected"),
        passed_through: count("passed-through"),
    }
}

fn cmd_normalize(ctx: &Settings, args: NormalizeArgs) -> Result<ExitCode> {
    let mut files = Vec::new();
    let mut manifests = Vec::new();
    let mut failures = 0;
    let mut records = Vec::new();
    for input in &args.inputs {
        if input.is_dir() {
            files.extend(http_files(input).with_context(|| format!("reading {}", input.display()))?);
            let manifest = input.join("manifest.jsonl");
            if manifest.is_file() {
                manifests.push(manifest);
            }
        } else {
            files.push(input.clone());
        }
    }
    if let Some(out) = &args.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    }
    let mut forwarded = BTreeSet::new();
    for path in &files {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let parsed = fs::read(path)
            .map_err(|e| e.to_string())
            .and_then(|bytes| parse_raw_request(&bytes).map(|r| (bytes, r)).map_err(|e| e.to_string()));
        let (bytes, req) = match parsed {
            Ok(v) => v,
            Err(e) => {
                failures += 1;
                eprintln!("{}: {e}", path.display());
                records.push(NormalizeRecord {
                    file: name,
                    outcome: "error".into(),
                    reason: Some(e),
                    changes: Vec::new(),
                });
                continue;
            }
        };
        let outcome = normalize(&req, &ctx.policy);
        let (emit, reason, changes) = match &outcome {
            NormalizationOutcome::Normalized { request, changes } => (
                Some(request.serialize(false)),
                None,
                changes.iter().map(|c| c.to_string()).collect(),
            ),
            NormalizationOutcome::PassedThrough(why) => (Some(bytes), Some(why.clone()), Vec::new()),
            NormalizationOutcome::Rejected(r) => (None, Some(r.to_string()), Vec::new()),
        };
        if let (Some(out), Some(emit)) = (&args.out, emit) {
            let target = out.join(&name);
            fs::write(&target, emit).with_context(|| format!("writing {}", target.display()))?;
            forwarded.insert(name.clone());
        }
        records.push(NormalizeRecord {
            file: name,
            outcome: outcome.label().into(),
            reason,
            changes,
        });
    }
    if let Some(out) = &args.out {
        let path = out.join("normalize.jsonl");
        fs::write(&path, to_jsonl(&records)).with_context(|| format!("writing {}", path.display()))?;
        let mut kept = String::new();
        for manifest in &manifests {
            let text = fs::read_to_string(manifest).with_context(|| format!("reading {}", manifest.display()))?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let v: serde_json::Value =
                    serde_json::from_str(line).with_context(|| format!("parsing {}", manifest.display()))?;
                if v["file"].as_str().is_some_and(|f| forwarded.contains(f)) {
                    kept.push_str(line);
                    kept.push('\n');
                }
            }
        }
        if !manifests.is_empty() {
            let path = out.join("manifest.jsonl");
            fs::write(&path, kept).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    print_tally(&tally_of(&records));
    if failures > 0 {
        eprintln!("{failures} input(s) could not be read as HTTP requests");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_generate(ctx: &Settings, args: GenerateArgs) -> Result<ExitCode> {
    let classes = if args.classes.is_empty() {
        MutationClass::ALL.to_vec()
    } else {
        args.classes
            .iter()
            .map(|c| c.parse::<MutationClass>().map_err(|e| config_error(format!("--classes: {e}"))))
            .collect::<Result<_>>()?
    };
    if args.stack_depth == 0 {
        return Err(config_error("--stack-depth must be at least 1"));
    }
    let opts = CorpusOptions {
        classes,
        per_class: args.per_class,
        rng_seed: ctx.seed,
        stack_depth: args.stack_depth,
        extra_benign_fields: args.extra_fields,
    };
    let entries = generate_corpus(&opts);
    write_corpus(&args.out, &entries)?;
    eprintln!("wrote {} requests to {}", entries.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn select_models(ctx: &Settings, sel: &ModelSelection) -> Result<(Vec<WafModel>, Vec<FrameworkModel>)> {
    let pick = |given: &[String], all: &[&str]| -> Vec<String> {
        if given.is_empty() {
            all.iter().map(|s| s.to_string()).collect()
        } else {
            given.to_vec()
        }
    };
    let wafs = pick(&sel.wafs, WAF_PRESET_NAMES)
        .iter()
        .map(|n| {
            let mut waf = waf_preset(n).ok_or_else(|| {
                config_error(format!("unknown WAF model {n:?}; expected one of {}", WAF_PRESET_NAMES.join(", ")))
            })?;
            if let Some(rules) = &ctx.rules {
                waf.rules = rules.clone();
            }
            Ok(waf)
        })
        .collect::<Result<Vec<_>>>()?;
    let frameworks = pick(&sel.frameworks, FRAMEWORK_PRESET_NAMES)
        .iter()
        .map(|n| {
            framework_preset(n).ok_or_else(|| {
                config_error(format!(
                    "unknown framework model {n:?}; expected one of {}",
                    FRAMEWORK_PRESET_NAMES.join(", ")
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((wafs, frameworks))
}

fn cmd_diff(ctx: &Settings, args: DiffArgs) -> Result<ExitCode> {
    let (wafs, frameworks) = select_models(ctx, &args.models)?;
    let entries = read_corpus(&args.corpus)?;
    let records: Vec<OutcomeRecord> = run_matrix(&entries, &wafs, &frameworks).iter().map(OutcomeRecord::from).collect();
    write_output(args.out.as_deref(), &to_jsonl(&records))?;
    let summary = ReportSummary::from_results(&records, &[], NormalizerTally::default());
    for (outcome, n) in &summary.outcome_totals {
        eprintln!("{:<12} {:>8}", outcome.to_string(), n);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_minimize(ctx: &Settings, args: MinimizeArgs) -> Result<ExitCode> {
    let (wafs, frameworks) = select_models(ctx, &args.models)?;
    let entries = read_corpus(&args.corpus)?;
    let found = find_bypasses(&entries, &wafs, &frameworks);
    let records = if args.all { found } else { dedupe(&found) };
    write_output(args.out.as_deref(), &to_jsonl(&records))?;
    eprintln!("{} bypass records", records.len());
    Ok(ExitCode::SUCCESS)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), k + 1)))
        .collect()
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode> {
    let outcomes: Vec<OutcomeRecord> = match &args.outcomes {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let bypasses: Vec<BypassRecord> = match &args.bypasses {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let normalized: Vec<NormalizeRecord> = match &args.normalized {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let summary = ReportSummary::from_results(&outcomes, &bypasses, tally_of(&normalized));
    print!("{}", summary.render_table());
    if let Some(out) = &args.out {
        let mut line = summary.to_json_line();
        line.push('\n');
        fs::write(out, line).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_serve(ctx: &Settings, args: ServeArgs) -> Result<ExitCode> {
    let mut cfg = ProxyConfig::new(args.listen, args.upstream);
    cfg.max_body_bytes = args.max_body_bytes.unwrap_or(ctx.policy.max_body_bytes);
    cfg.policy = ctx.policy.clone();
    cfg.log_path = args.log;
    cfg.reject_status = args.reject_status;
    let proxy = Proxy::bind(cfg).map_err(|e| config_error(e.to_string()))?;
    eprintln!("listening on {}", proxy.local_addr());
    proxy.serve()?;
    Ok(ExitCode::SUCCESS)
}
