use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use lbrm_core::attack::{run_attack, AttackConfig};
use lbrm_core::data::{generate_synthetic, load_csv, save_csv, Family, SyntheticConfig};
use lbrm_core::harness::{
    evaluate_scores, load_scores, run_scenario, write_atomic, write_outputs, ExperimentConfig,
    MetricName,
};
use lbrm_core::models::{fine_tune, train, ImputerConfig, TrainedImputer};
use lbrm_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "lbrm",
    version,
    about = "Reference-model membership audit for time-series imputers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus to CSV.
    Generate(GenerateArgs),
    /// Train an imputer on a CSV corpus (or fine-tune one with --base).
    Train(TrainArgs),
    /// Score candidates against a target and a reference model.
    Attack(AttackArgs),
    /// Run the scenario-1 pipeline (target on private data, reference on other-distribution public data).
    Scenario1(ScenarioArgs),
    /// Run the scenario-2 pipeline (base on public data, target fine-tuned on private data).
    Scenario2(ScenarioArgs),
    /// Recompute metrics from a saved scores file.
    Metrics(MetricsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    A,
    B,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "a")]
    family: FamilyArg,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    len: usize,
    #[arg(long, default_value_t = 1)]
    dims: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional TOML file with SyntheticConfig fields; flags above are ignored when given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML file holding an imputer config.
    #[arg(long)]
    config: PathBuf,
    /// Training corpus (CSV).
    #[arg(long)]
    data: PathBuf,
    /// Existing model to fine-tune instead of training from scratch.
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    /// TOML file holding an attack config.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Candidate series (CSV).
    #[arg(long)]
    candidates: PathBuf,
    /// Known nonmembers for the std threshold rule (CSV).
    #[arg(long)]
    nonmembers: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the LBRM_OUT_DIR environment variable and the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue even if target and reference fail the MAE parity check.
    #[arg(long)]
    override_parity: bool,
}

#[derive(Args)]
struct MetricsArgs {
    /// Scores file written by `attack` or a scenario run.
    #[arg(long)]
    report: PathBuf,
    /// `id,member` CSV; required when the scores file carries no labels.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Write the metrics JSON here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn generate(args: GenerateArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(path) => read_toml::<SyntheticConfig>(path)?,
        None => {
            let family = match args.family {
                FamilyArg::A => Family::A,
                FamilyArg::B => Family::B,
            };
            let mut cfg = SyntheticConfig::new(family, args.count, args.len, args.seed);
            cfg.dims = args.dims;
            cfg
        }
    };
    let data = generate_synthetic(&cfg)?;
    save_csv(&data, &args.out)?;
    eprintln!("wrote {} series to {}", data.len(), args.out.display());
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let mut cfg: ImputerConfig = read_toml(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let data = load_csv(&args.data)?;
    let model = match &args.base {
        Some(base) => fine_tune(&TrainedImputer::load(base)?, &data, &cfg)?,
        None => train(&data, &cfg)?,
    };
    model.save(&args.out)?;
    if let Some(last) = model.history().last() {
        eprintln!("final training loss {last:.6}");
    }
    Ok(())
}

fn attack_cmd(args: AttackArgs) -> Result<()> {
    let mut cfg: AttackConfig = read_toml(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let target = TrainedImputer::load(&args.target)?;
    let reference = TrainedImputer::load(&args.reference)?;
    let candidates = load_csv(&args.candidates)?;
    let nonmembers = match &args.nonmembers {
        Some(p) => load_csv(p)?,
        None => Vec::new(),
    };
    let report = run_attack(&target, &reference, &candidates, &cfg, &nonmembers)?;
    report.save(&args.out)?;
    let flagged = report.verdicts.iter().filter(|v| v.is_member).count();
    eprintln!(
        "theta {}: {flagged} of {} candidates flagged as members",
        report.theta,
        report.verdicts.len()
    );
    Ok(())
}

fn scenario(args: ScenarioArgs, expected: u8) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if cfg.scenario != expected {
        return Err(Error::Config {
            path: args.config.clone(),
            message: format!(
                "config declares scenario {}, expected {expected}",
                cfg.scenario
            ),
        });
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.override_parity |= args.override_parity;
    let dir = cfg.resolve_output_dir(args.out.as_deref());
    let outcome = run_scenario(&cfg)?;
    if !outcome.report.parity.passed {
        eprintln!("warning: parity check failed and was overridden");
    }
    write_outputs(&outcome, &dir)?;
    let m = &outcome.report.methods;
    println!("method  {}", metric_header(&cfg.metrics));
    println!("lbrm    {}", metric_row(&m.lbrm, &cfg.metrics));
    println!("naive   {}", metric_row(&m.naive, &cfg.metrics));
    eprintln!("outputs in {}", dir.display());
    Ok(())
}

fn metric_header(metrics: &[MetricName]) -> String {
    metrics
        .iter()
        .map(|m| format!("{:>13}", m.key()))
        .collect::<Vec<_>>()
        .join(" ")
}

fn metric_row(block: &std::collections::BTreeMap<String, f64>, metrics: &[MetricName]) -> String {
    metrics
        .iter()
        .map(|m| format!("{:>13.4}", block[m.key()]))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Deserialize)]
struct LabelRecord {
    id: String,
    member: String,
}

fn parse_member(value: &str, line: u64) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "member" => Ok(true),
        "0" | "false" | "nonmember" => Ok(false),
        other => Err(Error::Parse {
            line,
            message: format!("member must be true/false or 1/0, got {other:?}"),
        }),
    }
}

fn read_labels(path: &Path) -> Result<Vec<(String, bool)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<LabelRecord>().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        out.push((row.id, parse_member(&row.member, line)?));
    }
    Ok(out)
}

fn metrics_cmd(args: MetricsArgs) -> Result<()> {
    let (report, embedded) = load_scores(&args.report)?;
    let labels = match (&args.labels, embedded) {
        (Some(p), _) => read_labels(p)?,
        (None, Some(l)) => l,
        (None, None) => {
            return Err(Error::Argument(format!(
                "{} has no labels; pass --labels",
                args.report.display()
            )))
        }
    };
    let lookup: HashMap<&str, bool> = labels.iter().map(|(id, m)| (id.as_str(), *m)).collect();
    let scores: Vec<_> = report.scores().cloned().collect();
    let flags = scores
        .iter()
        .map(|s| {
            lookup
                .get(s.candidate_id.as_str())
                .copied()
                .ok_or_else(|| Error::Schema(format!("no label for candidate {}", s.candidate_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let eval = evaluate_scores(&scores, &flags, report.theta_rule, &MetricName::all())?;
    let body = serde_json::json!({
        "candidates": scores.len(),
        "members": flags.iter().filter(|&&m| m).count(),
        "methods": { "lbrm": eval.lbrm, "naive": eval.naive },
    });
    let mut text = serde_json::to_string_pretty(&body)?;
    text.push('\n');
    if let Some(out) = &args.out {
        write_atomic(out, text.as_bytes())?;
    }
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train_cmd(a),
        Command::Attack(a) => attack_cmd(a),
        Command::Scenario1(a) => scenario(a, 1),
        Command::Scenario2(a) => scenario(a, 2),
        Command::Metrics(a) => metrics_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(1)
        }
    }
}
