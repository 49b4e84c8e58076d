use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use meterguard_core::attacks::AttackFamily;
use meterguard_core::data::synthesize_population;
use meterguard_core::data::write_series_csv;
use meterguard_core::experiment::{run_experiment, ExperimentConfig, Protocol, RunSummary, Setting, SweepConfig};
use meterguard_core::fmt::pct2;
use meterguard_core::models::ModelKind;
use meterguard_core::{Error, Result};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(
    name = "meterguard",
    version,
    about = "Federated smart-meter anomaly detection under attack"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic hourly consumption CSV.
    SynthData(SynthArgs),
    /// Centralized training; a training attack poisons the pooled data.
    Train(RunArgs),
    /// Train clean, then evaluate on attacked test inputs.
    AttackEval(RunArgs),
    /// Federated training, optionally with malicious clients.
    Federate(RunArgs),
    /// Epsilon or malicious-fraction sweep.
    Sweep(SweepArgs),
    /// Print the metrics table of a finished run.
    Report {
        /// Run directory holding metrics.csv and manifest.json.
        dir: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 19)]
    households: usize,
    #[arg(long, default_value_t = 365)]
    days: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// TOML experiment description; defaults apply when absent.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override any field, e.g. `--set federation.rounds=20` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    attack: Option<AttackFamily>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    malicious: Option<usize>,
    #[arg(long)]
    poison_fraction: Option<f64>,
    /// Output directory (relative paths resolve against $METERGUARD_OUT).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Validate, print the normalized config and derived seeds, then stop.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated epsilons.
    #[arg(long, value_delimiter = ',')]
    epsilons: Vec<f64>,
    /// Comma-separated malicious-client fractions.
    #[arg(long, value_delimiter = ',')]
    fractions: Vec<f64>,
    /// Comma-separated attack families.
    #[arg(long, value_delimiter = ',')]
    families: Vec<AttackFamily>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::SynthData(a) => {
            let series = synthesize_population(a.households, a.days, a.seed)?;
            if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            write_series_csv(&a.out, &series)?;
            println!(
                "wrote {} households x {} days to {}",
                a.households,
                a.days,
                a.out.display()
            );
            Ok(())
        }
        Command::Train(a) => execute(&a, |c| {
            c.setting = Setting::Central;
            if c.attack.family != AttackFamily::None && c.protocol == Protocol::Baseline {
                c.protocol = Protocol::TrainingAttack;
            }
        }),
        Command::AttackEval(a) => execute(&a, |c| {
            c.protocol = Protocol::InferenceAttack;
        }),
        Command::Federate(a) => execute(&a, |c| {
            c.setting = Setting::Federated;
            if c.attack.family != AttackFamily::None && c.protocol == Protocol::Baseline {
                c.protocol = Protocol::TrainingAttack;
            }
        }),
        Command::Sweep(s) => execute(&s.run, |c| {
            let sweep = c.sweep.get_or_insert_with(SweepConfig::default);
            if !s.epsilons.is_empty() {
                sweep.epsilons = s.epsilons.clone();
            }
            if !s.fractions.is_empty() {
                sweep.malicious_fractions = s.fractions.clone();
            }
            if !s.families.is_empty() {
                sweep.families = s.families.clone();
            }
            if c.protocol == Protocol::Baseline {
                c.protocol = Protocol::TrainingAttack;
            }
        }),
        Command::Report { dir } => report(&dir),
    }
}

/// Loads the config, applies `--set` pairs, then typed flags, then the
/// subcommand's own adjustments, and runs it.
fn execute(a: &RunArgs, adjust: impl FnOnce(&mut ExperimentConfig)) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref(), &a.sets)?;
    apply_flags(&mut cfg, a);
    adjust(&mut cfg);
    let cfg = cfg.validate()?;
    for (name, seed) in cfg.derived_seeds() {
        eprintln!("seed {name:<22} {seed}");
    }
    if a.check {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let summary = run_experiment(cfg)?;
    print_summary(&summary);
    Ok(())
}

fn load_config(path: Option<&Path>, sets: &[String]) -> Result<ExperimentConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    let mut doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
    for pair in sets {
        set_key(&mut doc, pair)?;
    }
    ExperimentConfig::from_toml(&toml::to_string(&doc).map_err(|e| Error::Config(vec![e.to_string()]))?)
}

/// `a.b.c=value`; the value is read as TOML and falls back to a bare string.
fn set_key(doc: &mut toml::Table, pair: &str) -> Result<()> {
    let (key, raw) = pair
        .split_once('=')
        .ok_or_else(|| Error::Config(vec![format!("--set expects KEY=VALUE, got `{pair}`")]))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut table = doc;
    for p in path {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(vec![format!("--set {key}: `{p}` is not a section")]))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_flags(cfg: &mut ExperimentConfig, a: &RunArgs) {
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.model {
        cfg.model = v;
    }
    if let Some(v) = a.attack {
        cfg.attack.family = v;
    }
    if let Some(v) = a.epsilon {
        cfg.attack.epsilon = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.rounds {
        cfg.federation.get_or_insert_with(Default::default).rounds = v;
    }
    if let Some(v) = a.malicious {
        cfg.federation.get_or_insert_with(Default::default).malicious_count = v;
    }
    if let Some(v) = a.poison_fraction {
        cfg.poison_fraction = v;
    }
    if let Some(v) = &a.out {
        cfg.output_dir = Some(v.clone());
    }
}

fn print_summary(s: &RunSummary) {
    println!(
        "{:<22} {:<28} {:>8} {:>9} {:>8} {:>8} {:>8}",
        "setting", "attack", "acc", "precision", "recall", "f1", "asr"
    );
    for r in &s.rows {
        let m = &r.metrics;
        let asr = r.asr.map(pct2).unwrap_or_else(|| "-".into());
        println!(
            "{:<22} {:<28} {:>8} {:>9} {:>8} {:>8} {:>8}",
            r.setting,
            r.attack,
            pct2(m.accuracy),
            pct2(m.precision),
            pct2(m.recall),
            pct2(m.f1),
            asr
        );
    }
    println!("config hash {}", s.config_hash);
    println!("results in {}", s.dir.display());
}

fn report(dir: &Path) -> Result<()> {
    let mut rdr = csv::Reader::from_path(dir.join("metrics.csv"))?;
    let header = rdr.headers()?.clone();
    let rows: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            rows.iter()
                .map(|r| r.get(i).map_or(0, str::len))
                .chain([header[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |r: &csv::StringRecord| {
        r.iter()
            .zip(&widths)
            .map(|(v, w)| format!("{v:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    println!("{}", line(&header));
    for r in &rows {
        println!("{}", line(r));
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    if let Some(h) = manifest.get("config_hash").and_then(|v| v.as_str()) {
        println!("config hash {h}");
    }
    if let Some(seeds) = manifest.get("seeds").and_then(|v| v.as_object()) {
        for (k, v) in seeds {
            println!("seed {k:<22} {v}");
        }
    }
    Ok(())
}
