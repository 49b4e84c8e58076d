//! End-to-end runs that write result files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::attacks::{AttackFamily, AttackSpec};
use crate::error::{Error, Result};
use crate::evaluation::{write_metrics_csv, Metrics, MetricsRow};
use crate::federation::{write_round_log, RoundLog};
use crate::fmt::{pct2, sig12};
use crate::models::save_weights;
use crate::par;

use super::config::{ExperimentConfig, Protocol, Setting};
use super::study::{Study, Trained};

/// What a sweep point varies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Epsilon,
    MaliciousFraction,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::MaliciousFraction => "malicious_fraction",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub value: f64,
    pub attack: AttackFamily,
    pub metrics: Metrics,
    pub asr: f64,
}

/// Everything a run produced, also written to `dir`.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub rows: Vec<MetricsRow>,
    pub rounds: Vec<(String, Vec<RoundLog>)>,
    pub sweep: Vec<SweepPoint>,
    pub config_hash: String,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct ManifestRow {
    setting: String,
    attack: String,
    seed: u64,
    /// Epochs (central) or rounds (federated) behind the row's model.
    trained_for: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep_value: Option<f64>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    name: &'a str,
    package_version: &'static str,
    config_hash: &'a str,
    seeds: BTreeMap<&'static str, u64>,
    exec: &'static str,
    parallel_feature: bool,
    households: usize,
    test_samples: usize,
    train_samples: usize,
    rows: Vec<ManifestRow>,
    files: Vec<String>,
}

fn setting_label(cfg: &ExperimentConfig) -> String {
    format!("{}-{}", cfg.model.name(), cfg.setting.name())
}

fn trained_for(cfg: &ExperimentConfig) -> usize {
    match cfg.setting {
        Setting::Central => cfg.train.epochs,
        Setting::Federated => cfg.federation_params().rounds,
    }
}

fn spec_for(cfg: &ExperimentConfig, family: AttackFamily) -> AttackSpec {
    AttackSpec { family, ..cfg.attack }
}

fn malicious_for(cfg: &ExperimentConfig, households: usize) -> usize {
    match cfg.setting {
        Setting::Central => 1,
        Setting::Federated => cfg.federation_params().malicious_count.min(households),
    }
}

/// Writes through a temporary sibling then renames, so readers never see a
/// half-written file.
pub(crate) fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    write(&tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn hash_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs the configured protocol (and sweep, when present) and writes
/// `metrics.csv`, `config.toml`, `manifest.json`, round logs, final weights
/// and, for sweeps, `sweep.csv` plus plot series.
pub fn run_experiment(cfg: ExperimentConfig) -> Result<RunSummary> {
    let study = Study::prepare(cfg)?;
    let cfg = study.config().clone();
    let snapshot = cfg.to_toml()?;
    // where results land does not change them, so the location is not hashed
    let config_hash = hash_hex(
        ExperimentConfig {
            output_dir: None,
            ..cfg.clone()
        }
        .to_toml()?
        .as_bytes(),
    );
    let dir = cfg.output_path();
    std::fs::create_dir_all(&dir)?;

    let setting = setting_label(&cfg);
    let trained_span = trained_for(&cfg);
    let mut rows = Vec::new();
    let mut manifest_rows = Vec::new();
    let mut rounds = Vec::new();
    let mut models = Vec::new();

    let clean = study.train_clean()?;
    let clean_metrics = study.evaluate(&clean.model)?;
    rows.push(MetricsRow {
        setting: setting.clone(),
        attack: "none".into(),
        metrics: clean_metrics,
        asr: None,
    });
    manifest_rows.push(ManifestRow {
        setting: setting.clone(),
        attack: "none".into(),
        seed: cfg.seed,
        trained_for: trained_span,
        sweep_value: None,
    });

    let mut sweep = Vec::new();
    if cfg.sweep.is_some() {
        sweep = run_sweep(&study, &clean)?;
        for p in &sweep {
            let label = format!("{}@{}={}", p.attack.name(), p.axis.name(), sig12(p.value));
            rows.push(MetricsRow {
                setting: setting.clone(),
                attack: label.clone(),
                metrics: p.metrics,
                asr: Some(p.asr),
            });
            manifest_rows.push(ManifestRow {
                setting: setting.clone(),
                attack: label,
                seed: cfg.seed,
                trained_for: trained_span,
                sweep_value: Some(p.value),
            });
        }
    } else {
        for family in attack_families(&cfg) {
            let spec = spec_for(&cfg, family);
            let (metrics, asr, attacked) = match cfg.protocol {
                Protocol::Baseline => unreachable!("baseline has no attack families"),
                Protocol::InferenceAttack => {
                    let out = study.attack_inference(&clean.model, &spec)?;
                    (out.metrics, out.asr.asr, None)
                }
                Protocol::TrainingAttack => {
                    let t = study.train(&spec, malicious_for(&cfg, study.households()))?;
                    let asr = study.training_asr(&clean.model, &t.model)?;
                    (study.evaluate(&t.model)?, asr.asr, Some(t))
                }
            };
            rows.push(MetricsRow {
                setting: setting.clone(),
                attack: family.name().into(),
                metrics,
                asr: Some(asr),
            });
            manifest_rows.push(ManifestRow {
                setting: setting.clone(),
                attack: family.name().into(),
                seed: if cfg.protocol == Protocol::InferenceAttack {
                    cfg.inference_seed()
                } else {
                    cfg.seed
                },
                trained_for: trained_span,
                sweep_value: None,
            });
            if let Some(t) = attacked {
                if !t.rounds.is_empty() {
                    rounds.push((family.name().to_string(), t.rounds));
                }
                models.push((family.name().to_string(), t.model));
            }
        }
    }
    if !clean.rounds.is_empty() {
        rounds.insert(0, ("clean".to_string(), clean.rounds.clone()));
    }
    models.insert(0, ("clean".to_string(), clean.model.clone()));

    let mut files = Vec::new();
    let mut emit = |name: String, write: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let path = dir.join(&name);
        write_atomic(&path, write)?;
        files.push(path);
        Ok(())
    };
    emit("metrics.csv".into(), &|p| write_metrics_csv(p, &rows))?;
    emit("config.toml".into(), &|p| Ok(std::fs::write(p, &snapshot)?))?;
    for (label, logs) in &rounds {
        emit(format!("rounds-{label}.jsonl"), &|p| write_round_log(p, logs))?;
    }
    for (label, model) in &models {
        emit(format!("model-{label}.mgwt"), &|p| save_weights(model.weights(), p))?;
    }
    if !sweep.is_empty() {
        emit("sweep.csv".into(), &|p| write_sweep_csv(p, &sweep))?;
    }
    for (name, table) in plot_tables(&sweep, &rounds) {
        emit(name, &|p| write_table(p, &table))?;
    }

    let manifest = Manifest {
        name: &cfg.name,
        package_version: env!("CARGO_PKG_VERSION"),
        config_hash: &config_hash,
        seeds: cfg.derived_seeds(),
        exec: if cfg.exec.is_parallel() {
            "parallel"
        } else {
            "sequential"
        },
        parallel_feature: cfg!(feature = "parallel"),
        households: study.households(),
        test_samples: study.test().len(),
        train_samples: study.pooled_train().len(),
        rows: manifest_rows,
        files: files
            .iter()
            .filter_map(|f| f.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
    };
    let manifest_path = dir.join("manifest.json");
    write_atomic(&manifest_path, |p| {
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        Ok(std::fs::write(p, text)?)
    })?;
    files.push(manifest_path);

    Ok(RunSummary {
        dir,
        rows,
        rounds,
        sweep,
        config_hash,
        files,
    })
}

fn attack_families(cfg: &ExperimentConfig) -> Vec<AttackFamily> {
    if cfg.protocol == Protocol::Baseline {
        Vec::new()
    } else {
        cfg.attack_families()
    }
}

/// Every sweep point, evaluated independently against the shared clean model.
pub fn run_sweep(study: &Study, clean: &Trained) -> Result<Vec<SweepPoint>> {
    let cfg = study.config();
    let Some(sweep) = &cfg.sweep else {
        return Ok(Vec::new());
    };
    let mut jobs = Vec::new();
    for family in cfg.attack_families() {
        for &e in &sweep.epsilons {
            jobs.push((SweepAxis::Epsilon, e, family));
        }
        for &f in &sweep.malicious_fractions {
            jobs.push((SweepAxis::MaliciousFraction, f, family));
        }
    }
    let households = study.households();
    let results = par::map(cfg.exec, &jobs, |&(axis, value, family)| -> Result<SweepPoint> {
        let mut spec = spec_for(cfg, family);
        let mut malicious = malicious_for(cfg, households);
        match axis {
            SweepAxis::Epsilon => spec.epsilon = value,
            SweepAxis::MaliciousFraction => malicious = (value * households as f64).round() as usize,
        }
        let (metrics, asr) = match cfg.protocol {
            Protocol::InferenceAttack => {
                let out = study.attack_inference(&clean.model, &spec)?;
                (out.metrics, out.asr.asr)
            }
            Protocol::TrainingAttack => {
                let t = study.train(&spec, malicious)?;
                (
                    study.evaluate(&t.model)?,
                    study.training_asr(&clean.model, &t.model)?.asr,
                )
            }
            Protocol::Baseline => return Err(Error::invalid("a sweep needs an attack protocol")),
        };
        Ok(SweepPoint {
            axis,
            value,
            attack: family,
            metrics,
            asr,
        })
    });
    results.into_iter().collect()
}

fn write_sweep_csv(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["axis", "value", "attack", "acc", "prec", "rec", "f1", "asr"])?;
    for p in points {
        let m = &p.metrics;
        w.write_record([
            p.axis.name().to_string(),
            sig12(p.value),
            p.attack.name().to_string(),
            pct2(m.accuracy),
            pct2(m.precision),
            pct2(m.recall),
            pct2(m.f1),
            pct2(p.asr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A tidy `(x, series, value)` table with named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotTable {
    pub columns: [&'static str; 3],
    pub rows: Vec<(f64, String, f64)>,
}

/// Plot series keyed by file name: accuracy against epsilon, against the
/// malicious-client fraction, and per federated round.
pub fn plot_tables(sweep: &[SweepPoint], rounds: &[(String, Vec<RoundLog>)]) -> Vec<(String, PlotTable)> {
    let mut out = Vec::new();
    for (axis, file) in [
        (SweepAxis::Epsilon, "accuracy_vs_epsilon.csv"),
        (SweepAxis::MaliciousFraction, "accuracy_vs_malicious_fraction.csv"),
    ] {
        let rows: Vec<_> = sweep
            .iter()
            .filter(|p| p.axis == axis)
            .map(|p| (p.value, p.attack.name().to_string(), p.metrics.accuracy))
            .collect();
        if !rows.is_empty() {
            out.push((
                file.to_string(),
                PlotTable {
                    columns: [axis.name(), "attack", "accuracy"],
                    rows,
                },
            ));
        }
    }
    let rows: Vec<_> = rounds
        .iter()
        .flat_map(|(label, logs)| {
            logs.iter()
                .filter_map(move |l| l.global_test_accuracy.map(|a| (l.round as f64, label.clone(), a)))
        })
        .collect();
    if !rows.is_empty() {
        out.push((
            "accuracy_by_round.csv".into(),
            PlotTable {
                columns: ["round", "run", "accuracy"],
                rows,
            },
        ));
    }
    out
}

fn write_table(path: &Path, t: &PlotTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(t.columns)?;
    for (x, s, v) in &t.rows {
        w.write_record([sig12(*x), s.clone(), sig12(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the plot series for finished results into `dir`.
pub fn emit_plot_data(
    dir: impl AsRef<Path>,
    sweep: &[SweepPoint],
    rounds: &[(String, Vec<RoundLog>)],
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (name, table) in plot_tables(sweep, rounds) {
        let path = dir.join(name);
        write_atomic(&path, |p| write_table(p, &table))?;
        files.push(path);
    }
    Ok(files)
}
