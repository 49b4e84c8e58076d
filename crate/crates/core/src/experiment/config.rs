//! Declarative experiment description, read from TOML.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackFamily, AttackSpec};
use crate::data::PipelineConfig;
use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_THRESHOLD;
use crate::models::{Architecture, LstmConfig, ModelKind, TrainConfig, TransformerConfig};
use crate::par::ExecMode;
use crate::seed::{self, stream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Central,
    #[default]
    Federated,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::Central => "central",
            Setting::Federated => "federated",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "central" | "centralized" => Ok(Setting::Central),
            "federated" | "fl" => Ok(Setting::Federated),
            other => Err(Error::invalid(format!("unknown setting `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Clean training, clean evaluation.
    #[default]
    Baseline,
    /// Clean training, attacked test inputs.
    InferenceAttack,
    /// Poisoned training, clean test inputs.
    TrainingAttack,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Baseline => "baseline",
            Protocol::InferenceAttack => "inference_attack",
            Protocol::TrainingAttack => "training_attack",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "baseline" => Ok(Protocol::Baseline),
            "inference_attack" | "inference" => Ok(Protocol::InferenceAttack),
            "training_attack" | "training" => Ok(Protocol::TrainingAttack),
            other => Err(Error::invalid(format!("unknown protocol `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        households: usize,
        days: usize,
        /// Derived from the master seed when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Csv {
        path: PathBuf,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            households: 19,
            days: 365,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationParams {
    /// All clients every round when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clients_per_round: Option<usize>,
    pub rounds: usize,
    pub local_epochs: usize,
    pub malicious_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

impl Default for FederationParams {
    fn default() -> Self {
        Self {
            clients_per_round: None,
            rounds: 100,
            local_epochs: 1,
            malicious_count: 0,
            checkpoint_every: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub epsilons: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub malicious_fractions: Vec<f64>,
    /// Attack families swept; the configured attack's family when empty.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub families: Vec<AttackFamily>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub model: ModelKind,
    pub setting: Setting,
    pub protocol: Protocol,
    pub threshold: f64,
    /// Share of training rows perturbed by an attacker (per malicious client
    /// when federated, of the pooled data when central).
    pub poison_fraction: f64,
    pub exec: ExecMode,
    /// Relative paths resolve against `$METERGUARD_OUT` (or the working directory).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub data: DataSource,
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub lstm: LstmConfig,
    pub transformer: TransformerConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub federation: Option<FederationParams>,
    pub attack: AttackSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 0,
            model: ModelKind::Lstm,
            setting: Setting::Federated,
            protocol: Protocol::Baseline,
            threshold: DEFAULT_THRESHOLD,
            poison_fraction: 0.3,
            exec: ExecMode::default(),
            output_dir: None,
            data: DataSource::default(),
            pipeline: PipelineConfig::default(),
            train: TrainConfig::default(),
            lstm: LstmConfig::default(),
            transformer: TransformerConfig::default(),
            federation: None,
            attack: AttackSpec::default(),
            sweep: None,
        }
    }
}

pub const OUTPUT_ENV: &str = "METERGUARD_OUT";

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn architecture(&self) -> Architecture {
        match self.model {
            ModelKind::Lstm => Architecture::Lstm(self.lstm),
            ModelKind::Transformer => Architecture::Transformer(self.transformer),
        }
    }

    pub fn federation_params(&self) -> FederationParams {
        self.federation.clone().unwrap_or_default()
    }

    /// Household count when it is known without reading data.
    pub fn declared_households(&self) -> Option<usize> {
        match &self.data {
            DataSource::Synthetic { households, .. } => Some(*households),
            DataSource::Csv { .. } => None,
        }
    }

    /// Families exercised by a sweep or attack run.
    pub fn attack_families(&self) -> Vec<AttackFamily> {
        match &self.sweep {
            Some(s) if !s.families.is_empty() => s.families.clone(),
            _ => vec![self.attack.family],
        }
    }

    pub fn output_path(&self) -> PathBuf {
        let rel = self.output_dir.clone().unwrap_or_else(|| PathBuf::from(&self.name));
        if rel.is_absolute() {
            return rel;
        }
        match std::env::var_os(OUTPUT_ENV) {
            Some(root) => PathBuf::from(root).join(rel),
            None => rel,
        }
    }

    /// Named sub-seeds, all derived from the master seed.
    pub fn derived_seeds(&self) -> BTreeMap<&'static str, u64> {
        let s = self.seed;
        let mut m = BTreeMap::new();
        m.insert("master", s);
        m.insert("synthetic_data", self.synthetic_seed());
        m.insert("pipeline", self.pipeline_seed());
        m.insert("model_init", crate::federation::init_seed(s));
        m.insert("client_selection", seed::derive(s, &[stream::SELECT]));
        m.insert("malicious_assignment", seed::derive(s, &[stream::MALICIOUS]));
        m.insert("inference_attack", self.inference_seed());
        m
    }

    pub(crate) fn synthetic_seed(&self) -> u64 {
        match &self.data {
            DataSource::Synthetic { seed: Some(v), .. } => *v,
            _ => seed::derive(self.seed, &[stream::SYNTH]),
        }
    }

    /// `pipeline.seed` and `attack.seed` act as salts on the master seed.
    pub(crate) fn pipeline_seed(&self) -> u64 {
        seed::derive(self.seed, &[stream::ANOMALY, self.pipeline.seed])
    }

    pub(crate) fn inference_seed(&self) -> u64 {
        seed::derive(self.seed, &[stream::INFERENCE, self.attack.seed])
    }

    /// Every violated rule; empty when the configuration is usable.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            v.push(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        if !(0.0..=1.0).contains(&self.poison_fraction) {
            v.push(format!(
                "poison_fraction must lie in [0, 1], got {}",
                self.poison_fraction
            ));
        }
        v.extend(self.attack.violations());
        if let Err(Error::Config(list)) = self.pipeline.anomaly.validate() {
            v.extend(list);
        }
        if !(self.pipeline.train_fraction > 0.0 && self.pipeline.train_fraction < 1.0) {
            v.push(format!(
                "pipeline.train_fraction must lie in (0, 1), got {}",
                self.pipeline.train_fraction
            ));
        }
        if self.train.batch_size == 0 {
            v.push("train.batch_size must be >= 1".into());
        }
        if self.model == ModelKind::Transformer {
            let t = &self.transformer;
            if t.heads == 0 || !t.d_model.is_multiple_of(t.heads) {
                v.push(format!(
                    "transformer.d_model {} is not divisible by {} heads",
                    t.d_model, t.heads
                ));
            }
            if t.seq_len != crate::data::HOURS {
                v.push("transformer.seq_len must be 24".into());
            }
        }
        if self.model == ModelKind::Lstm && self.lstm.hidden == 0 {
            v.push("lstm.hidden must be >= 1".into());
        }
        match &self.data {
            DataSource::Synthetic { households, days, .. } => {
                if *households == 0 {
                    v.push("data.households must be >= 1".into());
                }
                if *days < 2 {
                    v.push("data.days must be >= 2".into());
                }
            }
            DataSource::Csv { path } if path.as_os_str().is_empty() => v.push("data.path is empty".into()),
            DataSource::Csv { .. } => {}
        }
        let family = self.attack.family;
        match self.protocol {
            Protocol::Baseline if family != AttackFamily::None => {
                v.push(format!("protocol baseline cannot carry attack `{family}`"))
            }
            Protocol::InferenceAttack | Protocol::TrainingAttack
                if self.attack_families().contains(&AttackFamily::None) =>
            {
                v.push(format!("protocol {} needs an attack family", self.protocol.name()))
            }
            _ => {}
        }
        if self.protocol == Protocol::InferenceAttack && self.attack_families().contains(&AttackFamily::LabelFlip) {
            v.push("label_flip only applies to the training_attack protocol".into());
        }
        match (self.setting, &self.federation) {
            (Setting::Central, Some(_)) => v.push("central setting cannot take a [federation] section".into()),
            (Setting::Federated, _) => {
                let f = self.federation_params();
                if f.rounds == 0 {
                    v.push("federation.rounds must be >= 1".into());
                }
                if f.local_epochs == 0 {
                    v.push("federation.local_epochs must be >= 1".into());
                }
                if f.clients_per_round == Some(0) {
                    v.push("federation.clients_per_round must be >= 1".into());
                }
                if let Some(h) = self.declared_households() {
                    if f.malicious_count > h {
                        v.push(format!(
                            "federation.malicious_count {} exceeds {h} households",
                            f.malicious_count
                        ));
                    }
                    if f.clients_per_round.is_some_and(|n| n > h) {
                        v.push(format!("federation.clients_per_round exceeds {h} households"));
                    }
                }
                let fraction_sweep = self.sweep.as_ref().is_some_and(|s| !s.malicious_fractions.is_empty());
                if self.protocol == Protocol::TrainingAttack && f.malicious_count == 0 && !fraction_sweep {
                    v.push("training_attack in the federated setting needs federation.malicious_count >= 1".into());
                }
                if self.protocol != Protocol::TrainingAttack && f.malicious_count > 0 {
                    v.push("federation.malicious_count is only meaningful for training_attack".into());
                }
            }
            (Setting::Central, None) => {
                if self.train.epochs == 0 {
                    v.push("train.epochs must be >= 1".into());
                }
            }
        }
        if let Some(s) = &self.sweep {
            if s.epsilons.is_empty() && s.malicious_fractions.is_empty() {
                v.push("sweep needs epsilons or malicious_fractions".into());
            }
            if self.protocol == Protocol::Baseline {
                v.push("a sweep needs an attack protocol".into());
            }
            if s.epsilons.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
                v.push("sweep.epsilons must be finite and >= 0".into());
            }
            if s.malicious_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
                v.push("sweep.malicious_fractions must lie in [0, 1]".into());
            }
            if !s.malicious_fractions.is_empty()
                && (self.setting != Setting::Federated || self.protocol != Protocol::TrainingAttack)
            {
                v.push("sweep.malicious_fractions needs the federated training_attack protocol".into());
            }
            if !s.epsilons.is_empty() && self.attack_families().iter().any(|f| !f.uses_gradients()) {
                v.push("sweep.epsilons applies to fgsm and pgd only".into());
            }
        }
        v
    }

    /// Fills derived values and checks every rule.
    pub fn validate(mut self) -> Result<Self> {
        let v = self.violations();
        if !v.is_empty() {
            return Err(Error::Config(v));
        }
        if self.setting == Setting::Federated && self.federation.is_none() {
            self.federation = Some(FederationParams::default());
        }
        Ok(self)
    }
}
