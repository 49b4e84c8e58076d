//! Prepared data plus the train/attack/evaluate steps every protocol uses.

use crate::attacks::{AttackFamily, AttackSpec};
use crate::autodiff::Tensor;
use crate::data::{
    prepare_clients, synthesize_population, ClientData, HourlySeries, PipelineConfig, Samples, UsageWindows,
};
use crate::error::{Error, Result};
use crate::evaluation::{asr_from_labels, classify_with, compute_metrics, AsrProtocol, AsrReport, Metrics};
use crate::federation::{assign_malicious, run_centralized, ClientNode, Federation, FederationConfig, RoundLog};
use crate::models::{Model, TrainReport};

use super::config::{DataSource, ExperimentConfig, Setting};

/// A trained model and how it got there.
#[derive(Clone, Debug)]
pub struct Trained {
    pub model: Model,
    /// Federated runs only.
    pub rounds: Vec<RoundLog>,
    /// Centralized runs only.
    pub report: Option<TrainReport>,
}

#[derive(Clone, Debug)]
pub struct InferenceOutcome {
    pub metrics: Metrics,
    pub asr: AsrReport,
    pub x_adv: Tensor,
}

/// Clients with train/test splits ready for training.
pub struct Study {
    cfg: ExperimentConfig,
    clients: Vec<ClientData>,
    windows: UsageWindows,
    pooled_train: Samples,
    test: Samples,
}

impl Study {
    /// Validates `cfg`, loads or synthesizes the series and runs the data
    /// pipeline. Nothing is trained yet.
    pub fn prepare(cfg: ExperimentConfig) -> Result<Self> {
        let cfg = cfg.validate()?;
        let series = load_series(&cfg)?;
        let households = series.len();
        let f = cfg.federation_params();
        let mut late = Vec::new();
        if cfg.setting == Setting::Federated {
            if f.malicious_count > households {
                late.push(format!(
                    "federation.malicious_count {} exceeds {households} households",
                    f.malicious_count
                ));
            }
            if f.clients_per_round.is_some_and(|n| n > households) {
                late.push(format!("federation.clients_per_round exceeds {households} households"));
            }
        }
        if !late.is_empty() {
            return Err(Error::Config(late));
        }
        let pipeline = PipelineConfig {
            seed: cfg.pipeline_seed(),
            ..cfg.pipeline.clone()
        };
        let (clients, windows) = prepare_clients(&series, &pipeline)?;
        let train_parts: Vec<Samples> = clients.iter().map(|c| c.train.to_samples()).collect();
        let test_parts: Vec<Samples> = clients.iter().map(|c| c.test.to_samples()).collect();
        let pooled_train = Samples::concat(&train_parts.iter().collect::<Vec<_>>());
        let test = Samples::concat(&test_parts.iter().collect::<Vec<_>>());
        Ok(Self {
            cfg,
            clients,
            windows,
            pooled_train,
            test,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn clients(&self) -> &[ClientData] {
        &self.clients
    }

    pub fn windows(&self) -> UsageWindows {
        self.windows
    }

    pub fn pooled_train(&self) -> &Samples {
        &self.pooled_train
    }

    /// All households' test splits, in household order.
    pub fn test(&self) -> &Samples {
        &self.test
    }

    pub fn households(&self) -> usize {
        self.clients.len()
    }

    /// Clean training in the configured setting.
    pub fn train_clean(&self) -> Result<Trained> {
        self.train(&AttackSpec::none(), 0)
    }

    /// Training with `malicious` poisoning clients (federated) or with the
    /// pooled data poisoned (central, `malicious > 0`).
    pub fn train(&self, attack: &AttackSpec, malicious: usize) -> Result<Trained> {
        let cfg = &self.cfg;
        let arch = cfg.architecture();
        let attacked = attack.family != AttackFamily::None && malicious > 0;
        match cfg.setting {
            Setting::Central => {
                let (spec, fraction) = if attacked {
                    (*attack, cfg.poison_fraction)
                } else {
                    (AttackSpec::none(), 0.0)
                };
                let (model, report) = run_centralized(arch, &self.pooled_train, &cfg.train, &spec, fraction, cfg.seed)?;
                Ok(Trained {
                    model,
                    rounds: Vec::new(),
                    report: Some(report),
                })
            }
            Setting::Federated => {
                let f = cfg.federation_params();
                let flags = if attacked {
                    assign_malicious(self.clients.len(), malicious, cfg.seed)?
                } else {
                    vec![false; self.clients.len()]
                };
                let nodes = self
                    .clients
                    .iter()
                    .zip(flags)
                    .map(|(c, bad)| {
                        let train = c.train.to_samples();
                        if bad {
                            ClientNode::malicious(&c.household_id, train, *attack, cfg.poison_fraction)
                        } else {
                            ClientNode::honest(&c.household_id, train)
                        }
                    })
                    .collect();
                let fed_cfg = FederationConfig {
                    rounds: f.rounds,
                    local_epochs: f.local_epochs,
                    clients_per_round: f.clients_per_round,
                    train: cfg.train.clone(),
                    seed: cfg.seed,
                    threshold: cfg.threshold,
                    exec: cfg.exec,
                    checkpoint_every: None,
                    checkpoint_dir: None,
                };
                let mut fed = Federation::new(arch, nodes, fed_cfg)?;
                let rounds = fed.run(Some(&self.test))?;
                Ok(Trained {
                    model: fed.into_global(),
                    rounds,
                    report: None,
                })
            }
        }
    }

    pub fn predict(&self, model: &Model, x: &Tensor) -> Result<Vec<u8>> {
        classify_with(model, x, self.cfg.threshold, self.cfg.exec)
    }

    /// Metrics on the clean test split.
    pub fn evaluate(&self, model: &Model) -> Result<Metrics> {
        compute_metrics(&self.predict(model, &self.test.x)?, &self.test.y)
    }

    /// Metrics and ASR with every test input attacked.
    pub fn attack_inference(&self, model: &Model, attack: &AttackSpec) -> Result<InferenceOutcome> {
        let spec = AttackSpec {
            seed: self.cfg.inference_seed(),
            ..*attack
        };
        let (x_adv, _) = spec.apply(model, &self.test.x, &self.test.y, &self.cfg.train.loss, self.cfg.exec)?;
        let before = self.predict(model, &self.test.x)?;
        let after = self.predict(model, &x_adv)?;
        Ok(InferenceOutcome {
            metrics: compute_metrics(&after, &self.test.y)?,
            asr: asr_from_labels(&before, &after, AsrProtocol::InferenceAttack)?,
            x_adv,
        })
    }

    /// ASR of an attacked model against the clean one on the clean test split.
    pub fn training_asr(&self, clean: &Model, attacked: &Model) -> Result<AsrReport> {
        let before = self.predict(clean, &self.test.x)?;
        let after = self.predict(attacked, &self.test.x)?;
        asr_from_labels(&before, &after, AsrProtocol::TrainingAttack)
    }
}

fn load_series(cfg: &ExperimentConfig) -> Result<Vec<HourlySeries>> {
    match &cfg.data {
        DataSource::Synthetic { households, days, .. } => {
            synthesize_population(*households, *days, cfg.synthetic_seed())
        }
        DataSource::Csv { path } => crate::data::ingest_csv(path),
    }
}
