//! FedAVG simulation: per-round client selection, optional data poisoning by
//! malicious clients, local training, and unweighted weight averaging.
//! Also hosts the pooled (centralized) trainer used as the reference setting.
//!
//! Clients exchange weights with the server as encoded checkpoints, so every
//! hand-off crosses the same byte boundary a real deployment would.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::attacks::{AttackFamily, AttackSpec};
use crate::data::Samples;
use crate::error::{Error, Result};
use crate::evaluation::{classify_with, compute_metrics, DEFAULT_THRESHOLD};
use crate::models::train::run_epochs;
use crate::models::{
    decode_weights, encode_weights, save_weights, Architecture, FocalLoss, Model, RmsProp, TrainConfig, TrainReport,
    WeightMap,
};
use crate::par::{self, ExecMode};
use crate::seed::{self, stream};

#[derive(Clone, Debug, PartialEq)]
pub struct ClientNode {
    pub id: String,
    pub train: Samples,
    pub malicious: bool,
    pub attack: AttackSpec,
    /// Share of local training rows perturbed each round.
    pub poison_fraction: f64,
}

impl ClientNode {
    pub fn honest(id: impl Into<String>, train: Samples) -> Self {
        Self {
            id: id.into(),
            train,
            malicious: false,
            attack: AttackSpec::none(),
            poison_fraction: 0.0,
        }
    }

    pub fn malicious(id: impl Into<String>, train: Samples, attack: AttackSpec, poison_fraction: f64) -> Self {
        Self {
            id: id.into(),
            train,
            malicious: true,
            attack,
            poison_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.malicious && self.attack.family != AttackFamily::None {
            return Err(Error::invalid(format!("honest client {} carries an attack", self.id)));
        }
        if !(0.0..=1.0).contains(&self.poison_fraction) {
            return Err(Error::invalid(format!(
                "client {}: poison_fraction outside [0, 1]",
                self.id
            )));
        }
        if self.train.is_empty() {
            return Err(Error::invalid(format!("client {} has no training data", self.id)));
        }
        self.attack.validate()
    }
}

/// Marks `count` of `n` clients malicious. The choice is a prefix of one
/// seeded permutation, so larger counts always contain smaller ones.
pub fn assign_malicious(n: usize, count: usize, master_seed: u64) -> Result<Vec<bool>> {
    if count > n {
        return Err(Error::invalid(format!(
            "{count} malicious clients requested but only {n} exist"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::derived_rng(master_seed, &[stream::MALICIOUS]));
    let mut flags = vec![false; n];
    for &i in &order[..count] {
        flags[i] = true;
    }
    Ok(flags)
}

/// Replaces a fresh random `poison_fraction` subset of `data` with its
/// attacked version, computed against `model`.
pub fn poison(
    data: &Samples,
    model: &Model,
    attack: &AttackSpec,
    poison_fraction: f64,
    subset_seed: u64,
    loss: &FocalLoss,
) -> Result<Samples> {
    if attack.family == AttackFamily::None || poison_fraction == 0.0 {
        return Ok(data.clone());
    }
    let n = data.len();
    let k = (poison_fraction * n as f64).round() as usize;
    let mut idx = index::sample(&mut seed::rng(subset_seed), n, k).into_vec();
    idx.sort_unstable();
    let part = data.subset(&idx);
    let (x_adv, y_adv) = attack.apply(model, &part.x, &part.y, loss, ExecMode::Sequential)?;
    let mut out = data.clone();
    for (j, &i) in idx.iter().enumerate() {
        out.x.row_mut(i).copy_from_slice(x_adv.row(j));
        out.y[i] = y_adv[j];
    }
    Ok(out)
}

/// Element-wise unweighted mean.
pub fn fedavg(maps: &[WeightMap]) -> Result<WeightMap> {
    let first = maps.first().ok_or_else(|| Error::invalid("fedavg of no weight maps"))?;
    let mut sum = first.clone();
    for m in &maps[1..] {
        sum.check_compatible(m)?;
        for ((_, acc), (_, t)) in sum.iter_mut().zip(m.iter()) {
            for (a, &b) in acc.data_mut().iter_mut().zip(t.data()) {
                *a += b;
            }
        }
    }
    Ok(sum.scaled(1.0 / maps.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FederationConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    /// Clients per round; all of them when unset.
    pub clients_per_round: Option<usize>,
    pub train: TrainConfig,
    pub seed: u64,
    pub threshold: f64,
    pub exec: ExecMode,
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds: 100,
            local_epochs: 1,
            clients_per_round: None,
            train: TrainConfig::default(),
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            exec: ExecMode::default(),
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub selected: Vec<String>,
    pub malicious: usize,
    pub mean_local_loss: f64,
    pub global_test_accuracy: Option<f64>,
}

/// Shuffle stream for client `i`. Pooled training uses client 0's stream so a
/// single-client federation and the pooled trainer see the same batches.
pub fn client_seed(master: u64, client: usize) -> u64 {
    seed::derive(master, &[stream::CLIENT, client as u64])
}

pub fn init_seed(master: u64) -> u64 {
    seed::derive(master, &[stream::INIT])
}

/// Everything one client needs for a round.
struct ClientTask<'a> {
    index: usize,
    node: &'a ClientNode,
    payload: &'a [u8],
    opt: RmsProp,
}

pub struct Federation {
    cfg: FederationConfig,
    arch: Architecture,
    clients: Vec<ClientNode>,
    /// Optimizer state lives on the client and persists across rounds.
    optimizers: Vec<RmsProp>,
    global: Model,
    completed: usize,
}

impl Federation {
    pub fn new(arch: Architecture, clients: Vec<ClientNode>, cfg: FederationConfig) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::invalid("federation needs at least one client"));
        }
        for c in &clients {
            c.validate()?;
        }
        if cfg.local_epochs == 0 {
            return Err(Error::invalid("local_epochs must be >= 1"));
        }
        let n = cfg.clients_per_round.unwrap_or(clients.len());
        if n == 0 || n > clients.len() {
            return Err(Error::invalid(format!(
                "clients_per_round must lie in 1..={}, got {n}",
                clients.len()
            )));
        }
        let global = Model::new(arch, init_seed(cfg.seed))?;
        let optimizers = clients
            .iter()
            .map(|_| RmsProp::new(cfg.train.rmsprop, global.weights()))
            .collect();
        Ok(Self {
            cfg,
            arch,
            clients,
            optimizers,
            global,
            completed: 0,
        })
    }

    pub fn global(&self) -> &Model {
        &self.global
    }

    pub fn clients(&self) -> &[ClientNode] {
        &self.clients
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn completed_rounds(&self) -> usize {
        self.completed
    }

    pub fn clients_per_round(&self) -> usize {
        self.cfg.clients_per_round.unwrap_or(self.clients.len())
    }

    /// Indices of the clients taking part in 1-based `round`, ascending.
    pub fn select_clients(&self, round: usize) -> Vec<usize> {
        select_clients(self.clients.len(), self.clients_per_round(), self.cfg.seed, round).expect("validated in new")
    }

    /// Runs the next round. On any client error the global model is untouched.
    pub fn run_round(&mut self, test: Option<&Samples>) -> Result<RoundLog> {
        let round = self.completed + 1;
        let selected = self.select_clients(round);
        let payload = encode_weights(self.global.weights());
        let tasks: Vec<ClientTask> = selected
            .iter()
            .map(|&i| ClientTask {
                index: i,
                node: &self.clients[i],
                payload: &payload,
                opt: self.optimizers[i].clone(),
            })
            .collect();
        let (arch, cfg) = (self.arch, &self.cfg);
        let results = par::map_owned(cfg.exec, tasks, |t| {
            let index = t.index;
            local_update(arch, cfg, round, t).map_err(|e| Error::Client {
                client: index,
                source: Box::new(e),
            })
        });
        let mut updates = Vec::with_capacity(results.len());
        for r in results {
            updates.push(r?);
        }
        let mut returned = Vec::with_capacity(updates.len());
        let mut loss_sum = 0.0;
        for (&i, (bytes, opt, loss)) in selected.iter().zip(updates) {
            returned.push(decode_weights(&bytes)?);
            self.optimizers[i] = opt;
            loss_sum += loss;
        }
        self.global.set_weights(fedavg(&returned)?)?;
        self.completed = round;
        if let (Some(every), Some(dir)) = (self.cfg.checkpoint_every, &self.cfg.checkpoint_dir) {
            if every > 0 && round.is_multiple_of(every) {
                std::fs::create_dir_all(dir)?;
                save_weights(self.global.weights(), dir.join(format!("round-{round:04}.mgwt")))?;
            }
        }
        let global_test_accuracy = match test {
            Some(t) => Some(accuracy(&self.global, t, self.cfg.threshold, self.cfg.exec)?),
            None => None,
        };
        Ok(RoundLog {
            round,
            selected: selected.iter().map(|&i| self.clients[i].id.clone()).collect(),
            malicious: selected.iter().filter(|&&i| self.clients[i].malicious).count(),
            mean_local_loss: loss_sum / selected.len() as f64,
            global_test_accuracy,
        })
    }

    /// Runs the remaining configured rounds.
    pub fn run(&mut self, test: Option<&Samples>) -> Result<Vec<RoundLog>> {
        let mut logs = Vec::new();
        while self.completed < self.cfg.rounds {
            logs.push(self.run_round(test)?);
        }
        Ok(logs)
    }

    pub fn into_global(self) -> Model {
        self.global
    }
}

pub fn select_clients(total: usize, per_round: usize, master_seed: u64, round: usize) -> Result<Vec<usize>> {
    if per_round == 0 || per_round > total {
        return Err(Error::invalid(format!("cannot select {per_round} of {total} clients")));
    }
    let mut rng = seed::derived_rng(master_seed, &[stream::SELECT, round as u64]);
    let mut k = index::sample(&mut rng, total, per_round).into_vec();
    k.sort_unstable();
    Ok(k)
}

/// Receive, optionally poison, train, send back.
fn local_update(
    arch: Architecture,
    cfg: &FederationConfig,
    round: usize,
    t: ClientTask,
) -> Result<(Vec<u8>, RmsProp, f64)> {
    let mut model = Model::from_weights(arch, decode_weights(t.payload)?)?;
    let node = t.node;
    let data = if node.malicious {
        let attack = AttackSpec {
            seed: seed::derive(cfg.seed, &[stream::ATTACK, round as u64, t.index as u64]),
            ..node.attack
        };
        let subset_seed = seed::derive(cfg.seed, &[stream::POISON, round as u64, t.index as u64]);
        poison(
            &node.train,
            &model,
            &attack,
            node.poison_fraction,
            subset_seed,
            &cfg.train.loss,
        )?
    } else {
        node.train.clone()
    };
    let mut opt = t.opt;
    let e = cfg.local_epochs;
    let epochs = (round - 1) * e..round * e;
    let report = run_epochs(
        &mut model,
        &data,
        &cfg.train,
        &mut opt,
        epochs,
        client_seed(cfg.seed, t.index),
    )?;
    let loss = report.final_loss().unwrap_or(f64::NAN);
    Ok((encode_weights(model.weights()), opt, loss))
}

pub fn accuracy(model: &Model, data: &Samples, threshold: f64, mode: ExecMode) -> Result<f64> {
    let pred = classify_with(model, &data.x, threshold, mode)?;
    Ok(compute_metrics(&pred, &data.y)?.accuracy)
}

/// Pooled training for `cfg.epochs` epochs. With an attack, a fresh
/// `poison_fraction` subset is perturbed against the current model at the
/// start of every epoch.
pub fn run_centralized(
    arch: Architecture,
    data: &Samples,
    cfg: &TrainConfig,
    attack: &AttackSpec,
    poison_fraction: f64,
    master_seed: u64,
) -> Result<(Model, TrainReport)> {
    attack.validate()?;
    if !(0.0..=1.0).contains(&poison_fraction) {
        return Err(Error::invalid("poison_fraction outside [0, 1]"));
    }
    let mut model = Model::new(arch, init_seed(master_seed))?;
    let mut opt = RmsProp::new(cfg.rmsprop, model.weights());
    let shuffle = client_seed(master_seed, 0);
    let clean = attack.family == AttackFamily::None || poison_fraction == 0.0;
    if clean {
        let report = run_epochs(&mut model, data, cfg, &mut opt, 0..cfg.epochs, shuffle)?;
        return Ok((model, report));
    }
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let e = epoch as u64;
        let spec = AttackSpec {
            seed: seed::derive(master_seed, &[stream::ATTACK, e, 0]),
            ..*attack
        };
        let subset_seed = seed::derive(master_seed, &[stream::POISON, e, 0]);
        let poisoned = poison(data, &model, &spec, poison_fraction, subset_seed, &cfg.loss)?;
        let r = run_epochs(&mut model, &poisoned, cfg, &mut opt, epoch..epoch + 1, shuffle)?;
        report.epoch_loss.extend(r.epoch_loss);
        report.steps += r.steps;
    }
    Ok((model, report))
}

/// One JSON object per line.
pub fn write_round_log(path: impl AsRef<Path>, logs: &[RoundLog]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for l in logs {
        serde_json::to_writer(&mut f, l)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::data::HOURS;
    use crate::models::{LrSchedule, LstmConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arch() -> Architecture {
        Architecture::Lstm(LstmConfig { hidden: 6 })
    }

    fn toy(seed: u64, n: usize) -> Samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = (i % 2) as u8;
            let base = if label == 1 { 0.8 } else { 0.2 };
            rows.push(
                (0..HOURS)
                    .map(|_| base + rng.random_range(-0.1..0.1))
                    .collect::<Vec<f64>>(),
            );
            y.push(label);
        }
        Samples {
            x: Tensor::from_rows(&rows).unwrap(),
            y,
        }
    }

    fn cfg(rounds: usize) -> FederationConfig {
        FederationConfig {
            rounds,
            train: TrainConfig {
                batch_size: 8,
                schedule: LrSchedule {
                    milestones: vec![],
                    ..LrSchedule::default()
                },
                ..TrainConfig::default()
            },
            seed: 17,
            ..FederationConfig::default()
        }
    }

    fn map(v: &[f64]) -> WeightMap {
        let mut w = WeightMap::new();
        w.insert("a", Tensor::vector(v.to_vec()));
        w
    }

    #[test]
    fn fedavg_arithmetic() {
        let w = map(&[1.5, -2.0]);
        assert_eq!(fedavg(std::slice::from_ref(&w)).unwrap(), w);
        assert_eq!(fedavg(&[w.clone(), w.clone()]).unwrap(), w);
        assert_eq!(fedavg(&[map(&[2.0]), map(&[4.0]), map(&[6.0])]).unwrap(), map(&[4.0]));
        let neg = w.scaled(-1.0);
        assert!(fedavg(&[w.clone(), neg])
            .unwrap()
            .iter()
            .all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
        assert!(fedavg(&[w, map(&[1.0])]).is_err());
        assert!(fedavg(&[]).is_err());
    }

    #[test]
    fn selection_rules() {
        assert_eq!(select_clients(5, 5, 1, 3).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(
            select_clients(19, 10, 4, 7).unwrap(),
            select_clients(19, 10, 4, 7).unwrap()
        );
        let k = select_clients(19, 10, 4, 8).unwrap();
        assert_eq!(k.len(), 10);
        assert!(k.windows(2).all(|w| w[0] < w[1]));
        assert!(select_clients(3, 4, 0, 1).is_err());
    }

    #[test]
    fn selection_frequency_is_binomial() {
        let rounds = 1000;
        let mut counts = [0usize; 19];
        for r in 1..=rounds {
            for i in select_clients(19, 10, 0, r).unwrap() {
                counts[i] += 1;
            }
        }
        let p = 10.0 / 19.0;
        let mean = rounds as f64 * p;
        let sd = (rounds as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sd, "{c} vs {mean} ± {sd}: {counts:?}");
        }
    }

    #[test]
    fn identical_clients_average_to_any_one_of_them() {
        // one full batch per epoch, so the per-client shuffle only reorders
        // the batch sum
        let data = toy(1, 24);
        let mut c = cfg(1);
        c.train.batch_size = 24;
        let clients = (0..3)
            .map(|i| ClientNode::honest(format!("c{i}"), data.clone()))
            .collect();
        let mut fed = Federation::new(arch(), clients, c.clone()).unwrap();
        fed.run_round(None).unwrap();
        let mut single = Model::new(arch(), init_seed(17)).unwrap();
        let mut opt = RmsProp::new(c.train.rmsprop, single.weights());
        run_epochs(&mut single, &data, &c.train, &mut opt, 0..1, client_seed(17, 0)).unwrap();
        for ((_, a), (_, b)) in fed.global().weights().iter().zip(single.weights().iter()) {
            assert!(a.max_abs_diff(b) < 1e-12);
        }
    }

    #[test]
    fn single_client_federation_is_pooled_training() {
        let data = toy(2, 20);
        let mut c = cfg(4);
        c.clients_per_round = Some(1);
        let mut fed = Federation::new(arch(), vec![ClientNode::honest("solo", data.clone())], c.clone()).unwrap();
        fed.run(None).unwrap();
        let central_cfg = TrainConfig {
            epochs: 4,
            ..c.train.clone()
        };
        let (central, _) = run_centralized(arch(), &data, &central_cfg, &AttackSpec::none(), 0.3, 17).unwrap();
        assert_eq!(fed.global().weights(), central.weights());
    }

    #[test]
    fn zero_poison_is_clean_training() {
        let data = toy(3, 20);
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (a, _) = run_centralized(arch(), &data, &tc, &AttackSpec::none(), 0.3, 5).unwrap();
        let (b, _) = run_centralized(arch(), &data, &tc, &AttackSpec::of(AttackFamily::Fgsm), 0.0, 5).unwrap();
        assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn zero_malicious_matches_attack_free() {
        let data = toy(4, 16);
        let honest: Vec<ClientNode> = (0..3)
            .map(|i| ClientNode::honest(format!("c{i}"), data.clone()))
            .collect();
        let mut zero_poison = honest.clone();
        zero_poison[1] = ClientNode::malicious("c1", data.clone(), AttackSpec::of(AttackFamily::Pgd), 0.0);
        let mut a = Federation::new(arch(), honest, cfg(2)).unwrap();
        let mut b = Federation::new(arch(), zero_poison, cfg(2)).unwrap();
        a.run(None).unwrap();
        b.run(None).unwrap();
        assert_eq!(a.global().weights(), b.global().weights());
    }

    #[test]
    fn modes_prefixes_and_confinement() {
        let clients: Vec<ClientNode> = (0..4)
            .map(|i| {
                let d = toy(10 + i, 16);
                if i % 2 == 0 {
                    ClientNode::malicious(format!("c{i}"), d, AttackSpec::of(AttackFamily::Fgsm), 0.3)
                } else {
                    ClientNode::honest(format!("c{i}"), d)
                }
            })
            .collect();
        let before: Vec<Samples> = clients.iter().map(|c| c.train.clone()).collect();
        let test = toy(50, 20);
        let run = |mode: ExecMode, rounds: usize| {
            let mut c = cfg(rounds);
            c.exec = mode;
            c.clients_per_round = Some(3);
            let mut fed = Federation::new(arch(), clients.clone(), c).unwrap();
            let logs = fed.run(Some(&test)).unwrap();
            (fed.global().weights().fingerprint(), logs, fed)
        };
        let (seq, seq_logs, fed) = run(ExecMode::Sequential, 3);
        let (par, par_logs, _) = run(ExecMode::Parallel, 3);
        assert_eq!(seq, par);
        assert_eq!(seq_logs, par_logs);
        let (_, long_logs, _) = run(ExecMode::Sequential, 6);
        assert_eq!(&long_logs[..3], &seq_logs[..]);
        for (c, b) in fed.clients().iter().zip(&before) {
            assert_eq!(&c.train, b);
        }
        assert!(seq_logs
            .iter()
            .all(|l| l.selected.len() == 3 && l.global_test_accuracy.is_some()));
    }

    #[test]
    fn poisoning_touches_the_requested_share() {
        let data = toy(5, 40);
        let m = Model::new(arch(), 0).unwrap();
        let l = FocalLoss::default();
        let flipped = poison(&data, &m, &AttackSpec::of(AttackFamily::LabelFlip), 0.3, 9, &l).unwrap();
        assert_eq!(flipped.x, data.x);
        assert_eq!(flipped.y.iter().zip(&data.y).filter(|(a, b)| a != b).count(), 12);
        let noisy = poison(&data, &m, &AttackSpec::of(AttackFamily::Awgn), 0.3, 9, &l).unwrap();
        assert_eq!(noisy.y, data.y);
        let changed = (0..40).filter(|&i| noisy.x.row(i) != data.x.row(i)).count();
        assert_eq!(changed, 12);
    }

    #[test]
    fn federated_training_learns_the_toy_task() {
        let clients = (0..3)
            .map(|i| ClientNode::honest(format!("c{i}"), toy(20 + i, 24)))
            .collect();
        let mut fed = Federation::new(arch(), clients, cfg(15)).unwrap();
        fed.run(None).unwrap();
        let all = Samples::concat(&[&toy(20, 24), &toy(21, 24), &toy(22, 24)]);
        assert!(accuracy(fed.global(), &all, 0.5, ExecMode::Sequential).unwrap() >= 0.99);
    }

    #[test]
    fn malicious_assignment() {
        let f = assign_malicious(19, 9, 3).unwrap();
        assert_eq!(f.iter().filter(|&&m| m).count(), 9);
        assert_eq!(f, assign_malicious(19, 9, 3).unwrap());
        assert!(assign_malicious(19, 20, 3).is_err());
        let small = assign_malicious(19, 4, 3).unwrap();
        assert!(small.iter().zip(&f).all(|(&s, &l)| !s || l));
    }

    #[test]
    fn bad_clients_are_rejected() {
        let mut c = ClientNode::honest("x", toy(1, 4));
        c.attack = AttackSpec::of(AttackFamily::Fgsm);
        assert!(Federation::new(arch(), vec![c], cfg(1)).is_err());
    }

    #[test]
    fn round_log_is_json_lines() {
        let dir = tempfile::tempdir().unwrap();
        let logs = vec![
            RoundLog {
                round: 1,
                selected: vec!["a".into()],
                malicious: 0,
                mean_local_loss: 0.5,
                global_test_accuracy: Some(0.9),
            },
            RoundLog {
                round: 2,
                selected: vec!["b".into()],
                malicious: 1,
                mean_local_loss: 0.25,
                global_test_accuracy: None,
            },
        ];
        let p = dir.path().join("r.jsonl");
        write_round_log(&p, &logs).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let back: Vec<RoundLog> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(back, logs);
    }
}
