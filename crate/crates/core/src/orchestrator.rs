//! The federated loop of Algorithm 1: select → local training → FedAvg →
//! attribution and scoring → bandit update → simulated clock, plus the trace
//! and summary artifacts of a run.

use std::io::Write;
use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, sample_negatives, DatasetSplit, InteractionLog, ModalityBundle};
use crate::error::{Error, Result};
use crate::metrics::{self, auc_user, EvalMetrics};
use crate::partition::{assign_users, ubi_of_counts, PartitionAssignment, PartitionStrategy, PortionVector};
use crate::recmodel::{train_local, ClientData, HyperParams, LocalUpdate, ModelParams, Scorer};
use crate::rng::{self, domain};
use crate::selection::{index_probabilities, per_arm_reward, round_reward, PolicyConfig, PolicyKind, SelectionContext, SelectionPolicy};
use crate::sysmodel::{self, default_fleet, estimate_latency, ClientProfile, LatencyEstimate};
use crate::utility::{build_observations, data_quality, delta_deviation, ReputationLedger, RoundContribution, UtilityWeights};

/// Dataset inputs and the evaluation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// MovieLens `u.data` path (relative paths resolve against the working
    /// directory).
    pub ratings: PathBuf,
    /// Optional binary feature file; synthetic features when absent.
    pub features: Option<PathBuf>,
    /// Fraction of each user's interactions (earliest first) used for training.
    pub split_ratio: f64,
    /// Fraction of each user's train positives held out on the server for
    /// `Q` attribution.
    pub validation_fraction: f64,
    /// Sampled negatives per user in the validation AUC.
    pub validation_negatives: usize,
    /// Cut-off K of NDCG/Recall/Precision/F1.
    pub top_k: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            ratings: PathBuf::from("data/ml-100k/u.data"),
            features: None,
            split_ratio: 0.8,
            validation_fraction: 0.1,
            validation_negatives: 100,
            top_k: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub strategy: PartitionStrategy,
    /// Target user balance index.
    pub ubi: f64,
}

impl PartitionConfig {
    /// Portion vector for `n` clients; a single client holds everything
    /// (degenerate K = N = 1 federation).
    pub fn portions(&self, n: usize) -> Result<PortionVector> {
        if n == 1 {
            PortionVector::new(vec![1.0])
        } else {
            self.strategy.portions(n, self.ubi)
        }
    }
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            strategy: PartitionStrategy::Exponential,
            ubi: 0.0146,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Inline fleet; the Table II fleet when both this and `fleet_path` are absent.
    pub fleet: Option<Vec<ClientProfile>>,
    pub fleet_path: Option<PathBuf>,
    /// Samples per GHz-core-second.
    pub calibration: f64,
    /// 2 counts the downlink broadcast alongside the uplink delta.
    pub comm_multiplier: f64,
    /// Fixed semi-asynchronous boundary in seconds; derived when absent.
    pub t_semi: Option<f64>,
    /// Derived `T_semi` = factor × median K-subset round latency.
    pub t_semi_factor: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            fleet: None,
            fleet_path: None,
            calibration: sysmodel::DEFAULT_CALIBRATION,
            comm_multiplier: 2.0,
            t_semi: None,
            t_semi_factor: 1.5,
        }
    }
}

/// How `Q_t^i` is attributed to a selected client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QMode {
    /// Validation AUC of `global + delta_i` alone.
    #[default]
    Marginal,
    /// Every selected client gets the post-aggregation validation AUC.
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStop {
    /// Consecutive evaluations without an AUC gain of `min_delta`; 0 disables.
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            patience: 20,
            min_delta: 1e-4,
        }
    }
}

/// Everything that determines a run. Serialised verbatim as the config echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub rounds: usize,
    pub target_auc: f64,
    /// Test-set evaluation every this many rounds (the final round is
    /// always evaluated).
    pub eval_every: usize,
    /// End the run at the first evaluation reaching `target_auc`.
    pub stop_at_target: bool,
    pub early_stop: EarlyStop,
    pub q_mode: QMode,
    pub data: DataConfig,
    pub partition: PartitionConfig,
    pub system: SystemConfig,
    pub model: HyperParams,
    pub utility: UtilityWeights,
    pub policy: PolicyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            rounds: 300,
            target_auc: 0.80,
            eval_every: 1,
            stop_at_target: false,
            early_stop: EarlyStop::default(),
            q_mode: QMode::default(),
            data: DataConfig::default(),
            partition: PartitionConfig::default(),
            system: SystemConfig::default(),
            model: HyperParams::default(),
            utility: UtilityWeights::default(),
            policy: PolicyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// The fleet this run simulates.
    pub fn fleet(&self) -> Result<Vec<ClientProfile>> {
        let fleet = match (&self.system.fleet, &self.system.fleet_path) {
            (Some(_), Some(_)) => return Err(Error::invalid("set at most one of system.fleet and system.fleet_path")),
            (Some(f), None) => f.clone(),
            (None, Some(p)) => sysmodel::load_fleet(p)?,
            (None, None) => default_fleet(),
        };
        if fleet.is_empty() {
            return Err(Error::Empty("the fleet has no clients".into()));
        }
        for p in &fleet {
            p.validate()?;
        }
        Ok(fleet)
    }

    /// Checks everything that does not need the dataset.
    pub fn validate(&self) -> Result<()> {
        let fleet = self.fleet()?;
        self.model.validate()?;
        self.utility.validate()?;
        self.policy.validate(fleet.len())?;
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.target_auc) {
            return Err(Error::invalid("target_auc must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.data.validation_fraction) {
            return Err(Error::invalid("data.validation_fraction must lie in [0, 1)"));
        }
        if self.q_mode == QMode::Marginal && self.data.validation_fraction == 0.0 {
            return Err(Error::invalid("marginal Q attribution needs a validation slice"));
        }
        if self.data.top_k == 0 {
            return Err(Error::invalid("data.top_k must be >= 1"));
        }
        if !(self.system.calibration > 0.0) || !(self.system.comm_multiplier >= 0.0) || !(self.system.t_semi_factor > 0.0) {
            return Err(Error::invalid("system calibration, comm_multiplier and t_semi_factor must be positive"));
        }
        if let Some(t) = self.system.t_semi {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::invalid("system.t_semi must be positive"));
            }
        }
        if !(self.early_stop.min_delta >= 0.0) {
            return Err(Error::invalid("early_stop.min_delta must be >= 0"));
        }
        // Portion validity depends only on (N, ubi).
        self.partition.portions(fleet.len())?;
        Ok(())
    }
}

/// `global + Σ_i (|B_i| / Σ_j |B_j|) · delta_i`, accumulated in the given
/// (client-id) order.
pub fn fedavg_aggregate(global: &ModelParams, updates: &[&LocalUpdate]) -> Result<ModelParams> {
    if updates.is_empty() {
        return Err(Error::Empty("fedavg_aggregate needs at least one update".into()));
    }
    let total: usize = updates.iter().map(|u| u.num_samples).sum();
    if total == 0 {
        return Err(Error::invalid("updates carry no samples"));
    }
    let mut out = global.clone();
    if updates.iter().all(|u| u.delta.data().iter().all(|&v| v == 0.0)) {
        // Keeps the model bit-identical (e.g. no -0.0 sign flips).
        if updates.iter().any(|u| u.delta.len() != global.len()) {
            return Err(Error::shape("update delta does not match the global model"));
        }
        return Ok(out);
    }
    let mut acc = vec![0.0; global.len()];
    for u in updates {
        if u.delta.len() != global.len() || u.delta.layout() != global.layout() {
            return Err(Error::shape("update delta does not match the global model"));
        }
        let w = u.num_samples as f64 / total as f64;
        for (a, d) in acc.iter_mut().zip(u.delta.data()) {
            *a += w * d;
        }
    }
    for (g, a) in out.data_mut().iter_mut().zip(acc) {
        *g += a;
    }
    Ok(out)
}

/// Server-held validation slice: per user, held-out train positives plus
/// fixed sampled negatives.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub users: Vec<(u32, Vec<u32>, Vec<u32>)>,
}

impl ValidationSet {
    /// Macro-averaged sampled AUC of `params`.
    pub fn auc(&self, params: &ModelParams, features: &ModalityBundle) -> Result<f64> {
        let scorer = Scorer::new(params, features)?;
        let per_user: Vec<Option<f64>> = self
            .users
            .par_iter()
            .map_init(
                || (Vec::new(), Vec::new()),
                |(ps, ns), (u, pos, neg)| {
                    scorer.score_items(*u, pos, ps);
                    scorer.score_items(*u, neg, ns);
                    auc_user(ps, ns)
                },
            )
            .collect();
        let vals: Vec<f64> = per_user.into_iter().flatten().collect();
        if vals.is_empty() {
            return Ok(0.5);
        }
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Per-client columns of one round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientRound {
    pub selected: bool,
    /// Decision-time index value.
    pub index: f64,
    /// Softmax-of-indices probability (analysis only).
    pub prob: f64,
    pub score: f64,
    pub relevance: f64,
    pub reputation: f64,
    pub gain: f64,
    pub quality_norm: f64,
    pub t_train: f64,
    pub t_comm: f64,
    /// Marginal (or shared) validation AUC attributed this round.
    pub q: Option<f64>,
    /// Per-arm reward fed to the policy.
    pub reward: Option<f64>,
}

/// One row of the experiment trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: u64,
    pub selected: Vec<usize>,
    pub t_round: f64,
    /// `T_round / T_semi`.
    pub t_norm: f64,
    pub round_reward: f64,
    /// Simulated clock after the round.
    pub clock: f64,
    /// Validation AUC of the aggregated model, `Q_t`.
    pub val_auc: f64,
    /// `Σ_i (|B_i|/Σ|B|) Q_t^i` over the selected clients.
    pub val_auc_weighted: f64,
    pub eval: Option<EvalMetrics>,
    pub clients: Vec<ClientRound>,
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    EarlyStop,
    TargetReached,
}

/// End-of-run report. Its Table III columns are `total_time`,
/// `time_to_target`, `final_metrics.auc`, `final_metrics.ndcg` and
/// `final_metrics.recall`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub config: RunConfig,
    pub config_hash: String,
    pub rounds_run: usize,
    pub stop_reason: StopReason,
    pub initial_metrics: EvalMetrics,
    pub final_metrics: EvalMetrics,
    pub best_auc: f64,
    pub target_auc: f64,
    pub time_to_target: Option<f64>,
    pub total_time: f64,
    pub t_semi: f64,
    pub num_params: usize,
    pub payload_bytes: u64,
    pub client_interactions: Vec<usize>,
    pub client_train_samples: Vec<usize>,
    pub realized_ubi: f64,
    pub pulls: Vec<u64>,
}

/// A finished run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub summary: Summary,
}

/// Mutable state of a run in progress.
pub struct RunState {
    pub global: ModelParams,
    pub ledger: ReputationLedger,
    pub policy: SelectionPolicy,
    pub clock: f64,
    pub q_prev: f64,
    latest_deltas: Vec<Option<Vec<f64>>>,
}

/// A prepared run: data split, partition, validation slice and simulated
/// fleet, all derived deterministically from the config.
pub struct Experiment {
    pub config: RunConfig,
    pub split: DatasetSplit,
    pub features: ModalityBundle,
    pub assignment: PartitionAssignment,
    /// `(user, item)` training pairs per client (validation slice removed).
    pub client_samples: Vec<Vec<(u32, u32)>>,
    pub validation: ValidationSet,
    pub fleet: Vec<ClientProfile>,
    pub latencies: Vec<LatencyEstimate>,
    pub t_semi: f64,
    num_users: usize,
    num_items: usize,
}

/// Short stable digest of a config's canonical JSON.
pub fn config_hash(config: &RunConfig) -> Result<String> {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_string(config)?;
    Ok(hex::encode(&Sha256::digest(json.as_bytes())[..6]))
}

/// Rounds to 6 decimals, the precision of every emitted metric.
fn r6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn round_metrics(m: EvalMetrics) -> EvalMetrics {
    EvalMetrics {
        auc: r6(m.auc),
        ndcg: r6(m.ndcg),
        recall: r6(m.recall),
        precision: r6(m.precision),
        f1: r6(m.f1),
        users: m.users,
    }
}

impl Experiment {
    /// Loads the ratings (and optional feature file) named by the config.
    pub fn from_config(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let log = dataset::load_movielens(&config.data.ratings)?;
        let features = config.data.features.as_ref().map(ModalityBundle::load).transpose()?;
        Self::prepare(config, &log, features)
    }

    /// Builds a run from an in-memory log; synthetic features are generated
    /// when `features` is `None`.
    pub fn prepare(config: RunConfig, log: &InteractionLog, features: Option<ModalityBundle>) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let (m, n) = (log.num_users(), log.num_items());
        let features = match features {
            Some(f) => f,
            None => dataset::synth_features(
                rng::derive_seed(seed, &[domain::FEATURES]),
                config.model.text_dim,
                config.model.image_dim,
                n,
            )?,
        };
        if features.num_items() != n || features.text_dim() != config.model.text_dim || features.image_dim() != config.model.image_dim {
            return Err(Error::shape(format!(
                "features are {}×({}, {}) but the run needs {}×({}, {})",
                features.num_items(),
                features.text_dim(),
                features.image_dim(),
                n,
                config.model.text_dim,
                config.model.image_dim
            )));
        }
        let split = dataset::split_per_user(log, config.data.split_ratio, seed)?;
        let fleet = config.fleet()?;
        let portions = config.partition.portions(fleet.len())?;
        let assignment = assign_users(log, &portions, rng::derive_seed(seed, &[domain::PARTITION]))?;

        // Validation slice: a seeded fraction of every user's train positives.
        let mut validation = Vec::new();
        let mut client_pos: Vec<Vec<u32>> = Vec::with_capacity(m);
        for (u, items) in split.train.iter().enumerate() {
            let mut r = rng::stream(seed, &[domain::VALIDATION, u as u64]);
            let held = ((config.data.validation_fraction * items.len() as f64).round() as usize).min(items.len().saturating_sub(1));
            let mut val: Vec<u32> = items.choose_multiple(&mut r, held).copied().collect();
            val.sort_unstable();
            client_pos.push(items.iter().copied().filter(|i| val.binary_search(i).is_err()).collect());
            if !val.is_empty() {
                let negs = sample_negatives(items, n, config.data.validation_negatives, &mut r)?;
                validation.push((u as u32, val, negs));
            }
        }
        let client_samples: Vec<Vec<(u32, u32)>> = assignment
            .client_users
            .iter()
            .map(|users| users.iter().flat_map(|&u| client_pos[u as usize].iter().map(move |&i| (u, i))).collect())
            .collect();
        if let Some(c) = client_samples.iter().position(Vec::is_empty) {
            return Err(Error::Client {
                client: c,
                msg: "no training interactions after the split".into(),
            });
        }

        let payload = crate::recmodel::Layout::new(&config.model, m, n)?.payload_bytes();
        let latencies = fleet
            .iter()
            .zip(&client_samples)
            .map(|(p, s)| {
                estimate_latency(
                    p,
                    (s.len() * config.model.local_epochs) as f64,
                    payload,
                    config.system.calibration,
                    config.system.comm_multiplier,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let t_semi = match config.system.t_semi {
            Some(t) => t,
            None => sysmodel::semi_boundary(
                &latencies.iter().map(LatencyEstimate::total).collect::<Vec<_>>(),
                config.policy.k.min(fleet.len()),
                config.system.t_semi_factor,
            )?,
        };
        Ok(Self {
            split,
            features,
            assignment,
            client_samples,
            validation: ValidationSet { users: validation },
            fleet,
            latencies,
            t_semi,
            num_users: m,
            num_items: n,
            config,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.fleet.len()
    }

    /// Fresh state: initial model, empty ledger, fresh arms, clock 0.
    pub fn start(&self) -> Result<RunState> {
        let seed = self.config.seed;
        let global = ModelParams::init(&self.config.model, self.num_users, self.num_items, rng::derive_seed(seed, &[domain::INIT]))?;
        let q_prev = self.validation.auc(&global, &self.features)?;
        Ok(RunState {
            ledger: ReputationLedger::new(self.num_clients()),
            policy: SelectionPolicy::new(self.config.policy, self.num_clients(), rng::stream(seed, &[domain::POLICY]))?,
            clock: 0.0,
            q_prev,
            latest_deltas: vec![None; self.num_clients()],
            global,
        })
    }

    /// Test-set ranking metrics of `params`.
    pub fn evaluate(&self, params: &ModelParams) -> Result<EvalMetrics> {
        let scorer = Scorer::new(params, &self.features)?;
        metrics::evaluate_full_ranking(&scorer, &self.split, self.config.data.top_k)
    }

    /// Executes round `t ≥ 1` (Algorithm 1 lines 4–12). `evaluate` controls
    /// whether test metrics are computed for the record.
    pub fn run_round(&self, state: &mut RunState, t: u64, evaluate: bool) -> Result<RoundRecord> {
        let cfg = &self.config;
        let n = self.num_clients();
        let totals: Vec<f64> = self.latencies.iter().map(LatencyEstimate::total).collect();
        let scores: Vec<f64> = state.ledger.records().iter().map(|r| r.score).collect();
        let delta_views: Vec<Option<&[f64]>> = state.latest_deltas.iter().map(|d| d.as_deref()).collect();
        let ctx = SelectionContext {
            scores: &scores,
            latencies: &totals,
            t_semi: self.t_semi,
            kappa: cfg.utility.kappa,
            deltas: &delta_views,
        };
        let selection = state.policy.select(t, &ctx)?;
        let probs = index_probabilities(&selection.indices);

        // Local training fan-out; streams keyed by (round, client) so the
        // result does not depend on scheduling.
        let seed = cfg.seed;
        let updates: Vec<LocalUpdate> = selection
            .selected
            .par_iter()
            .map(|&c| {
                let data = ClientData {
                    samples: &self.client_samples[c],
                    positives: &self.split.train,
                };
                let mut r = rng::stream(seed, &[domain::LOCAL_TRAIN, t, c as u64]);
                train_local(&state.global, &data, &self.features, &cfg.model, &mut r).map_err(|e| Error::Client {
                    client: c,
                    msg: format!("round {t}: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&LocalUpdate> = updates.iter().collect();
        let next = fedavg_aggregate(&state.global, &refs)?;
        let q_global = self.validation.auc(&next, &self.features)?;

        let q_clients: Vec<f64> = match cfg.q_mode {
            QMode::Shared => vec![q_global; updates.len()],
            QMode::Marginal => updates
                .iter()
                .map(|u| {
                    let mut solo = state.global.clone();
                    solo.add_scaled(1.0, &u.delta)?;
                    self.validation.auc(&solo, &self.features)
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let improved = q_global > state.q_prev;
        for ((&c, u), &q) in selection.selected.iter().zip(&updates).zip(&q_clients) {
            let contribution = RoundContribution {
                q_client: q,
                deviation: delta_deviation(u.delta.data())?,
                quality_raw: data_quality(&u.losses),
            };
            state.ledger.update(c, contribution, state.q_prev, improved, &cfg.utility)?;
        }
        state.ledger.refresh(&selection.selected, &cfg.utility);

        let rewards: Vec<(usize, f64)> = selection
            .selected
            .iter()
            .map(|&c| {
                let s = state.ledger.records()[c].score;
                (c, per_arm_reward(s, totals[c] / self.t_semi, cfg.utility.kappa))
            })
            .collect();
        state.policy.observe(t, &rewards)?;

        let selected_lat: Vec<LatencyEstimate> = selection.selected.iter().map(|&c| self.latencies[c]).collect();
        let t_round = sysmodel::round_time(&selected_lat)?;
        let t_norm = sysmodel::normalized_time(t_round, self.t_semi)?;
        let sel_scores: Vec<f64> = selection.selected.iter().map(|&c| state.ledger.records()[c].score).collect();
        let rr = round_reward(&sel_scores, t_round, self.t_semi, cfg.utility.kappa)?;
        state.clock += t_round;

        let observations = build_observations(&state.ledger, &self.latencies)?;
        for &c in &selection.selected {
            state.ledger.push_observation(c, observations[c])?;
        }
        if cfg.policy.kind == PolicyKind::Cluster {
            for (&c, u) in selection.selected.iter().zip(&updates) {
                state.latest_deltas[c] = Some(u.delta.data().to_vec());
            }
        }
        let total_b: usize = updates.iter().map(|u| u.num_samples).sum();
        let val_auc_weighted = updates
            .iter()
            .zip(&q_clients)
            .map(|(u, q)| u.num_samples as f64 / total_b as f64 * q)
            .sum();

        state.global = next;
        state.q_prev = q_global;
        let eval = if evaluate { Some(self.evaluate(&state.global)?) } else { None };

        let clients = (0..n)
            .map(|c| {
                let rec = &state.ledger.records()[c];
                let pos = selection.selected.iter().position(|&s| s == c);
                ClientRound {
                    selected: pos.is_some(),
                    index: selection.indices[c],
                    prob: probs[c],
                    score: rec.score,
                    relevance: rec.relevance,
                    reputation: rec.reputation,
                    gain: rec.gain,
                    quality_norm: rec.quality_norm,
                    t_train: self.latencies[c].t_train,
                    t_comm: self.latencies[c].t_comm,
                    q: pos.map(|p| q_clients[p]),
                    reward: pos.map(|p| rewards[p].1),
                }
            })
            .collect();
        Ok(RoundRecord {
            round: t,
            selected: selection.selected,
            t_round,
            t_norm,
            round_reward: rr,
            clock: state.clock,
            val_auc: q_global,
            val_auc_weighted,
            eval,
            clients,
        })
    }

    /// Runs up to `rounds` rounds with early stopping and returns the trace
    /// and summary.
    pub fn run(&self) -> Result<RunOutput> {
        let cfg = &self.config;
        let mut state = self.start()?;
        let initial = self.evaluate(&state.global)?;
        let mut records = Vec::with_capacity(cfg.rounds);
        let mut best = initial.auc;
        let mut stale = 0usize;
        let mut last_eval = initial;
        let mut stop_reason = StopReason::Completed;
        for t in 1..=cfg.rounds as u64 {
            let evaluate = t % cfg.eval_every as u64 == 0 || t == cfg.rounds as u64;
            let rec = self.run_round(&mut state, t, evaluate)?;
            let eval = rec.eval;
            records.push(rec);
            if let Some(e) = eval {
                last_eval = e;
                if e.auc >= best + cfg.early_stop.min_delta {
                    stale = 0;
                } else {
                    stale += 1;
                }
                best = best.max(e.auc);
                if cfg.stop_at_target && e.auc >= cfg.target_auc {
                    stop_reason = StopReason::TargetReached;
                    break;
                }
                if cfg.early_stop.patience > 0 && stale >= cfg.early_stop.patience {
                    stop_reason = StopReason::EarlyStop;
                    break;
                }
            }
        }
        // Make sure the reported final metrics describe the final model.
        if records.last().is_some_and(|r| r.eval.is_none()) {
            last_eval = self.evaluate(&state.global)?;
            records.last_mut().expect("non-empty").eval = Some(last_eval);
        }
        let mut points = vec![(0.0, Some(initial.auc))];
        points.extend(records.iter().map(|r| (r.clock, r.eval.map(|e| e.auc))));
        let counts = self.assignment.counts();
        let summary = Summary {
            config_hash: config_hash(cfg)?,
            config: cfg.clone(),
            rounds_run: records.len(),
            stop_reason,
            initial_metrics: round_metrics(initial),
            final_metrics: round_metrics(last_eval),
            best_auc: r6(best),
            target_auc: cfg.target_auc,
            time_to_target: metrics::time_to_target(&points, cfg.target_auc).map(r6),
            total_time: r6(state.clock),
            t_semi: r6(self.t_semi),
            num_params: state.global.len(),
            payload_bytes: state.global.layout().payload_bytes(),
            client_train_samples: self.client_samples.iter().map(Vec::len).collect(),
            realized_ubi: r6(ubi_of_counts(&counts)?),
            client_interactions: counts,
            pulls: state.policy.arms().iter().map(|a| a.pulls()).collect(),
        };
        Ok(RunOutput { records, summary })
    }
}

/// Loads data per the config and runs it end to end.
pub fn run_experiment(config: &RunConfig) -> Result<RunOutput> {
    Experiment::from_config(config.clone())?.run()
}

/// Per-client column suffixes of the trace, in order.
pub const CLIENT_COLUMNS: [&str; 12] = [
    "sel", "index", "prob", "S", "U", "R", "delta", "Dn", "t_train", "t_comm", "Q", "reward",
];

/// Fixed leading columns of the trace.
pub const TRACE_COLUMNS: [&str; 13] = [
    "round",
    "selected",
    "t_round",
    "t_norm",
    "round_reward",
    "clock",
    "val_auc",
    "val_auc_weighted",
    "auc",
    "ndcg",
    "recall",
    "precision",
    "f1",
];

fn f6(x: f64) -> String {
    let s = format!("{x:.6}");
    // Avoid "-0.000000", which would differ from an exact 0 only by sign.
    if s.trim_start_matches('-').bytes().all(|b| b == b'0' || b == b'.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

fn opt6(x: Option<f64>) -> String {
    x.map(f6).unwrap_or_default()
}

/// Writes the trace CSV: [`TRACE_COLUMNS`] then, per client `i`,
/// `c{i}_{suffix}` for every [`CLIENT_COLUMNS`] suffix. Reals use 6 decimals;
/// missing values are empty.
pub fn write_trace_csv<W: Write>(records: &[RoundRecord], num_clients: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = TRACE_COLUMNS.iter().map(|s| s.to_string()).collect();
    for c in 0..num_clients {
        header.extend(CLIENT_COLUMNS.iter().map(|s| format!("c{c}_{s}")));
    }
    w.write_record(&header)?;
    for r in records {
        let sel: Vec<String> = r.selected.iter().map(usize::to_string).collect();
        let mut row = vec![
            r.round.to_string(),
            sel.join(";"),
            f6(r.t_round),
            f6(r.t_norm),
            f6(r.round_reward),
            f6(r.clock),
            f6(r.val_auc),
            f6(r.val_auc_weighted),
            opt6(r.eval.map(|e| e.auc)),
            opt6(r.eval.map(|e| e.ndcg)),
            opt6(r.eval.map(|e| e.recall)),
            opt6(r.eval.map(|e| e.precision)),
            opt6(r.eval.map(|e| e.f1)),
        ];
        for c in &r.clients {
            row.extend([
                u8::from(c.selected).to_string(),
                f6(c.index),
                f6(c.prob),
                f6(c.score),
                f6(c.relevance),
                f6(c.reputation),
                f6(c.gain),
                f6(c.quality_norm),
                f6(c.t_train),
                f6(c.t_comm),
                opt6(c.q),
                opt6(c.reward),
            ]);
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<trace>", e))?;
    Ok(())
}
