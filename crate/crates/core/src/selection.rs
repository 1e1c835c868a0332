//! Participant-selection policies: the UCB family (stationary, discounted,
//! sliding-window), uniform random, a PCA + k-means clustering baseline, and
//! greedy / exhaustive solvers of the Eq. (16) objective.

use std::cmp::Ordering;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, Matrix};
use crate::rng::Stream;

/// Bandit statistics of one client.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pulls: u64,
    /// Running sum of rewards; the mean is `sum / pulls`, which is the
    /// running-mean recursion `μ ← (μ·n + r)/(n+1)` without drift.
    sum: f64,
    /// `(round, reward)` per pull.
    history: Vec<(u64, f64)>,
}

impl ArmState {
    pub fn new() -> Self {
        Self::default()
    }

    /// An arm that has already been pulled `pulls` times with mean `mean`
    /// (history unknown).
    pub fn with_stats(pulls: u64, mean: f64) -> Self {
        Self {
            pulls,
            sum: mean * pulls as f64,
            history: Vec::new(),
        }
    }

    pub fn pulls(&self) -> u64 {
        self.pulls
    }

    pub fn mean(&self) -> f64 {
        if self.pulls == 0 {
            0.0
        } else {
            self.sum / self.pulls as f64
        }
    }

    pub fn history(&self) -> &[(u64, f64)] {
        &self.history
    }

    /// In-place form of [`update_arm`].
    pub fn record(&mut self, round: u64, r: f64) -> Result<()> {
        if !r.is_finite() {
            return Err(Error::NonFinite(format!("reward {r}")));
        }
        self.pulls += 1;
        self.sum += r;
        self.history.push((round, r));
        Ok(())
    }
}

/// Mean update with reward `r` observed at `round`.
pub fn update_arm(arm: &ArmState, round: u64, r: f64) -> Result<ArmState> {
    let mut next = arm.clone();
    next.record(round, r)?;
    Ok(next)
}

/// `μ̂ + ρ·sqrt(ln t / (n + 1))`.
pub fn ucb_index(arm: &ArmState, t: u64, rho: f64) -> f64 {
    ucb_from(arm.mean(), arm.pulls as f64, t, rho)
}

fn ucb_from(mean: f64, count: f64, t: u64, rho: f64) -> f64 {
    let t = t.max(1) as f64;
    mean + rho * (t.ln() / (count + 1.0)).sqrt()
}

/// How a non-stationary variant forgets old rewards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NonStationary {
    /// Weight `γ^{t−s}` on the reward from round `s`.
    Discounted(f64),
    /// Only the last `W` pulls; `None` means unbounded.
    Window(Option<usize>),
}

/// Weighted mean and effective pull count of `history` under `mode` at
/// round `t`. Both are 0 for an empty history.
pub fn nonstationary_stats(history: &[(u64, f64)], mode: NonStationary, t: u64) -> (f64, f64) {
    match mode {
        NonStationary::Discounted(g) => {
            // Horner-style accumulation keeps γ = 1 bit-identical to the plain sum.
            let (mut acc, mut weight, mut last) = (0.0, 0.0, None::<u64>);
            for &(s, r) in history {
                if let Some(prev) = last {
                    let f = g.powf(s.saturating_sub(prev) as f64);
                    acc *= f;
                    weight *= f;
                }
                acc += r;
                weight += 1.0;
                last = Some(s);
            }
            if let Some(prev) = last {
                let f = g.powf(t.saturating_sub(prev) as f64);
                acc *= f;
                weight *= f;
            }
            if weight > 0.0 {
                (acc / weight, weight)
            } else {
                (0.0, 0.0)
            }
        }
        NonStationary::Window(w) => {
            let start = w.map_or(0, |w| history.len().saturating_sub(w));
            let tail = &history[start..];
            if tail.is_empty() {
                (0.0, 0.0)
            } else {
                (tail.iter().map(|&(_, r)| r).sum::<f64>() / tail.len() as f64, tail.len() as f64)
            }
        }
    }
}

/// Discounted or windowed mean of the rewards in `history` at round `t`.
pub fn nonstationary_mean(history: &[(u64, f64)], mode: NonStationary, t: u64) -> f64 {
    nonstationary_stats(history, mode, t).0
}

/// Algorithm 1's per-arm reward `S_i − κ·T̃_i`.
pub fn per_arm_reward(score: f64, normalized_latency: f64, kappa: f64) -> f64 {
    score - kappa * normalized_latency
}

/// Round-level reward `ΣS_i − κ·max_latency/T_semi`.
pub fn round_reward(scores: &[f64], max_latency: f64, t_semi: f64, kappa: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("round_reward needs at least one selected client".into()));
    }
    if !(t_semi > 0.0) {
        return Err(Error::invalid(format!("T_semi must be positive, got {t_semi}")));
    }
    Ok(scores.iter().sum::<f64>() - kappa * max_latency / t_semi)
}

/// Selected clients plus the per-client index values behind the decision.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Chosen client ids in ascending order.
    pub selected: Vec<usize>,
    /// Decision-time value per client (UCB index, objective gain, …; 0 when
    /// the policy has none).
    pub indices: Vec<f64>,
}

impl SelectionResult {
    fn new(mut selected: Vec<usize>, indices: Vec<f64>) -> Self {
        selected.sort_unstable();
        Self { selected, indices }
    }

    /// Binary action vector `a ∈ {0,1}^N`.
    pub fn action_vector(&self) -> Vec<u8> {
        let mut a = vec![0; self.indices.len()];
        for &i in &self.selected {
            a[i] = 1;
        }
        a
    }

    pub fn contains(&self, client: usize) -> bool {
        self.selected.binary_search(&client).is_ok()
    }
}

/// Top-`k` clients by index; ties go to fewer pulls, then lower id.
pub fn select_top_k(indices: &[f64], pulls: &[u64], k: usize) -> Result<SelectionResult> {
    if indices.len() != pulls.len() {
        return Err(Error::shape(format!("{} indices vs {} arms", indices.len(), pulls.len())));
    }
    if k == 0 {
        return Err(Error::invalid("selection budget K must be >= 1"));
    }
    if indices.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("UCB index".into()));
    }
    let mut order: Vec<usize> = (0..indices.len()).collect();
    order.sort_by(|&a, &b| {
        indices[b]
            .partial_cmp(&indices[a])
            .unwrap_or(Ordering::Equal)
            .then(pulls[a].cmp(&pulls[b]))
            .then(a.cmp(&b))
    });
    order.truncate(k.min(indices.len()));
    Ok(SelectionResult::new(order, indices.to_vec()))
}

/// Uniform `k`-subset without replacement.
pub fn random_select(n: usize, k: usize, rng: &mut Stream) -> Result<SelectionResult> {
    if k == 0 {
        return Err(Error::invalid("selection budget K must be >= 1"));
    }
    let k = k.min(n);
    Ok(SelectionResult::new(index::sample(rng, n, k).into_vec(), vec![0.0; n]))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Projects rows onto their top-2 principal components via the Gram matrix
/// (cheap because the client count is small and the parameter count large).
fn pca2(rows: &[&[f64]]) -> Vec<[f64; 2]> {
    let n = rows.len();
    let dim = rows[0].len();
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(*r) {
            *m += v / n as f64;
        }
    }
    let mut gram = Matrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let g: f64 = (0..dim).map(|j| (rows[a][j] - mean[j]) * (rows[b][j] - mean[j])).sum();
            gram.set(a, b, g);
            gram.set(b, a, g);
        }
    }
    let (vals, vecs) = symmetric_eigen(&gram);
    // Components at rounding-noise level (e.g. identical rows whose centring
    // leaves ulp residue) are treated as absent.
    let scale: f64 = rows.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>()).fold(0.0, f64::max);
    let floor = 1e-12 * scale * n as f64;
    (0..n)
        .map(|i| {
            let mut p = [0.0; 2];
            for (c, slot) in p.iter_mut().enumerate().take(n) {
                if vals[c] > floor {
                    *slot = vecs.get(i, c) * vals[c].sqrt();
                }
            }
            p
        })
        .collect()
}

/// Seeded k-means++ initialisation followed by up to `iters` Lloyd steps.
/// Ties in assignment go to the lower cluster index. Returns the cluster of
/// each point and the centroids.
fn kmeans(points: &[[f64; 2]], k: usize, iters: usize, rng: &mut Stream) -> (Vec<usize>, Vec<[f64; 2]>) {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)]];
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| centroids.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[pick]);
    }
    let mut assign = vec![0; n];
    for _ in 0..iters {
        let next: Vec<usize> = points
            .iter()
            .map(|p| {
                let mut best = 0;
                for c in 1..k {
                    if sq_dist(p, &centroids[c]) < sq_dist(p, &centroids[best]) {
                        best = c;
                    }
                }
                best
            })
            .collect();
        let changed = next != assign;
        assign = next;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&[f64; 2]> = points.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
            if !members.is_empty() {
                let m = members.len() as f64;
                *centroid = [members.iter().map(|p| p[0]).sum::<f64>() / m, members.iter().map(|p| p[1]).sum::<f64>() / m];
            }
        }
        if !changed {
            break;
        }
    }
    (assign, centroids)
}

/// Simplified RPFL-style baseline: cluster the clients' latest deltas in a
/// 2-D PCA space and pick representatives round-robin across clusters,
/// nearest-to-centroid first. Clients without a delta contribute zeros.
pub fn cluster_select(deltas: &[Option<&[f64]>], k: usize, k_clusters: usize, rng: &mut Stream) -> Result<SelectionResult> {
    let n = deltas.len();
    if k == 0 {
        return Err(Error::invalid("selection budget K must be >= 1"));
    }
    if k_clusters == 0 || k_clusters > n {
        return Err(Error::invalid(format!("k_clusters must lie in 1..={n}, got {k_clusters}")));
    }
    let dim = deltas.iter().flatten().map(|d| d.len()).max().unwrap_or(0);
    if deltas.iter().flatten().any(|d| d.len() != dim) {
        return Err(Error::shape("client deltas differ in length"));
    }
    let zeros = vec![0.0; dim.max(1)];
    let rows: Vec<&[f64]> = deltas.iter().map(|d| d.unwrap_or(&zeros[..dim.max(1)])).collect();
    let points = pca2(&rows);
    let (assign, centroids) = kmeans(&points, k_clusters, 20, rng);
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); k_clusters];
    for (i, &c) in assign.iter().enumerate() {
        clusters[c].push(i);
    }
    for (c, members) in clusters.iter_mut().enumerate() {
        members.sort_by(|&a, &b| {
            sq_dist(&points[a], &centroids[c])
                .total_cmp(&sq_dist(&points[b], &centroids[c]))
                .then(a.cmp(&b))
        });
    }
    // Largest cluster first, then by lowest member id.
    clusters.retain(|m| !m.is_empty());
    clusters.sort_by(|a, b| b.len().cmp(&a.len()).then(a.iter().min().cmp(&b.iter().min())));
    let mut selected = Vec::new();
    let mut depth = 0;
    while selected.len() < k.min(n) {
        for members in &clusters {
            if let Some(&c) = members.get(depth) {
                if selected.len() < k {
                    selected.push(c);
                }
            }
        }
        depth += 1;
    }
    let indices = assign.iter().map(|&c| c as f64).collect();
    Ok(SelectionResult::new(selected, indices))
}

/// Eq. (16) objective `ΣS_i − κ·max_{i∈A} l_i / T_semi` of a subset.
pub fn selection_objective(scores: &[f64], latencies: &[f64], kappa: f64, t_semi: f64, subset: &[usize]) -> f64 {
    let s: f64 = subset.iter().map(|&i| scores[i]).sum();
    let m = subset.iter().map(|&i| latencies[i]).fold(0.0, f64::max);
    s - kappa * m / t_semi
}

fn check_objective_inputs(scores: &[f64], latencies: &[f64], t_semi: f64, k: usize) -> Result<()> {
    if scores.len() != latencies.len() {
        return Err(Error::shape(format!("{} scores vs {} latencies", scores.len(), latencies.len())));
    }
    if k == 0 {
        return Err(Error::invalid("selection budget K must be >= 1"));
    }
    if !(t_semi > 0.0) {
        return Err(Error::invalid(format!("T_semi must be positive, got {t_semi}")));
    }
    if scores.iter().chain(latencies).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("selection objective input".into()));
    }
    Ok(())
}

/// Adds the client with the largest marginal objective gain until `k` are
/// chosen (ties to the lower id).
pub fn greedy_select(scores: &[f64], latencies: &[f64], kappa: f64, t_semi: f64, k: usize) -> Result<SelectionResult> {
    check_objective_inputs(scores, latencies, t_semi, k)?;
    let n = scores.len();
    let mut chosen: Vec<usize> = Vec::new();
    let mut gains = vec![0.0; n];
    while chosen.len() < k.min(n) {
        let base = selection_objective(scores, latencies, kappa, t_semi, &chosen);
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if chosen.contains(&i) {
                continue;
            }
            chosen.push(i);
            let gain = selection_objective(scores, latencies, kappa, t_semi, &chosen) - base;
            chosen.pop();
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        let (i, g) = best.expect("unchosen client exists");
        gains[i] = g;
        chosen.push(i);
    }
    Ok(SelectionResult::new(chosen, gains))
}

/// Largest client count accepted by [`brute_force_select`].
pub const BRUTE_FORCE_MAX_N: usize = 15;

/// Exact maximiser of the Eq. (16) objective over all `k`-subsets (ties go
/// to the lexicographically smallest subset). Returns the result and the
/// optimal objective value.
pub fn brute_force_select(scores: &[f64], latencies: &[f64], kappa: f64, t_semi: f64, k: usize) -> Result<(SelectionResult, f64)> {
    check_objective_inputs(scores, latencies, t_semi, k)?;
    let n = scores.len();
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::invalid(format!("brute force limited to N <= {BRUTE_FORCE_MAX_N}, got {n}")));
    }
    let k = k.min(n);
    let mut best: Option<(Vec<usize>, f64)> = None;
    // Lexicographic k-combinations.
    let mut comb: Vec<usize> = (0..k).collect();
    loop {
        let v = selection_objective(scores, latencies, kappa, t_semi, &comb);
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((comb.clone(), v));
        }
        let Some(pos) = (0..k).rev().find(|&p| comb[p] < n - k + p) else {
            break;
        };
        comb[pos] += 1;
        for q in pos + 1..k {
            comb[q] = comb[q - 1] + 1;
        }
    }
    let (set, v) = best.expect("at least one subset");
    Ok((SelectionResult::new(set, vec![0.0; n]), v))
}

/// Which selection rule a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Ucb,
    UcbDiscounted,
    UcbWindow,
    Random,
    Cluster,
    GreedyOracle,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Ucb,
        PolicyKind::UcbDiscounted,
        PolicyKind::UcbWindow,
        PolicyKind::Random,
        PolicyKind::Cluster,
        PolicyKind::GreedyOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Ucb => "ucb",
            PolicyKind::UcbDiscounted => "ucb_discounted",
            PolicyKind::UcbWindow => "ucb_window",
            PolicyKind::Random => "random",
            PolicyKind::Cluster => "cluster",
            PolicyKind::GreedyOracle => "greedy_oracle",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
                Error::invalid(format!("unknown policy `{name}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Policy parameters from the run config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Exploration coefficient ρ.
    pub rho: f64,
    /// Discount γ_disc ∈ (0, 1] of `ucb_discounted`.
    pub gamma_disc: f64,
    /// Window `W` of `ucb_window`; `None` is unbounded.
    pub window: Option<usize>,
    /// Selection budget K.
    pub k: usize,
    /// Cluster count of the `cluster` baseline.
    pub clusters: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            kind: PolicyKind::Ucb,
            rho: std::f64::consts::SQRT_2,
            gamma_disc: 0.95,
            window: Some(20),
            k: 4,
            clusters: 3,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self, num_clients: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("policy.k must be >= 1"));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::invalid(format!("policy.rho must be >= 0, got {}", self.rho)));
        }
        if !(self.gamma_disc > 0.0 && self.gamma_disc <= 1.0) {
            return Err(Error::invalid(format!("policy.gamma_disc must lie in (0, 1], got {}", self.gamma_disc)));
        }
        if self.window == Some(0) {
            return Err(Error::invalid("policy.window must be >= 1"));
        }
        if self.kind == PolicyKind::Cluster && (self.clusters == 0 || self.clusters > num_clients) {
            return Err(Error::invalid(format!("policy.clusters must lie in 1..={num_clients}")));
        }
        Ok(())
    }

    fn nonstationary(&self) -> Option<NonStationary> {
        match self.kind {
            PolicyKind::UcbDiscounted => Some(NonStationary::Discounted(self.gamma_disc)),
            PolicyKind::UcbWindow => Some(NonStationary::Window(self.window)),
            _ => None,
        }
    }
}

/// Side information some policies consult at decision time.
#[derive(Debug, Clone, Copy, Default)]
pub struct SelectionContext<'a> {
    /// Latest known aggregate score per client (greedy oracle).
    pub scores: &'a [f64],
    /// Estimated per-client latency in seconds (greedy oracle).
    pub latencies: &'a [f64],
    pub t_semi: f64,
    pub kappa: f64,
    /// Latest uploaded delta per client (cluster baseline).
    pub deltas: &'a [Option<&'a [f64]>],
}

/// A replayable selection policy: identical (seed, observed rewards) give
/// identical decisions.
#[derive(Debug, Clone)]
pub struct SelectionPolicy {
    config: PolicyConfig,
    arms: Vec<ArmState>,
    rng: Stream,
}

impl SelectionPolicy {
    pub fn new(config: PolicyConfig, num_clients: usize, rng: Stream) -> Result<Self> {
        config.validate(num_clients)?;
        Ok(Self {
            config,
            arms: vec![ArmState::new(); num_clients],
            rng,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn arms(&self) -> &[ArmState] {
        &self.arms
    }

    /// UCB index of every arm at round `t` under this policy's mean estimator.
    pub fn indices(&self, t: u64) -> Vec<f64> {
        self.arms
            .iter()
            .map(|a| match self.config.nonstationary() {
                None => ucb_index(a, t, self.config.rho),
                Some(mode) => {
                    let (mean, count) = nonstationary_stats(&a.history, mode, t);
                    ucb_from(mean, count, t, self.config.rho)
                }
            })
            .collect()
    }

    /// Chooses the participants of round `t ≥ 1`.
    pub fn select(&mut self, t: u64, ctx: &SelectionContext<'_>) -> Result<SelectionResult> {
        let n = self.arms.len();
        let k = self.config.k;
        match self.config.kind {
            PolicyKind::Ucb | PolicyKind::UcbDiscounted | PolicyKind::UcbWindow => {
                let pulls: Vec<u64> = self.arms.iter().map(|a| a.pulls).collect();
                select_top_k(&self.indices(t), &pulls, k)
            }
            PolicyKind::Random => random_select(n, k, &mut self.rng),
            PolicyKind::Cluster => {
                let none = vec![None; n];
                let deltas = if ctx.deltas.is_empty() { &none[..] } else { ctx.deltas };
                cluster_select(deltas, k, self.config.clusters, &mut self.rng)
            }
            PolicyKind::GreedyOracle => greedy_select(ctx.scores, ctx.latencies, ctx.kappa, ctx.t_semi, k),
        }
    }

    /// Records the per-arm rewards of round `t`'s participants.
    pub fn observe(&mut self, t: u64, rewards: &[(usize, f64)]) -> Result<()> {
        for &(client, r) in rewards {
            self.arms
                .get_mut(client)
                .ok_or_else(|| Error::invalid(format!("no arm for client {client}")))?
                .record(t, r)?;
        }
        Ok(())
    }
}

/// Softmax of decision indices, logged as the "stochastic policy" view.
pub fn index_probabilities(indices: &[f64]) -> Vec<f64> {
    if indices.iter().any(|v| !v.is_finite()) {
        return vec![f64::NAN; indices.len()];
    }
    crate::recmodel::softmax(indices)
}
