//! Quantity-skewed partitioning of users across clients, controlled by the
//! User Balance Index (min/max ratio of per-client interaction counts).

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::InteractionLog;
use crate::error::{Error, Result};
use crate::rng::{self, domain};

/// Client share of the data; positive entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PortionVector(Vec<f64>);

impl PortionVector {
    pub fn new(portions: Vec<f64>) -> Result<Self> {
        if portions.is_empty() {
            return Err(Error::Empty("portion vector".into()));
        }
        if portions.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::invalid("portions must be finite and positive"));
        }
        let sum: f64 = portions.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("portions sum to {sum}, not 1")));
        }
        Ok(Self(portions))
    }

    fn normalized(raw: Vec<f64>) -> Result<Self> {
        let sum: f64 = raw.iter().sum();
        Self::new(raw.into_iter().map(|w| w / sum).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ubi(&self) -> f64 {
        let (min, max) = min_max(&self.0);
        min / max
    }
}

fn check(n: usize, ubi: f64) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 clients, got {n}")));
    }
    if !(ubi > 0.0 && ubi <= 1.0) {
        return Err(Error::invalid(format!("UBI {ubi} outside (0, 1]")));
    }
    Ok(())
}

/// Geometric portions `p_i ∝ r^(i-1)` with `r = ubi^(1/(n-1))`.
pub fn exponential_portions(n: usize, ubi: f64) -> Result<PortionVector> {
    check(n, ubi)?;
    let r = ubi.powf(1.0 / (n - 1) as f64);
    PortionVector::normalized((0..n).map(|i| r.powi(i as i32)).collect())
}

/// Affine portions: raw weights evenly spaced from 1 down to `ubi`.
pub fn linear_portions(n: usize, ubi: f64) -> Result<PortionVector> {
    check(n, ubi)?;
    let step = (1.0 - ubi) / (n - 1) as f64;
    PortionVector::normalized(
        (0..n)
            .map(|i| if i == n - 1 { ubi } else { 1.0 - step * i as f64 })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionStrategy {
    Exponential,
    Linear,
}

impl PartitionStrategy {
    pub fn portions(self, n: usize, ubi: f64) -> Result<PortionVector> {
        match self {
            PartitionStrategy::Exponential => exponential_portions(n, ubi),
            PartitionStrategy::Linear => linear_portions(n, ubi),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PartitionStrategy::Exponential => "exponential",
            PartitionStrategy::Linear => "linear",
        }
    }
}

/// Which users (and therefore interactions) live on which client.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionAssignment {
    /// Sorted user indices per client.
    pub client_users: Vec<Vec<u32>>,
    /// Indices into the log's interaction list, per client.
    pub client_interactions: Vec<Vec<usize>>,
    /// Owning client per user.
    pub user_client: Vec<usize>,
}

impl PartitionAssignment {
    pub fn num_clients(&self) -> usize {
        self.client_users.len()
    }

    /// Realized `|D_i|` per client.
    pub fn counts(&self) -> Vec<usize> {
        self.client_interactions.iter().map(Vec::len).collect()
    }
}

/// Assigns whole users to clients so interaction counts track `portions`.
///
/// Users are visited in a seeded shuffle and each goes to the client with
/// the largest remaining deficit `target_i - count_i`. A local search over
/// single-user moves and pairwise swaps then pulls every count closer to its
/// target in relative terms, without ever emptying a client.
pub fn assign_users(log: &InteractionLog, portions: &PortionVector, seed: u64) -> Result<PartitionAssignment> {
    let n_clients = portions.len();
    let n_users = log.num_users();
    if n_users < n_clients {
        return Err(Error::invalid(format!(
            "{n_users} users cannot cover {n_clients} clients"
        )));
    }
    let user_counts = log.user_counts();
    let total = log.len() as f64;
    let targets: Vec<f64> = portions.as_slice().iter().map(|p| p * total).collect();

    let mut order: Vec<u32> = (0..n_users as u32).collect();
    order.shuffle(&mut rng::stream(seed, &[domain::PARTITION]));

    let mut owner = vec![0usize; n_users];
    let mut load = vec![0usize; n_clients];
    let mut members = vec![0usize; n_clients];
    for &u in &order {
        let c = (0..n_clients)
            .max_by(|&a, &b| {
                let da = targets[a] - load[a] as f64;
                let db = targets[b] - load[b] as f64;
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .unwrap();
        owner[u as usize] = c;
        load[c] += user_counts[u as usize];
        members[c] += 1;
    }
    // A client that never held the largest deficit steals the smallest user
    // from the most crowded client.
    for c in 0..n_clients {
        if members[c] == 0 {
            let u = order
                .iter()
                .copied()
                .filter(|&u| members[owner[u as usize]] > 1)
                .min_by_key(|&u| (user_counts[u as usize], u))
                .unwrap();
            let from = owner[u as usize];
            members[from] -= 1;
            load[from] -= user_counts[u as usize];
            owner[u as usize] = c;
            members[c] += 1;
            load[c] += user_counts[u as usize];
        }
    }
    refine(&mut owner, &mut load, &mut members, &user_counts, &targets);

    let mut client_users = vec![Vec::new(); n_clients];
    for (u, &c) in owner.iter().enumerate() {
        client_users[c].push(u as u32);
    }
    let mut client_interactions = vec![Vec::new(); n_clients];
    for (idx, it) in log.interactions().iter().enumerate() {
        client_interactions[owner[it.user as usize]].push(idx);
    }
    Ok(PartitionAssignment {
        client_users,
        client_interactions,
        user_client: owner,
    })
}

fn rel_err(load: usize, target: f64) -> f64 {
    let e = load as f64 / target - 1.0;
    e * e
}

/// Best-improvement local search on `Σ_i (load_i / target_i - 1)^2`.
fn refine(owner: &mut [usize], load: &mut [usize], members: &mut [usize], counts: &[usize], targets: &[f64]) {
    let n_clients = load.len();
    let mut by_client: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for (u, &c) in owner.iter().enumerate() {
        by_client[c].push(u);
    }
    for _ in 0..200 {
        // (gain, from, to, user_from, Option<user_to>)
        let mut best: Option<(f64, usize, usize, usize, Option<usize>)> = None;
        for a in 0..n_clients {
            for b in 0..n_clients {
                if a == b {
                    continue;
                }
                let base = rel_err(load[a], targets[a]) + rel_err(load[b], targets[b]);
                for &ua in &by_client[a] {
                    let ca = counts[ua];
                    if members[a] > 1 {
                        let gain = base - rel_err(load[a] - ca, targets[a]) - rel_err(load[b] + ca, targets[b]);
                        if gain > best.map_or(1e-15, |x| x.0) {
                            best = Some((gain, a, b, ua, None));
                        }
                    }
                    if a < b {
                        for &ub in &by_client[b] {
                            let cb = counts[ub];
                            if ca == cb {
                                continue;
                            }
                            let gain = base
                                - rel_err(load[a] - ca + cb, targets[a])
                                - rel_err(load[b] + ca - cb, targets[b]);
                            if gain > best.map_or(1e-15, |x| x.0) {
                                best = Some((gain, a, b, ua, Some(ub)));
                            }
                        }
                    }
                }
            }
        }
        let Some((_, a, b, ua, ub)) = best else { break };
        owner[ua] = b;
        load[a] -= counts[ua];
        load[b] += counts[ua];
        by_client[a].retain(|&u| u != ua);
        by_client[b].push(ua);
        match ub {
            Some(ub) => {
                owner[ub] = a;
                load[b] -= counts[ub];
                load[a] += counts[ub];
                by_client[b].retain(|&u| u != ub);
                by_client[a].push(ub);
            }
            None => {
                members[a] -= 1;
                members[b] += 1;
            }
        }
    }
}

/// `min_i |D_i| / max_i |D_i|`.
pub fn compute_ubi(assignment: &PartitionAssignment) -> Result<f64> {
    ubi_of_counts(&assignment.counts())
}

pub fn ubi_of_counts(counts: &[usize]) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::Empty("no clients".into()));
    }
    if counts.contains(&0) {
        return Err(Error::invalid("a client holds no interactions"));
    }
    let min = *counts.iter().min().unwrap() as f64;
    let max = *counts.iter().max().unwrap() as f64;
    Ok(min / max)
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}
