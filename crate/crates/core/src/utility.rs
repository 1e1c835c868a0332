//! Per-client contribution scoring (§III-B): reputation smoothing (Eq. 9),
//! update deviation and relevance (Eqs. 10–11), data quality (Eq. 12), the
//! aggregate score (Eq. 13) and the standardised observation vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sysmodel::LatencyEstimate;

/// Mixing weights of the utility model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UtilityWeights {
    /// Reputation smoothing γ ∈ [0, 1].
    pub gamma: f64,
    /// Weight α > 0 of the relevance–reputation term.
    pub alpha: f64,
    /// Weight β > 0 of the data-quality term.
    pub beta: f64,
    /// Latency penalty κ > 0.
    pub kappa: f64,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            alpha: 1.0,
            beta: 1.0,
            kappa: 0.5,
        }
    }
}

impl UtilityWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("kappa", self.kappa)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Eq. (9): returns `(R_t, Δ_t)` with `Δ = Q_t^i − Q_{t−1}` and
/// `R_t = γΔ + (1−γ)R_{t−1}`.
pub fn update_reputation(r_prev: f64, q_client: f64, q_prev_global: f64, gamma: f64) -> (f64, f64) {
    let delta = q_client - q_prev_global;
    (gamma * delta + (1.0 - gamma) * r_prev, delta)
}

/// Eq. (10): mean absolute deviation between a local model and the global one.
pub fn update_deviation(local: &[f64], global: &[f64]) -> Result<f64> {
    if local.len() != global.len() {
        return Err(Error::shape(format!("{} vs {} parameters", local.len(), global.len())));
    }
    if local.is_empty() {
        return Err(Error::Empty("update_deviation on empty vectors".into()));
    }
    Ok(local.iter().zip(global).map(|(a, b)| (a - b).abs()).sum::<f64>() / local.len() as f64)
}

/// Mean absolute entry of a parameter delta; equals
/// `update_deviation(global + delta, global)` without materialising the sum.
pub fn delta_deviation(delta: &[f64]) -> Result<f64> {
    if delta.is_empty() {
        return Err(Error::Empty("update_deviation on empty vectors".into()));
    }
    Ok(delta.iter().map(|d| d.abs()).sum::<f64>() / delta.len() as f64)
}

/// Eq. (11): `exp(−δ)` when the global model improved, else `1 − exp(−δ)`.
pub fn update_relevance(deviation: f64, improved: bool) -> f64 {
    let k = (-deviation).exp();
    if improved {
        k
    } else {
        1.0 - k
    }
}

/// Eq. (12): `|B| · RMS(ℓ)`; 0 for an empty list.
pub fn data_quality(losses: &[f64]) -> f64 {
    if losses.is_empty() {
        return 0.0;
    }
    let n = losses.len() as f64;
    n * (losses.iter().map(|l| l * l).sum::<f64>() / n).sqrt()
}

/// Min–max scaling to [0, 1]; a constant input maps to all ones.
pub fn minmax_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![1.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Eq. (13): `S = α·(U·R) + β·D̃`.
pub fn aggregate_score(relevance: f64, reputation: f64, quality_norm: f64, alpha: f64, beta: f64) -> f64 {
    alpha * (relevance * reputation) + beta * quality_norm
}

/// Number of entries in an observation vector.
pub const OBS_DIM: usize = 6;

/// `o_t^i = [R_{t−1}, Δ_t, U_t, D̃, T_train, T_comm]` and its z-scored copy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientObservation {
    pub raw: [f64; OBS_DIM],
    pub standardized: [f64; OBS_DIM],
}

/// Everything the utility model knows about one client.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    /// `R_t^i`, starting at 0.
    pub reputation: f64,
    /// `R_{t−1}^i` as of the latest update.
    pub prev_reputation: f64,
    /// `Δ_t^i`.
    pub gain: f64,
    /// `U_t^i`.
    pub relevance: f64,
    /// `D_i`; `None` until the client has trained once.
    pub quality_raw: Option<f64>,
    /// `D̃_i`; 0 until the client has trained once.
    pub quality_norm: f64,
    /// Latest aggregate score `S_t^i`.
    pub score: f64,
    /// Observation snapshots, one per round the client was selected.
    pub history: Vec<ClientObservation>,
}

/// Utility state for the whole fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReputationLedger {
    clients: Vec<ClientRecord>,
}

/// What a selected client produced this round.
#[derive(Debug, Clone, Copy)]
pub struct RoundContribution {
    /// Validation accuracy attributed to the client, `Q_t^i`.
    pub q_client: f64,
    /// Update deviation δ (Eq. 10).
    pub deviation: f64,
    /// Raw data quality `D_i` (Eq. 12).
    pub quality_raw: f64,
}

impl ReputationLedger {
    pub fn new(num_clients: usize) -> Self {
        Self {
            clients: vec![ClientRecord::default(); num_clients],
        }
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    pub fn record(&self, client: usize) -> Result<&ClientRecord> {
        self.clients
            .get(client)
            .ok_or_else(|| Error::invalid(format!("ledger has no client {client} (size {})", self.clients.len())))
    }

    pub fn records(&self) -> &[ClientRecord] {
        &self.clients
    }

    /// Applies one round of Eqs. (9)–(13) for `client`. `D̃` of every client
    /// is recomputed over all clients with a known `D` afterwards, and `S`
    /// refreshed for this client.
    pub fn update(
        &mut self,
        client: usize,
        contribution: RoundContribution,
        q_prev_global: f64,
        improved: bool,
        weights: &UtilityWeights,
    ) -> Result<()> {
        let n = self.clients.len();
        let rec = self
            .clients
            .get_mut(client)
            .ok_or_else(|| Error::invalid(format!("ledger has no client {client} (size {n})")))?;
        let (r, delta) = update_reputation(rec.reputation, contribution.q_client, q_prev_global, weights.gamma);
        rec.prev_reputation = rec.reputation;
        rec.reputation = r;
        rec.gain = delta;
        rec.relevance = update_relevance(contribution.deviation, improved);
        rec.quality_raw = Some(contribution.quality_raw);
        Ok(())
    }

    /// Recomputes `D̃` for all clients with known `D` and refreshes scores of
    /// the given clients.
    pub fn refresh(&mut self, clients: &[usize], weights: &UtilityWeights) {
        let known: Vec<(usize, f64)> = self
            .clients
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.quality_raw.map(|d| (i, d)))
            .collect();
        let norm = minmax_normalize(&known.iter().map(|&(_, d)| d).collect::<Vec<_>>());
        for (&(i, _), v) in known.iter().zip(norm) {
            self.clients[i].quality_norm = v;
        }
        for &i in clients {
            let c = &mut self.clients[i];
            c.score = aggregate_score(c.relevance, c.reputation, c.quality_norm, weights.alpha, weights.beta);
        }
    }

    pub fn push_observation(&mut self, client: usize, obs: ClientObservation) -> Result<()> {
        let n = self.clients.len();
        self.clients
            .get_mut(client)
            .ok_or_else(|| Error::invalid(format!("ledger has no client {client} (size {n})")))?
            .history
            .push(obs);
        Ok(())
    }
}

fn raw_observation(rec: &ClientRecord, lat: &LatencyEstimate) -> [f64; OBS_DIM] {
    [rec.prev_reputation, rec.gain, rec.relevance, rec.quality_norm, lat.t_train, lat.t_comm]
}

/// Raw and population-z-scored observation vectors for every client;
/// zero-variance dimensions standardise to 0.
pub fn build_observations(ledger: &ReputationLedger, latencies: &[LatencyEstimate]) -> Result<Vec<ClientObservation>> {
    if latencies.len() != ledger.len() {
        return Err(Error::shape(format!("{} latencies for {} clients", latencies.len(), ledger.len())));
    }
    let raws: Vec<[f64; OBS_DIM]> = ledger.clients.iter().zip(latencies).map(|(c, l)| raw_observation(c, l)).collect();
    let n = raws.len() as f64;
    let mut mean = [0.0; OBS_DIM];
    let mut sd = [0.0; OBS_DIM];
    for d in 0..OBS_DIM {
        mean[d] = raws.iter().map(|r| r[d]).sum::<f64>() / n;
        sd[d] = (raws.iter().map(|r| (r[d] - mean[d]).powi(2)).sum::<f64>() / n).sqrt();
    }
    Ok(raws
        .into_iter()
        .map(|raw| {
            let mut standardized = [0.0; OBS_DIM];
            for d in 0..OBS_DIM {
                // Relative threshold so rounding noise in a constant column reads as 0 variance.
                if sd[d] > 1e-12 * mean[d].abs().max(1e-300) {
                    standardized[d] = (raw[d] - mean[d]) / sd[d];
                }
            }
            ClientObservation { raw, standardized }
        })
        .collect())
}

/// Observation for one client, standardised over the whole pool.
pub fn build_observation(ledger: &ReputationLedger, client: usize, latencies: &[LatencyEstimate]) -> Result<ClientObservation> {
    ledger.record(client)?;
    Ok(build_observations(ledger, latencies)?[client])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reputation_examples() {
        assert_eq!(update_reputation(0.7, 0.9, 0.6, 1.0).0, 0.9 - 0.6);
        assert_eq!(update_reputation(0.7, 0.9, 0.6, 0.0).0, 0.7);
        // γ=0.3, R_prev=0.2, Δ=0.1 → 0.03 + 0.14
        let (r, d) = update_reputation(0.2, 0.6, 0.5, 0.3);
        assert!((d - 0.1).abs() < 1e-12);
        assert!((r - 0.17).abs() < 1e-9);
    }

    #[test]
    fn deviation_examples() {
        assert_eq!(update_deviation(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(update_deviation(&[1.0, 3.0], &[0.0, 1.0]).unwrap(), 1.5);
        assert!(update_deviation(&[1.0], &[1.0, 2.0]).is_err());
        assert_eq!(delta_deviation(&[1.0, -2.0]).unwrap(), 1.5);
    }

    #[test]
    fn relevance_examples() {
        assert_eq!(update_relevance(0.0, true), 1.0);
        assert_eq!(update_relevance(0.0, false), 0.0);
        assert!((update_relevance(2f64.ln(), true) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn quality_examples() {
        assert!((data_quality(&[3.0, 4.0]) - 2.0 * 12.5f64.sqrt()).abs() < 1e-12);
        assert!((data_quality(&[3.0, 4.0]) - 7.0711).abs() < 1e-4);
        assert_eq!(data_quality(&[0.0, 0.0]), 0.0);
        assert_eq!(data_quality(&[]), 0.0);
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_normalize(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&[3.0, 3.0]), vec![1.0, 1.0]);
        assert_eq!(minmax_normalize(&[5.0]), vec![1.0]);
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_score(1.0, 0.2, 0.9, 1.0, 0.0), 0.2);
        assert_eq!(aggregate_score(1.0, 0.2, 0.7, 0.0, 1.0), 0.7);
        assert!((aggregate_score(0.5, 0.4, 0.6, 1.0, 0.5) - 0.5).abs() < 1e-12);
    }

    fn lat(a: f64, b: f64) -> LatencyEstimate {
        LatencyEstimate { t_train: a, t_comm: b }
    }

    #[test]
    fn observation_examples() {
        let ledger = ReputationLedger::new(2);
        let obs = build_observations(&ledger, &[lat(1.0, 2.0), lat(1.0, 2.0)]).unwrap();
        assert!(obs.iter().all(|o| o.standardized == [0.0; OBS_DIM]));
        let obs = build_observations(&ledger, &[lat(0.0, 1.0), lat(2.0, 1.0)]).unwrap();
        assert_eq!(obs[0].standardized[4], -1.0);
        assert_eq!(obs[1].standardized[4], 1.0);
        assert_eq!(obs[0].raw[4], 0.0);
        assert!(build_observation(&ledger, 2, &[lat(0.0, 1.0), lat(2.0, 1.0)]).is_err());
        assert!(build_observations(&ledger, &[lat(0.0, 1.0)]).is_err());
    }

    #[test]
    fn ledger_round() {
        let w = UtilityWeights::default();
        let mut l = ReputationLedger::new(3);
        let c = |q, d| RoundContribution {
            q_client: q,
            deviation: 0.0,
            quality_raw: d,
        };
        l.update(0, c(0.7, 10.0), 0.5, true, &w).unwrap();
        l.update(2, c(0.6, 20.0), 0.5, true, &w).unwrap();
        l.refresh(&[0, 2], &w);
        let r = l.records();
        assert!((r[0].reputation - 0.1).abs() < 1e-12);
        assert_eq!((r[0].quality_norm, r[1].quality_norm, r[2].quality_norm), (0.0, 0.0, 1.0));
        assert!((r[0].score - 0.1).abs() < 1e-12);
        assert!((r[2].score - (0.05 + 1.0)).abs() < 1e-12);
        assert!(l.update(3, c(0.0, 0.0), 0.0, true, &w).is_err());
    }

    proptest! {
        #[test]
        fn reputation_converges(delta in -1.0f64..1.0, gamma in 0.01f64..=1.0, r0 in -1.0f64..1.0) {
            let mut r = r0;
            for _ in 0..200 {
                r = update_reputation(r, delta, 0.0, gamma).0;
            }
            let bound = (1.0 - gamma).powi(200) * (delta - r0).abs() + 1e-12;
            prop_assert!((r - delta).abs() < bound);
        }

        #[test]
        fn relevance_monotone_and_complementary(a in 0.0f64..10.0, b in 0.0f64..10.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(update_relevance(lo, true) >= update_relevance(hi, true));
            prop_assert!(update_relevance(lo, false) <= update_relevance(hi, false));
            prop_assert!((update_relevance(a, true) + update_relevance(a, false) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn aggregate_superposition(ur1 in -2.0f64..2.0, ur2 in -2.0f64..2.0, d1 in 0.0f64..1.0, d2 in 0.0f64..1.0,
                                   alpha in 0.0f64..3.0, beta in 0.0f64..3.0) {
            let s = aggregate_score(ur1 + ur2, 1.0, d1 + d2, alpha, beta);
            let parts = aggregate_score(ur1, 1.0, d1, alpha, beta) + aggregate_score(ur2, 1.0, d2, alpha, beta);
            prop_assert!((s - parts).abs() < 1e-12);
        }

        #[test]
        fn minmax_idempotent(v in prop::collection::vec(-100.0f64..100.0, 1..20)) {
            let once = minmax_normalize(&v);
            let twice = minmax_normalize(&once);
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(a));
            }
        }
    }
}
