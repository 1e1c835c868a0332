//! Simulated client hardware: compute and communication latency, the
//! straggler-bound round time (Eq. 14) and normalisation against the
//! semi-asynchronous boundary (Eq. 15).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples processed per GHz-core-second. Only relative speeds matter for
/// selection behaviour.
pub const DEFAULT_CALIBRATION: f64 = 200.0;

/// Clock shared by every Table II device.
pub const TABLE2_FREQ_MHZ: f64 = 2245.78;

/// One simulated client device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientProfile {
    pub cores: u32,
    pub cpu_freq_mhz: f64,
    /// Informational only.
    pub ram_gb: f64,
    pub bandwidth_mbps: f64,
}

impl ClientProfile {
    pub fn validate(&self) -> Result<()> {
        let ok = self.cores > 0
            && [self.cpu_freq_mhz, self.ram_gb, self.bandwidth_mbps]
                .iter()
                .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("client profile fields must be positive: {self:?}")))
        }
    }

    /// Training throughput `s_n` in samples per second.
    pub fn speed(&self, calibration: f64) -> f64 {
        self.cores as f64 * (self.cpu_freq_mhz / 1000.0) * calibration
    }
}

/// The eight devices of Table II.
pub fn default_fleet() -> Vec<ClientProfile> {
    let big = [1600.0, 1600.0, 100.0, 100.0].map(|bw| ClientProfile {
        cores: 8,
        cpu_freq_mhz: TABLE2_FREQ_MHZ,
        ram_gb: 16.0,
        bandwidth_mbps: bw,
    });
    let small = [6.0, 6.0, 2.0, 2.0].map(|bw| ClientProfile {
        cores: 2,
        cpu_freq_mhz: TABLE2_FREQ_MHZ,
        ram_gb: 4.0,
        bandwidth_mbps: bw,
    });
    big.into_iter().chain(small).collect()
}

/// Parses a JSON array of profiles.
pub fn parse_fleet(json: &str) -> Result<Vec<ClientProfile>> {
    let fleet: Vec<ClientProfile> = serde_json::from_str(json)?;
    if fleet.is_empty() {
        return Err(Error::Empty("fleet has no clients".into()));
    }
    for p in &fleet {
        p.validate()?;
    }
    Ok(fleet)
}

pub fn load_fleet(path: impl AsRef<Path>) -> Result<Vec<ClientProfile>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fleet(&text)
}

/// Simulated latency of one client for one round.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyEstimate {
    pub t_train: f64,
    pub t_comm: f64,
}

impl LatencyEstimate {
    pub fn total(&self) -> f64 {
        self.t_train + self.t_comm
    }
}

/// `workload / speed` seconds, with workload in sample-epochs.
pub fn compute_time(workload: f64, speed: f64) -> Result<f64> {
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(Error::invalid(format!("client speed must be positive, got {speed}")));
    }
    if !(workload >= 0.0 && workload.is_finite()) {
        return Err(Error::invalid(format!("workload must be >= 0, got {workload}")));
    }
    Ok(workload / speed)
}

/// Transfer time of `payload_bytes` at `bandwidth_mbps`, scaled by
/// `multiplier` (2 folds the downlink broadcast into the uplink figure).
pub fn comm_time(payload_bytes: u64, bandwidth_mbps: f64, multiplier: f64) -> Result<f64> {
    if !(bandwidth_mbps > 0.0 && bandwidth_mbps.is_finite()) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth_mbps}")));
    }
    if !(multiplier >= 0.0 && multiplier.is_finite()) {
        return Err(Error::invalid(format!("comm multiplier must be >= 0, got {multiplier}")));
    }
    Ok(multiplier * (payload_bytes as f64 * 8.0) / (bandwidth_mbps * 1e6))
}

/// Latency of a client doing `workload` sample-epochs and shipping
/// `payload_bytes`.
pub fn estimate_latency(
    profile: &ClientProfile,
    workload: f64,
    payload_bytes: u64,
    calibration: f64,
    comm_multiplier: f64,
) -> Result<LatencyEstimate> {
    Ok(LatencyEstimate {
        t_train: compute_time(workload, profile.speed(calibration))?,
        t_comm: comm_time(payload_bytes, profile.bandwidth_mbps, comm_multiplier)?,
    })
}

/// Eq. (14): the slowest selected client bounds the round.
pub fn round_time(selected: &[LatencyEstimate]) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::Empty("round_time needs at least one selected client".into()));
    }
    Ok(selected.iter().map(LatencyEstimate::total).fold(f64::NEG_INFINITY, f64::max))
}

/// Eq. (15): `T_round / T_semi`.
pub fn normalized_time(t_round: f64, t_semi: f64) -> Result<f64> {
    if !(t_semi > 0.0 && t_semi.is_finite()) {
        return Err(Error::invalid(format!("T_semi must be positive, got {t_semi}")));
    }
    Ok(t_round / t_semi)
}

fn binomial(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step.
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Median over all size-`k` subsets of the subset's maximum latency.
///
/// With latencies sorted ascending, exactly `C(j, k-1)` subsets have the
/// element at 0-based rank `j` as their maximum, so the median follows from
/// cumulative counts without enumeration. For an even subset count the two
/// middle values are averaged.
pub fn median_max_latency(latencies: &[f64], k: usize) -> Result<f64> {
    let n = latencies.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("need 1 <= K <= N, got K={k}, N={n}")));
    }
    if latencies.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::invalid("latencies must be finite and >= 0"));
    }
    let mut sorted = latencies.to_vec();
    sorted.sort_by(f64::total_cmp);
    let overflow = || Error::invalid(format!("C({n}, {k}) overflows the subset counter"));
    let total = binomial(n, k).ok_or_else(overflow)?;
    // 1-based order statistics of the subset-max distribution.
    let lo_rank = total.div_ceil(2);
    let hi_rank = total / 2 + 1;
    let value_at = |rank: u128| -> Result<f64> {
        let mut cum: u128 = 0;
        for (j, &l) in sorted.iter().enumerate().skip(k - 1) {
            cum += binomial(j, k - 1).ok_or_else(overflow)?;
            if cum >= rank {
                return Ok(l);
            }
        }
        Ok(sorted[n - 1])
    };
    if total % 2 == 1 {
        value_at(lo_rank)
    } else {
        Ok(0.5 * (value_at(lo_rank)? + value_at(hi_rank)?))
    }
}

/// Default `T_semi`: `factor` × the median K-subset round latency.
pub fn semi_boundary(latencies: &[f64], k: usize, factor: f64) -> Result<f64> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::invalid(format!("T_semi factor must be positive, got {factor}")));
    }
    let t = factor * median_max_latency(latencies, k)?;
    if t > 0.0 {
        Ok(t)
    } else {
        Err(Error::invalid("T_semi evaluates to 0; set an explicit boundary"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table2_fleet() {
        let f = default_fleet();
        assert_eq!(f.len(), 8);
        assert_eq!((f[0].cores, f[0].ram_gb, f[0].bandwidth_mbps), (8, 16.0, 1600.0));
        assert_eq!((f[7].cores, f[7].ram_gb, f[7].bandwidth_mbps), (2, 4.0, 2.0));
        assert!(f.iter().all(|p| p.cpu_freq_mhz == 2245.78));
        let bw: Vec<f64> = f.iter().map(|p| p.bandwidth_mbps).collect();
        assert_eq!(bw, [1600.0, 1600.0, 100.0, 100.0, 6.0, 6.0, 2.0, 2.0]);
    }

    #[test]
    fn compute_time_examples() {
        assert_eq!(compute_time(100.0, 50.0).unwrap(), 2.0);
        assert_eq!(compute_time(0.0, 50.0).unwrap(), 0.0);
        assert!(compute_time(10.0, 0.0).is_err());
    }

    #[test]
    fn comm_time_examples() {
        assert!((comm_time(1_000_000, 8.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(comm_time(0, 8.0, 2.0).unwrap(), 0.0);
        assert!((comm_time(1_000_000, 2.0, 2.0).unwrap() - 8.0).abs() < 1e-12);
        assert!(comm_time(1, 0.0, 1.0).is_err());
        let a = comm_time(1000, 10.0, 1.0).unwrap();
        assert!((comm_time(1000, 20.0, 1.0).unwrap() - a / 2.0).abs() < 1e-15);
        assert!((comm_time(3000, 10.0, 1.0).unwrap() - 3.0 * a).abs() < 1e-15);
    }

    #[test]
    fn round_time_examples() {
        let l = |a, b| LatencyEstimate { t_train: a, t_comm: b };
        assert_eq!(round_time(&[l(2.0, 1.0)]).unwrap(), 3.0);
        assert_eq!(round_time(&[l(2.0, 1.0), l(1.0, 5.0)]).unwrap(), 6.0);
        assert!(round_time(&[]).is_err());
    }

    #[test]
    fn normalized_time_examples() {
        assert_eq!(normalized_time(6.0, 6.0).unwrap(), 1.0);
        assert_eq!(normalized_time(3.0, 6.0).unwrap(), 0.5);
        assert!(normalized_time(3.0, 0.0).is_err());
        assert!(normalized_time(3.0, -1.0).is_err());
    }

    fn brute_median(l: &[f64], k: usize) -> f64 {
        let n = l.len();
        let mut maxes = Vec::new();
        for mask in 0u32..1 << n {
            if mask.count_ones() as usize == k {
                maxes.push((0..n).filter(|i| mask >> i & 1 == 1).map(|i| l[i]).fold(f64::MIN, f64::max));
            }
        }
        maxes.sort_by(f64::total_cmp);
        let m = maxes.len();
        if m % 2 == 1 {
            maxes[m / 2]
        } else {
            0.5 * (maxes[m / 2 - 1] + maxes[m / 2])
        }
    }

    #[test]
    fn median_max_matches_enumeration() {
        let l = [3.0, 20.4, 1.2, 7.3, 11.0, 4.1, 2.9, 6.0];
        for k in 1..=8 {
            assert_eq!(median_max_latency(&l, k).unwrap(), brute_median(&l, k), "K={k}");
        }
        assert!(median_max_latency(&l, 0).is_err());
        assert!(median_max_latency(&l, 9).is_err());
        assert!((semi_boundary(&l, 8, 1.5).unwrap() - 30.6).abs() < 1e-12);
    }

    #[test]
    fn fleet_json_round_trip() {
        let json = serde_json::to_string(&default_fleet()).unwrap();
        assert_eq!(parse_fleet(&json).unwrap(), default_fleet());
        assert!(parse_fleet("[]").is_err());
        assert!(parse_fleet(r#"[{"cores":0,"cpu_freq_mhz":1,"ram_gb":1,"bandwidth_mbps":1}]"#).is_err());
    }
}
