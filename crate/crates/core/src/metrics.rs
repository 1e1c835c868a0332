//! Ranking metrics (AUC, NDCG@K, Precision/Recall/F1@K) and trace-level
//! time-to-target.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSplit;
use crate::error::{Error, Result};
use crate::recmodel::Scorer;

/// Pairwise AUC of one user: `(#concordant + 0.5·#ties) / #pairs`, or `None`
/// when either side is empty.
pub fn auc_user(relevant: &[f64], nonrelevant: &[f64]) -> Option<f64> {
    if relevant.is_empty() || nonrelevant.is_empty() {
        return None;
    }
    let mut neg = nonrelevant.to_vec();
    neg.sort_by(f64::total_cmp);
    // Twice the concordance count, kept integral for exactness.
    let mut twice: u64 = 0;
    for &s in relevant {
        let below = neg.partition_point(|&x| x < s);
        let tied = neg[below..].partition_point(|&x| x <= s);
        twice += 2 * below as u64 + tied as u64;
    }
    Some(twice as f64 / (2 * relevant.len() * neg.len()) as f64)
}

/// Macro-averaged AUC over users that have both relevant and non-relevant
/// scores; `None` if no user qualifies.
pub fn auc<'a, I>(users: I) -> Option<f64>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    mean(users.into_iter().filter_map(|(r, n)| auc_user(r, n)))
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// The top `k` of `candidates` by descending score, ties broken by smaller
/// item id. `scores` is indexed by item id.
pub fn rank_top_k(scores: &[f64], candidates: &[u32], k: usize) -> Vec<u32> {
    let cmp = |a: &u32, b: &u32| scores[*b as usize].total_cmp(&scores[*a as usize]).then(a.cmp(b));
    let mut items = candidates.to_vec();
    if k < items.len() {
        items.select_nth_unstable_by(k, cmp);
        items.truncate(k);
    }
    items.sort_by(cmp);
    items
}

/// `DCG@K / IDCG@K` with binary gains; `None` for an empty relevant set.
/// `is_relevant` is queried per ranked item.
pub fn ndcg_at_k(ranked: &[u32], is_relevant: impl Fn(u32) -> bool, num_relevant: usize, k: usize) -> Option<f64> {
    if num_relevant == 0 {
        return None;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &i)| is_relevant(i))
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..num_relevant.min(k)).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    Some(dcg / idcg)
}

/// Precision, recall and F1 at K.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `hits/K`, `hits/|relevant|` and their harmonic mean; `None` for an empty
/// relevant set.
pub fn topk_metrics(ranked: &[u32], is_relevant: impl Fn(u32) -> bool, num_relevant: usize, k: usize) -> Option<TopK> {
    if num_relevant == 0 || k == 0 {
        return None;
    }
    let hits = ranked.iter().take(k).filter(|&&i| is_relevant(i)).count() as f64;
    let precision = hits / k as f64;
    let recall = hits / num_relevant as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Some(TopK { precision, recall, f1 })
}

/// Clock of the first evaluation with AUC ≥ `target`. Points are
/// `(clock, auc)` in trace order; `None` AUC marks rounds without evaluation.
pub fn time_to_target(points: &[(f64, Option<f64>)], target: f64) -> Option<f64> {
    points.iter().find(|(_, a)| a.is_some_and(|a| a >= target)).map(|&(c, _)| c)
}

/// Macro-averaged ranking quality over test users.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub auc: f64,
    pub ndcg: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// Users contributing to the averages.
    pub users: usize,
}

struct UserEval {
    auc: Option<f64>,
    ndcg: Option<f64>,
    topk: Option<TopK>,
}

/// Full-ranking evaluation: for each user with test positives, candidates
/// are all items except the user's train positives, relevant items are the
/// test positives. `train` lists must be sorted.
pub fn evaluate_full_ranking(scorer: &Scorer<'_>, split: &DatasetSplit, k: usize) -> Result<EvalMetrics> {
    let num_items = scorer.num_items();
    if split.train.len() != split.test.len() {
        return Err(Error::shape("train/test user counts differ"));
    }
    let per_user: Vec<UserEval> = (0..split.test.len())
        .into_par_iter()
        .filter(|&u| !split.test[u].is_empty())
        .map_init(
            || (Vec::new(), vec![0u8; num_items]),
            |(scores, mark), u| {
                // 1 = train positive (excluded), 2 = test positive.
                for &i in &split.train[u] {
                    mark[i as usize] = 1;
                }
                for &i in &split.test[u] {
                    mark[i as usize] = 2;
                }
                scorer.score_all(u as u32, scores);
                let candidates: Vec<u32> = (0..num_items as u32).filter(|&i| mark[i as usize] != 1).collect();
                let (rel, non): (Vec<u32>, Vec<u32>) = candidates.iter().partition(|&&i| mark[i as usize] == 2);
                let rel_s: Vec<f64> = rel.iter().map(|&i| scores[i as usize]).collect();
                let non_s: Vec<f64> = non.iter().map(|&i| scores[i as usize]).collect();
                let ranked = rank_top_k(scores, &candidates, k);
                let is_rel = |i: u32| mark[i as usize] == 2;
                let out = UserEval {
                    auc: auc_user(&rel_s, &non_s),
                    ndcg: ndcg_at_k(&ranked, is_rel, rel.len(), k),
                    topk: topk_metrics(&ranked, is_rel, rel.len(), k),
                };
                for &i in split.train[u].iter().chain(&split.test[u]) {
                    mark[i as usize] = 0;
                }
                out
            },
        )
        .collect();
    let users = per_user.iter().filter(|e| e.auc.is_some()).count();
    // Sequential reduction in user order keeps results thread-count independent.
    Ok(EvalMetrics {
        auc: mean(per_user.iter().filter_map(|e| e.auc)).unwrap_or(0.5),
        ndcg: mean(per_user.iter().filter_map(|e| e.ndcg)).unwrap_or(0.0),
        recall: mean(per_user.iter().filter_map(|e| e.topk.map(|t| t.recall))).unwrap_or(0.0),
        precision: mean(per_user.iter().filter_map(|e| e.topk.map(|t| t.precision))).unwrap_or(0.0),
        f1: mean(per_user.iter().filter_map(|e| e.topk.map(|t| t.f1))).unwrap_or(0.0),
        users,
    })
}
