//! Shared oracles and fixtures for the integration suites.
#![allow(dead_code)]

use std::path::PathBuf;

use fedsel::dataset::{synth_features, InteractionLog, ModalityBundle};
use fedsel::recmodel::{total_loss, HyperParams, ModelParams, Sample, Tensor};
use fedsel::rng;
use rand::Rng;
use rand_distr::StandardNormal;

/// Location of the MovieLens-100K ratings file: `$FEDSEL_MOVIELENS`, else
/// `<workspace>/data/ml-100k/u.data`.
pub fn movielens_path() -> PathBuf {
    if let Ok(p) = std::env::var("FEDSEL_MOVIELENS") {
        return PathBuf::from(p);
    }
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k/u.data")
}

pub fn load_movielens() -> InteractionLog {
    let path = movielens_path();
    fedsel::dataset::load_movielens(&path).unwrap_or_else(|e| {
        panic!("MovieLens-100K ratings required at {} (set FEDSEL_MOVIELENS): {e}", path.display())
    })
}

pub fn small_hyper() -> HyperParams {
    HyperParams {
        dim: 8,
        factors: 2,
        text_dim: 5,
        image_dim: 4,
        text_hidden: 6,
        image_hidden: 5,
        attn_hidden: 7,
        negatives: 3,
        margin: 1.0,
        dcor_weight: 0.3,
        dcor_rows: 16,
        dropout: 0.0,
        ..HyperParams::default()
    }
}

/// Random instance with parameters at unit scale so gradients are well away
/// from zero.
pub struct Instance {
    pub params: ModelParams,
    pub features: ModalityBundle,
    pub batch: Vec<Sample>,
    pub hyper: HyperParams,
}

pub fn random_instance(seed: u64, batch_size: usize) -> Instance {
    let hyper = small_hyper();
    let (users, items) = (6u32, 10u32);
    let mut params = ModelParams::init(&hyper, users as usize, items as usize, seed).unwrap();
    let mut r = rng::stream(seed, &[4242]);
    for v in params.data_mut() {
        *v = 0.6 * r.sample::<f64, _>(StandardNormal);
    }
    let features = synth_features(seed, hyper.text_dim, hyper.image_dim, items as usize).unwrap();
    let batch = (0..batch_size)
        .map(|_| Sample {
            user: r.random_range(0..users),
            pos: r.random_range(0..items),
            negs: (0..hyper.negatives).map(|_| r.random_range(0..items)).collect(),
        })
        .collect();
    Instance {
        params,
        features,
        batch,
        hyper,
    }
}

/// Central finite differences of the batch loss for every parameter.
pub fn numeric_gradient(inst: &Instance, eps: f64) -> Vec<f64> {
    let mut p = inst.params.clone();
    let mut out = vec![0.0; p.len()];
    for j in 0..p.len() {
        let w = p.data()[j];
        p.data_mut()[j] = w + eps;
        let plus = total_loss(&inst.batch, &p, &inst.features, &inst.hyper, None).unwrap().0.loss;
        p.data_mut()[j] = w - eps;
        let minus = total_loss(&inst.batch, &p, &inst.features, &inst.hyper, None).unwrap().0.loss;
        p.data_mut()[j] = w;
        out[j] = (plus - minus) / (2.0 * eps);
    }
    out
}

/// Largest relative error per tensor, with the denominator floored at 1e-3
/// of that tensor's largest gradient magnitude.
pub fn relative_errors(params: &ModelParams, analytic: &[f64], numeric: &[f64]) -> Vec<(&'static str, f64)> {
    Tensor::ALL
        .into_iter()
        .map(|t| {
            let range = params.layout().range(t);
            let a = &analytic[range.clone()];
            let n = &numeric[range];
            let scale = a.iter().chain(n).fold(0.0f64, |m, v| m.max(v.abs()));
            let floor = (1e-3 * scale).max(1e-10);
            let worst = a
                .iter()
                .zip(n)
                .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
                .fold(0.0, f64::max);
            (t.name(), worst)
        })
        .collect()
}

/// Small deterministic log: `users` users with 8..20 distinct items each out
/// of `items`, timestamps increasing per user.
pub fn synthetic_log(users: u64, items: u64, seed: u64) -> InteractionLog {
    InteractionLog::from_raw(&synthetic_records(users, items, seed)).unwrap()
}

/// The raw `(user, item, rating, timestamp)` records behind [`synthetic_log`].
pub fn synthetic_records(users: u64, items: u64, seed: u64) -> Vec<(u64, u64, u8, u64)> {
    let mut r = rng::stream(seed, &[777]);
    let mut records = Vec::new();
    for u in 0..users {
        let n = r.random_range(8..=20usize).min(items as usize);
        // Popularity skew: lower item ids are chosen more often.
        let mut chosen = std::collections::BTreeSet::new();
        while chosen.len() < n {
            let x: f64 = r.random();
            chosen.insert((x * x * items as f64) as u64);
        }
        for (k, i) in chosen.into_iter().enumerate() {
            records.push((u + 1, i + 1, r.random_range(1..=5u8), 1_000 + 37 * k as u64 + u));
        }
    }
    // Make every item appear at least once so item ids stay dense.
    for i in 0..items {
        records.push((users + 1, i + 1, 4, 10_000 + i));
    }
    records
}

/// Writes [`synthetic_records`] in MovieLens `u.data` format.
pub fn write_synthetic_movielens(path: &std::path::Path, users: u64, items: u64, seed: u64) {
    let text: String = synthetic_records(users, items, seed)
        .iter()
        .map(|(u, i, r, t)| format!("{u}\t{i}\t{r}\t{t}\n"))
        .collect();
    std::fs::write(path, text).unwrap();
}

/// Fast run config over [`synthetic_log`]: tiny model, Table II fleet.
pub fn tiny_config() -> fedsel::orchestrator::RunConfig {
    let mut c = fedsel::orchestrator::RunConfig::default();
    c.rounds = 5;
    c.model = HyperParams {
        dim: 8,
        factors: 2,
        text_dim: 6,
        image_dim: 6,
        text_hidden: 6,
        image_hidden: 6,
        attn_hidden: 4,
        lr: 1e-2,
        local_epochs: 1,
        batch_size: 32,
        dcor_rows: 16,
        dropout: 0.0,
        ..HyperParams::default()
    };
    c.data.top_k = 10;
    c.data.validation_negatives = 20;
    c.partition.ubi = 0.3;
    c
}

/// Distance of the closest non-smooth point of the loss from its kink: every
/// ranking hinge `margin − (s⁺ − s⁻)` and every LeakyReLU pre-activation of
/// the two modality MLPs. Central differences across a kink measure a
/// one-sided slope, so gradient checks draw instances where this gap exceeds
/// what a single step of `eps` can move.
pub fn kink_gap(inst: &Instance) -> f64 {
    use fedsel::recmodel::{predict, project_modality, MlpView, Tensor};
    let (p, h) = (&inst.params, &inst.hyper);
    let score = |u, i| predict(u, i, p, &inst.features).unwrap();
    let hinge = inst
        .batch
        .iter()
        .flat_map(|s| {
            let pos = score(s.user, s.pos);
            s.negs.iter().map(move |&n| (h.margin - (pos - score(s.user, n))).abs())
        })
        .fold(f64::INFINITY, f64::min);
    let mut gap = hinge;
    let modalities = [
        (&inst.features.text, [Tensor::TextW1, Tensor::TextB1, Tensor::TextW2, Tensor::TextB2], h.text_hidden),
        (&inst.features.image, [Tensor::ImageW1, Tensor::ImageB1, Tensor::ImageW2, Tensor::ImageB2], h.image_hidden),
    ];
    for (raw, [w1, b1, w2, b2], hidden) in modalities {
        let (input, out) = (raw.cols(), h.dim);
        // Hidden layer alone: an identity second layer keeps the sign and
        // shrinks magnitudes by at most LEAKY_SLOPE², which the gap absorbs.
        let eye: Vec<f64> = (0..hidden * hidden).map(|k| f64::from(k % (hidden + 1) == 0)).collect();
        let zeros = vec![0.0; hidden];
        let first = MlpView::new(p.get(w1), p.get(b1), &eye, &zeros, input, hidden, hidden).unwrap();
        let full = MlpView::new(p.get(w1), p.get(b1), p.get(w2), p.get(b2), input, hidden, out).unwrap();
        for r in 0..raw.rows() {
            let x = raw.row(r);
            for v in project_modality(x, &first, 0.0, None).unwrap().into_iter().chain(project_modality(x, &full, 0.0, None).unwrap()) {
                gap = gap.min(v.abs());
            }
        }
    }
    gap
}
