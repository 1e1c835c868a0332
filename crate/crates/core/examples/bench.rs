//! Rough throughput/learning probe: centralised epochs over ML-100K train
//! with full-ranking AUC on the test split after each.
use std::time::Instant;

use fedsel::dataset::{load_movielens, split_per_user, synth_features};
use fedsel::recmodel::{train_local, ClientData, HyperParams, ModelParams, Scorer};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let log = load_movielens("data/ml-100k/u.data").unwrap();
    let split = split_per_user(&log, 0.8, 0).unwrap();
    let lr: f64 = args.get(1).map_or(1e-3, |s| s.parse().unwrap());
    let factors: usize = args.get(2).map_or(4, |s| s.parse().unwrap());
    let ha: usize = args.get(3).map_or(16, |s| s.parse().unwrap());
    let hyper = HyperParams {
        text_dim: 16,
        image_dim: 16,
        text_hidden: 16,
        image_hidden: 16,
        attn_hidden: ha,
        factors,
        lr,
        local_epochs: 1,
        ..HyperParams::default()
    };
    let f = synth_features(0, hyper.text_dim, hyper.image_dim, log.num_items()).unwrap();
    let mut params = ModelParams::init(&hyper, log.num_users(), log.num_items(), 0).unwrap();
    let samples: Vec<(u32, u32)> = split
        .train
        .iter()
        .enumerate()
        .flat_map(|(u, it)| it.iter().map(move |&i| (u as u32, i)))
        .collect();
    let mut sorted = split.train.clone();
    sorted.iter_mut().for_each(|v| v.sort_unstable());
    let data = ClientData { samples: &samples, positives: &sorted };
    for epoch in 0..8 {
        let t = Instant::now();
        let up = train_local(&params, &data, &f, &hyper, &mut fedsel::rng::stream(epoch, &[])).unwrap();
        params.add_scaled(1.0, &up.delta).unwrap();
        let tt = t.elapsed();
        let t = Instant::now();
        let scorer = Scorer::new(&params, &f).unwrap();
        let mut out = Vec::new();
        let (mut auc, mut n) = (0.0, 0);
        for u in 0..log.num_users() {
            if split.test[u].is_empty() { continue; }
            scorer.score_all(u as u32, &mut out);
            let mut is_train = vec![false; out.len()];
            for &i in &split.train[u] { is_train[i as usize] = true; }
            let mut is_test = vec![false; out.len()];
            for &i in &split.test[u] { is_test[i as usize] = true; }
            let neg: Vec<f64> = (0..out.len()).filter(|&i| !is_train[i] && !is_test[i]).map(|i| out[i]).collect();
            let mut c = 0.0;
            for &i in &split.test[u] {
                let s = out[i as usize];
                for &x in &neg { c += if s > x { 1.0 } else if s == x { 0.5 } else { 0.0 }; }
            }
            auc += c / (split.test[u].len() * neg.len()) as f64;
            n += 1;
        }
        println!("epoch {epoch}: train {tt:.2?} eval {:.2?} auc {:.4}", t.elapsed(), auc / n as f64);
    }
}
