//! Spec examples and identities for the recommender that need whole-model
//! fixtures.

mod support;

use fedsel::dataset::{synth_features, ModalityBundle};
use fedsel::linalg::Matrix;
use fedsel::recmodel::{
    predict, total_loss, train_local, ClientData, HyperParams, ModelParams, Sample, Scorer, Tensor,
};
use fedsel::rng;
use rand::Rng;
use support::*;

fn zero_features(items: usize, hyper: &HyperParams) -> ModalityBundle {
    let mut f = synth_features(1, hyper.text_dim, hyper.image_dim, items).unwrap();
    f.text = Matrix::zeros(items, hyper.text_dim);
    f.image = Matrix::zeros(items, hyper.image_dim);
    f
}

#[test]
fn zero_params_predict_zero_and_loss_one() {
    let hyper = HyperParams {
        dcor_weight: 0.0,
        ..small_hyper()
    };
    let params = ModelParams::zeros(ModelParams::init(&hyper, 3, 5, 0).unwrap().layout().clone());
    let features = synth_features(3, hyper.text_dim, hyper.image_dim, 5).unwrap();
    for u in 0..3 {
        for i in 0..5 {
            assert_eq!(predict(u, i, &params, &features).unwrap(), 0.0);
        }
    }
    let batch = vec![
        Sample {
            user: 0,
            pos: 1,
            negs: vec![2, 3, 4],
        },
        Sample {
            user: 2,
            pos: 0,
            negs: vec![1, 1, 4],
        },
    ];
    let (out, _) = total_loss(&batch, &params, &features, &hyper, None).unwrap();
    assert_eq!(out.loss, 1.0);
}

#[test]
fn scorer_matches_reference_predict() {
    let inst = random_instance(11, 4);
    let scorer = Scorer::new(&inst.params, &inst.features).unwrap();
    for u in 0..6 {
        for i in 0..10 {
            let a = scorer.score(u, i);
            let b = predict(u, i, &inst.params, &inst.features).unwrap();
            assert!((a - b).abs() < 1e-12, "({u},{i}) {a} vs {b}");
        }
    }
    assert!(predict(6, 0, &inst.params, &inst.features).is_err());
}

#[test]
fn batch_loss_matches_predict_hinge() {
    let mut inst = random_instance(5, 8);
    inst.hyper.dcor_weight = 0.0;
    let (out, _) = total_loss(&inst.batch, &inst.params, &inst.features, &inst.hyper, None).unwrap();
    let mut expect = 0.0;
    for s in &inst.batch {
        let pos = predict(s.user, s.pos, &inst.params, &inst.features).unwrap();
        let negs: Vec<f64> = s.negs.iter().map(|&n| predict(s.user, n, &inst.params, &inst.features).unwrap()).collect();
        expect += fedsel::recmodel::ranking_loss(pos, &negs, inst.hyper.margin);
    }
    expect /= inst.batch.len() as f64;
    assert!((out.loss - expect).abs() < 1e-12);
}

/// F=2 with identical blocks in every embedding and identical attention
/// inputs scores exactly twice the F=1 model on one block.
#[test]
fn two_identical_factors_double_the_score() {
    let h1 = HyperParams {
        dim: 2,
        factors: 1,
        ..small_hyper()
    };
    let h2 = HyperParams {
        dim: 4,
        factors: 2,
        ..small_hyper()
    };
    let mut p1 = ModelParams::init(&h1, 2, 3, 1).unwrap();
    let mut p2 = ModelParams::init(&h2, 2, 3, 1).unwrap();
    let mut r = rng::stream(9, &[]);
    for t in [Tensor::UserEmb, Tensor::ItemEmb] {
        for v in p1.get_mut(t) {
            *v = r.random_range(-2.0..2.0);
        }
        let single = p1.get(t).to_vec();
        let doubled: Vec<f64> = single.chunks(2).flat_map(|c| [c[0], c[1], c[0], c[1]]).collect();
        p2.get_mut(t).copy_from_slice(&doubled);
    }
    for t in [Tensor::AttnW1, Tensor::AttnB1, Tensor::AttnW2, Tensor::AttnB2] {
        for v in p1.get_mut(t) {
            *v = r.random_range(-1.0..1.0);
        }
        let src = p1.get(t).to_vec();
        p2.get_mut(t).copy_from_slice(&src);
    }
    // Zero modality features make both projections output zero blocks.
    let f = zero_features(3, &h1);
    for u in 0..2 {
        for i in 0..3 {
            let one = predict(u, i, &p1, &f).unwrap();
            let two = predict(u, i, &p2, &f).unwrap();
            assert!((two - 2.0 * one).abs() < 1e-12, "{two} vs 2×{one}");
        }
    }
}

/// Independent GELU: z·Φ(z) with Φ from erf.
fn gelu_ref(z: f64) -> f64 {
    0.5 * z * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

#[test]
fn id_only_reduction_matches_standalone_formula() {
    let hyper = HyperParams {
        dim: 6,
        factors: 3,
        ..small_hyper()
    };
    let mut params = ModelParams::init(&hyper, 4, 7, 2).unwrap();
    let mut r = rng::stream(3, &[]);
    for v in params.data_mut() {
        *v = r.random_range(-1.0..1.0);
    }
    // α forced to (1, 0, 0): A_2 = 0 and b_2 = (800, 0, 0) (exp(-800) underflows).
    params.get_mut(Tensor::AttnW2).fill(0.0);
    params.get_mut(Tensor::AttnB2).copy_from_slice(&[800.0, 0.0, 0.0]);
    let features = synth_features(4, hyper.text_dim, hyper.image_dim, 7).unwrap();
    for u in 0..4u32 {
        for i in 0..7u32 {
            let p = params.user(u);
            let v = params.item(i);
            let expect: f64 = (0..3)
                .map(|f| gelu_ref((0..2).map(|c| p[2 * f + c] * v[2 * f + c]).sum()))
                .sum();
            let got = predict(u, i, &params, &features).unwrap();
            assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        }
    }
}

#[test]
fn hinge_saturates_when_gaps_exceed_margin() {
    let hyper = HyperParams {
        dim: 2,
        factors: 1,
        dcor_weight: 0.0,
        ..small_hyper()
    };
    let mut params = ModelParams::init(&hyper, 1, 3, 0).unwrap();
    params.get_mut(Tensor::AttnW2).fill(0.0);
    params.get_mut(Tensor::AttnB2).copy_from_slice(&[800.0, 0.0, 0.0]);
    params.get_mut(Tensor::UserEmb).copy_from_slice(&[1.0, 0.0]);
    let f = zero_features(3, &hyper);
    let batch = vec![Sample {
        user: 0,
        pos: 0,
        negs: vec![1, 2],
    }];
    // Item scores GELU(v_0): pos 1.5 (gap ≈ 1.4 > m over the slightly
    // negative negatives), then doubled gap.
    for scale in [1.0, 2.0] {
        params
            .get_mut(Tensor::ItemEmb)
            .copy_from_slice(&[1.5 * scale, 0.0, -1.0 * scale, 0.0, -2.0 * scale, 0.0]);
        let (out, _) = total_loss(&batch, &params, &f, &hyper, None).unwrap();
        assert_eq!(out.loss, 0.0);
    }
}

fn toy_client(seed: u64) -> (Vec<(u32, u32)>, Vec<Vec<u32>>) {
    let mut r = rng::stream(seed, &[77]);
    let mut positives = vec![Vec::new(); 5];
    while positives.iter().map(Vec::len).sum::<usize>() < 50 {
        let u = r.random_range(0..5u32);
        let i = r.random_range(0..20u32);
        if !positives[u as usize].contains(&i) {
            positives[u as usize].push(i);
        }
    }
    positives.iter_mut().for_each(|p| p.sort_unstable());
    let samples = positives
        .iter()
        .enumerate()
        .flat_map(|(u, items)| items.iter().map(move |&i| (u as u32, i)))
        .collect();
    (samples, positives)
}

#[test]
fn train_local_zero_epochs_and_determinism() {
    let hyper = HyperParams {
        local_epochs: 0,
        batch_size: 8,
        ..small_hyper()
    };
    let (samples, positives) = toy_client(1);
    let global = ModelParams::init(&hyper, 5, 20, 3).unwrap();
    let f = synth_features(2, hyper.text_dim, hyper.image_dim, 20).unwrap();
    let data = ClientData {
        samples: &samples,
        positives: &positives,
    };
    let up = train_local(&global, &data, &f, &hyper, &mut rng::stream(5, &[])).unwrap();
    assert!(up.delta.data().iter().all(|&v| v == 0.0));
    assert_eq!(up.num_samples, 50);
    assert_eq!(up.losses.len(), 50);

    let hyper = HyperParams {
        local_epochs: 2,
        dropout: 0.2,
        ..hyper
    };
    let a = train_local(&global, &data, &f, &hyper, &mut rng::stream(5, &[])).unwrap();
    let b = train_local(&global, &data, &f, &hyper, &mut rng::stream(5, &[])).unwrap();
    assert_eq!(a.delta.data(), b.delta.data());
    assert_eq!(a.losses, b.losses);
    assert!(a.delta.data().iter().any(|&v| v != 0.0));

    let empty = ClientData {
        samples: &[],
        positives: &positives,
    };
    assert!(train_local(&global, &empty, &f, &hyper, &mut rng::stream(5, &[])).is_err());
}

#[test]
fn one_epoch_descends_on_toy_client() {
    let hyper = HyperParams {
        lr: 0.01,
        local_epochs: 1,
        batch_size: 10,
        dropout: 0.0,
        ..HyperParams::default()
    };
    let mut before = 0.0;
    let mut after = 0.0;
    for seed in 0..5 {
        let (samples, positives) = toy_client(seed);
        let global = ModelParams::init(&hyper, 5, 20, seed).unwrap();
        let f = synth_features(seed, hyper.text_dim, hyper.image_dim, 20).unwrap();
        // Fixed evaluation negatives so both losses see the same batch.
        let mut r = rng::stream(seed, &[1]);
        let batch: Vec<Sample> = samples
            .iter()
            .map(|&(user, pos)| Sample {
                user,
                pos,
                negs: fedsel::dataset::sample_negatives(&positives[user as usize], 20, hyper.negatives, &mut r).unwrap(),
            })
            .collect();
        let data = ClientData {
            samples: &samples,
            positives: &positives,
        };
        let up = train_local(&global, &data, &f, &hyper, &mut rng::stream(seed, &[2])).unwrap();
        let mut local = global.clone();
        local.add_scaled(1.0, &up.delta).unwrap();
        before += total_loss(&batch, &global, &f, &hyper, None).unwrap().0.loss;
        after += total_loss(&batch, &local, &f, &hyper, None).unwrap().0.loss;
    }
    assert!(after <= before, "loss {before} -> {after}");
}
