//! Client-side local optimisation.

use rand::seq::SliceRandom;

use super::engine::{loss_and_grad, Sample};
use super::hyper::HyperParams;
use super::optim::{adamw_step, AdamState};
use super::params::ModelParams;
use crate::dataset::{sample_negatives, ModalityBundle};
use crate::error::{Error, Result};
use crate::rng::Stream;

/// A client's private training data.
#[derive(Debug, Clone, Copy)]
pub struct ClientData<'a> {
    /// `(user, positive item)` training pairs.
    pub samples: &'a [(u32, u32)],
    /// Sorted known positives per user, excluded from negative sampling.
    pub positives: &'a [Vec<u32>],
}

/// What a client sends back after local training.
#[derive(Debug, Clone)]
pub struct LocalUpdate {
    /// `local - global`.
    pub delta: ModelParams,
    /// `|B_i|`, the number of local training pairs.
    pub num_samples: usize,
    /// Per-sample mean hinge losses from the final local epoch.
    pub losses: Vec<f64>,
    /// Sample-epochs processed.
    pub work_units: f64,
}

pub(crate) fn draw_samples(pairs: &[(u32, u32)], positives: &[Vec<u32>], num_items: usize, k: usize, rng: &mut Stream) -> Result<Vec<Sample>> {
    pairs
        .iter()
        .map(|&(user, pos)| {
            Ok(Sample {
                user,
                pos,
                negs: sample_negatives(&positives[user as usize], num_items, k, rng)?,
            })
        })
        .collect()
}

/// Runs `local_epochs` epochs of shuffled mini-batch AdamW from a private copy
/// of `global` and returns the parameter delta.
pub fn train_local(global: &ModelParams, data: &ClientData<'_>, features: &ModalityBundle, hyper: &HyperParams, rng: &mut Stream) -> Result<LocalUpdate> {
    if data.samples.is_empty() {
        return Err(Error::Empty("client has no training data".into()));
    }
    hyper.validate()?;
    let num_items = global.layout().num_items;
    let mut local = global.clone();
    let mut grad = ModelParams::zeros(global.layout().clone());
    let mut opt = AdamState::new(global.len());
    let mut order: Vec<usize> = (0..data.samples.len()).collect();
    let mut losses = vec![0.0; data.samples.len()];

    for _epoch in 0..hyper.local_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(hyper.batch_size) {
            let pairs: Vec<(u32, u32)> = chunk.iter().map(|&k| data.samples[k]).collect();
            let batch = draw_samples(&pairs, data.positives, num_items, hyper.negatives, rng)?;
            let out = loss_and_grad(&batch, &local, features, hyper, Some(rng), &mut grad)?;
            for (&k, l) in chunk.iter().zip(out.per_sample) {
                losses[k] = l;
            }
            adamw_step(&mut local, &grad, &mut opt, hyper.lr, hyper.weight_decay)?;
        }
        if let Some(name) = local.first_non_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
    }
    if hyper.local_epochs == 0 {
        // No training: report the current model's losses so data quality is defined.
        for chunk in order.chunks(hyper.batch_size) {
            let pairs: Vec<(u32, u32)> = chunk.iter().map(|&k| data.samples[k]).collect();
            let batch = draw_samples(&pairs, data.positives, num_items, hyper.negatives, rng)?;
            let out = loss_and_grad(&batch, &local, features, hyper, None, &mut grad)?;
            for (&k, l) in chunk.iter().zip(out.per_sample) {
                losses[k] = l;
            }
        }
    }
    Ok(LocalUpdate {
        delta: local.sub(global)?,
        num_samples: data.samples.len(),
        losses,
        work_units: (data.samples.len() * hyper.local_epochs) as f64,
    })
}
