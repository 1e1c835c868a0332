//! Factor-attention multimodal recommender with hand-derived gradients.
//!
//! Each item carries an ID embedding plus text and image features projected
//! through two-layer LeakyReLU MLPs. Embeddings are cut into `F` factor
//! blocks; per factor an attention MLP over `[p; v; t; x]` mixes the three
//! GELU-warped user-item dot products, and the factor scores are summed.

mod dcor;
mod engine;
mod hyper;
mod ops;
mod optim;
mod params;
mod train;

pub use dcor::distance_correlation;
pub use engine::{loss_and_grad, total_loss, LossOutput, Sample, Scorer};
pub use hyper::{HyperParams, CHANNELS};
pub use ops::{
    attention_weights, factor_score, factorize, gelu, gelu_grad, lrelu, project_modality, ranking_loss, softmax,
    AttentionView, MlpView, LEAKY_SLOPE,
};
pub use optim::{adamw_step, AdamState};
pub use params::{Layout, ModelParams, Tensor};
pub use train::{train_local, ClientData, LocalUpdate};


use crate::dataset::ModalityBundle;
use crate::error::{Error, Result};

/// Predicted preference of `user` for `item` (evaluation mode), computed
/// directly from the single-vector operations.
pub fn predict(user: u32, item: u32, params: &ModelParams, features: &ModalityBundle) -> Result<f64> {
    let layout = params.layout();
    if user as usize >= layout.num_users || item as usize >= layout.num_items {
        return Err(Error::invalid(format!("pair ({user}, {item}) out of range")));
    }
    let t = project_modality(features.text.row(item as usize), &params.text_mlp(), 0.0, None)?;
    let x = project_modality(features.image.row(item as usize), &params.image_mlp(), 0.0, None)?;
    let f = layout.factors;
    let (pb, vb) = (factorize(params.user(user), f)?, factorize(params.item(item), f)?);
    let (tb, xb) = (factorize(&t, f)?, factorize(&x, f)?);
    let att = params.attention();
    let mut score = 0.0;
    for k in 0..f {
        let h = [pb[k], vb[k], tb[k], xb[k]].concat();
        let alpha = attention_weights(&h, &att)?;
        score += factor_score(pb[k], vb[k], tb[k], xb[k], &alpha);
    }
    Ok(score)
}
