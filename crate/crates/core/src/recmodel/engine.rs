//! Fused forward/backward passes for mini-batches and a cached scorer for
//! full-catalogue evaluation.
//!
//! The attention pre-activation `A1 [p; v; t; x] + b1` splits into a user
//! part `A1_p p` and an item part `A1_v v + A1_t t + A1_x x + b1`, so both are
//! computed once per distinct user/item and only added per scored pair.

use std::collections::HashMap;

use rand::Rng;

use super::dcor::dcor_with_grad;
use super::hyper::{HyperParams, CHANNELS};
use super::ops::{gelu, gelu_grad, lrelu, lrelu_grad, softmax3, MlpView};
use super::params::{ModelParams, Tensor};
use crate::dataset::ModalityBundle;
use crate::error::{Error, Result};
use crate::linalg::{add_outer, add_transposed_matvec, affine, dot};
use crate::rng::Stream;

/// One positive pair with its sampled negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub user: u32,
    pub pos: u32,
    pub negs: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    /// Ranking term plus the weighted distance-correlation term.
    pub loss: f64,
    pub ranking: f64,
    pub dcor: f64,
    /// Mean hinge loss of each sample.
    pub per_sample: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Dims {
    d: usize,
    factors: usize,
    df: usize,
    ha: usize,
}

impl Dims {
    fn of(params: &ModelParams) -> Self {
        let layout = params.layout();
        let ha = layout.shape(Tensor::AttnB1).0;
        Self {
            d: layout.dim,
            factors: layout.factors,
            df: layout.dim / layout.factors,
            ha,
        }
    }

    /// Per-factor scratch: tanh activations, attention weights, dot products.
    fn store_len(&self) -> usize {
        self.factors * (self.ha + 2 * CHANNELS)
    }
}

fn check_features(params: &ModelParams, features: &ModalityBundle) -> Result<()> {
    let layout = params.layout();
    let (_, dt) = layout.shape(Tensor::TextW1);
    let (_, dv) = layout.shape(Tensor::ImageW1);
    if features.num_items() != layout.num_items || features.text_dim() != dt || features.image_dim() != dv {
        return Err(Error::shape(format!(
            "features {}x({}, {}) do not match model {}x({dt}, {dv})",
            features.num_items(),
            features.text_dim(),
            features.image_dim(),
            layout.num_items
        )));
    }
    Ok(())
}

/// `out[f*ha..] = A1[:, col..col+df] · v_f` (added when `accumulate`).
fn block_matvec(w1: &[f64], dims: Dims, col: usize, v: &[f64], out: &mut [f64], accumulate: bool) {
    let width = 4 * dims.df;
    for f in 0..dims.factors {
        let vf = &v[f * dims.df..(f + 1) * dims.df];
        let dst = &mut out[f * dims.ha..(f + 1) * dims.ha];
        for (r, o) in dst.iter_mut().enumerate() {
            let row = &w1[r * width + col..r * width + col + dims.df];
            let val = dot(row, vf);
            *o = if accumulate { *o + val } else { val };
        }
    }
}

/// Gradient of `block_matvec`: `dA1[:, col..] += g_f v_f^T`, `dv_f += A1[:, col..]^T g_f`.
fn block_matvec_back(w1: &[f64], dw1: &mut [f64], dims: Dims, col: usize, v: &[f64], g: &[f64], dv: &mut [f64]) {
    let width = 4 * dims.df;
    for f in 0..dims.factors {
        let vf = &v[f * dims.df..(f + 1) * dims.df];
        let dvf = &mut dv[f * dims.df..(f + 1) * dims.df];
        for (r, &gr) in g[f * dims.ha..(f + 1) * dims.ha].iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            let base = r * width + col;
            for c in 0..dims.df {
                dw1[base + c] += gr * vf[c];
                dvf[c] += gr * w1[base + c];
            }
        }
    }
}

/// Score of one pair; fills `store` with what the backward pass needs.
#[allow(clippy::too_many_arguments)]
#[inline]
fn pair_forward(
    dims: Dims,
    p: &[f64],
    v: &[f64],
    t: &[f64],
    x: &[f64],
    upart: &[f64],
    ipart: &[f64],
    a2: &[f64],
    b2: &[f64],
    mut store: Option<&mut [f64]>,
    g: &mut [f64],
) -> f64 {
    let (df, ha) = (dims.df, dims.ha);
    let mut score = 0.0;
    for f in 0..dims.factors {
        let (uf, itf) = (&upart[f * ha..(f + 1) * ha], &ipart[f * ha..(f + 1) * ha]);
        for r in 0..ha {
            g[r] = (uf[r] + itf[r]).tanh();
        }
        let mut logits = [b2[0], b2[1], b2[2]];
        for (c, l) in logits.iter_mut().enumerate() {
            *l += dot(&a2[c * ha..(c + 1) * ha], &g[..ha]);
        }
        let alpha = softmax3(logits);
        let pf = &p[f * df..(f + 1) * df];
        let z = [
            dot(pf, &v[f * df..(f + 1) * df]),
            dot(pf, &t[f * df..(f + 1) * df]),
            dot(pf, &x[f * df..(f + 1) * df]),
        ];
        score += alpha[0] * gelu(z[0]) + alpha[1] * gelu(z[1]) + alpha[2] * gelu(z[2]);
        if let Some(s) = store.as_deref_mut() {
            let slot = &mut s[f * (ha + 6)..(f + 1) * (ha + 6)];
            slot[..ha].copy_from_slice(&g[..ha]);
            slot[ha..ha + 3].copy_from_slice(&alpha);
            slot[ha + 3..ha + 6].copy_from_slice(&z);
        }
    }
    score
}

/// Per-item forward state of both modality MLPs.
struct ItemState {
    text_h1: Vec<f64>,
    text_keep: Vec<f64>,
    text_z2: Vec<f64>,
    text_out: Vec<f64>,
    image_h1: Vec<f64>,
    image_keep: Vec<f64>,
    image_z2: Vec<f64>,
    image_out: Vec<f64>,
    ipart: Vec<f64>,
}

fn mlp_forward(mlp: &MlpView<'_>, raw: &[f64], dropout: f64, rng: Option<&mut Stream>, h1: &mut [f64], keep: &mut [f64], z2: &mut [f64], out: &mut [f64]) {
    affine(mlp.w1, mlp.b1, raw, h1);
    match rng {
        Some(rng) if dropout > 0.0 => {
            let scale = 1.0 / (1.0 - dropout);
            for k in keep.iter_mut() {
                *k = if rng.random::<f64>() < dropout { 0.0 } else { scale };
            }
        }
        _ => keep.iter_mut().for_each(|k| *k = 1.0),
    }
    let a1: Vec<f64> = h1.iter().zip(keep.iter()).map(|(h, k)| lrelu(*h) * k).collect();
    affine(mlp.w2, mlp.b2, &a1, z2);
    for (o, z) in out.iter_mut().zip(z2.iter()) {
        *o = lrelu(*z);
    }
}

#[allow(clippy::too_many_arguments)]
fn mlp_backward(mlp: &MlpView<'_>, raw: &[f64], h1: &[f64], keep: &[f64], z2: &[f64], dout: &[f64], grads: [&mut [f64]; 4]) {
    let [dw1, db1, dw2, db2] = grads;
    let dz2: Vec<f64> = dout.iter().zip(z2).map(|(g, z)| g * lrelu_grad(*z)).collect();
    let a1: Vec<f64> = h1.iter().zip(keep).map(|(h, k)| lrelu(*h) * k).collect();
    add_outer(dw2, &dz2, &a1);
    for (b, g) in db2.iter_mut().zip(&dz2) {
        *b += g;
    }
    let mut da1 = vec![0.0; h1.len()];
    add_transposed_matvec(mlp.w2, &dz2, &mut da1);
    let dh1: Vec<f64> = da1
        .iter()
        .zip(h1.iter().zip(keep))
        .map(|(g, (h, k))| g * k * lrelu_grad(*h))
        .collect();
    add_outer(dw1, &dh1, raw);
    for (b, g) in db1.iter_mut().zip(&dh1) {
        *b += g;
    }
}

fn item_state(params: &ModelParams, features: &ModalityBundle, dims: Dims, item: u32, dropout: f64, mut rng: Option<&mut Stream>) -> ItemState {
    let text = params.text_mlp();
    let image = params.image_mlp();
    let mut s = ItemState {
        text_h1: vec![0.0; text.hidden],
        text_keep: vec![0.0; text.hidden],
        text_z2: vec![0.0; dims.d],
        text_out: vec![0.0; dims.d],
        image_h1: vec![0.0; image.hidden],
        image_keep: vec![0.0; image.hidden],
        image_z2: vec![0.0; dims.d],
        image_out: vec![0.0; dims.d],
        ipart: vec![0.0; dims.factors * dims.ha],
    };
    mlp_forward(&text, features.text.row(item as usize), dropout, rng.as_deref_mut(), &mut s.text_h1, &mut s.text_keep, &mut s.text_z2, &mut s.text_out);
    mlp_forward(&image, features.image.row(item as usize), dropout, rng, &mut s.image_h1, &mut s.image_keep, &mut s.image_z2, &mut s.image_out);
    let w1 = params.get(Tensor::AttnW1);
    let df = dims.df;
    block_matvec(w1, dims, df, params.item(item), &mut s.ipart, false);
    block_matvec(w1, dims, 2 * df, &s.text_out, &mut s.ipart, true);
    block_matvec(w1, dims, 3 * df, &s.image_out, &mut s.ipart, true);
    let b1 = params.get(Tensor::AttnB1);
    for f in 0..dims.factors {
        for (o, b) in s.ipart[f * dims.ha..(f + 1) * dims.ha].iter_mut().zip(b1) {
            *o += b;
        }
    }
    s
}

fn user_part(params: &ModelParams, dims: Dims, user: u32) -> Vec<f64> {
    let mut out = vec![0.0; dims.factors * dims.ha];
    block_matvec(params.get(Tensor::AttnW1), dims, 0, params.user(user), &mut out, false);
    out
}

/// Mini-batch objective and its analytic gradient, written into `grad`
/// (overwritten). Dropout masks are drawn from `rng` when given (training
/// mode); without it the pass is deterministic evaluation mode.
pub fn loss_and_grad(
    batch: &[Sample],
    params: &ModelParams,
    features: &ModalityBundle,
    hyper: &HyperParams,
    rng: Option<&mut Stream>,
    grad: &mut ModelParams,
) -> Result<LossOutput> {
    check_features(params, features)?;
    if grad.layout() != params.layout() {
        return Err(Error::shape("gradient buffer layout differs from parameters"));
    }
    if batch.is_empty() {
        return Err(Error::Empty("mini-batch".into()));
    }
    let dims = Dims::of(params);
    let (d, ha) = (dims.d, dims.ha);
    grad.data_mut().iter_mut().for_each(|g| *g = 0.0);

    // Distinct users and items, in first-seen order.
    let mut user_slot: HashMap<u32, usize> = HashMap::new();
    let mut users = Vec::new();
    let mut item_slot: HashMap<u32, usize> = HashMap::new();
    let mut items = Vec::new();
    for s in batch {
        user_slot.entry(s.user).or_insert_with(|| {
            users.push(s.user);
            users.len() - 1
        });
        for &i in std::iter::once(&s.pos).chain(&s.negs) {
            item_slot.entry(i).or_insert_with(|| {
                items.push(i);
                items.len() - 1
            });
        }
    }
    let mut rng = rng;
    let dropout = if rng.is_some() { hyper.dropout } else { 0.0 };
    let item_states: Vec<ItemState> = items
        .iter()
        .map(|&i| item_state(params, features, dims, i, dropout, rng.as_deref_mut()))
        .collect();
    let user_parts: Vec<Vec<f64>> = users.iter().map(|&u| user_part(params, dims, u)).collect();

    let mut du = vec![vec![0.0; d]; users.len()];
    let mut du_part = vec![vec![0.0; dims.factors * ha]; users.len()];
    let mut dv = vec![vec![0.0; d]; items.len()];
    let mut dt = vec![vec![0.0; d]; items.len()];
    let mut dx = vec![vec![0.0; d]; items.len()];
    let mut di_part = vec![vec![0.0; dims.factors * ha]; items.len()];
    let mut da2 = vec![0.0; CHANNELS * ha];
    let mut db2 = [0.0; CHANNELS];

    let a2 = params.get(Tensor::AttnW2);
    let b2 = params.get(Tensor::AttnB2);
    let n = batch.len() as f64;
    let mut per_sample = Vec::with_capacity(batch.len());
    let mut ranking = 0.0;
    let stride = dims.store_len();
    let mut store = Vec::new();
    let mut g = vec![0.0; ha];
    let mut dg = vec![0.0; ha];

    for s in batch {
        let us = user_slot[&s.user];
        let p = params.user(s.user);
        let pair_items: Vec<u32> = std::iter::once(s.pos).chain(s.negs.iter().copied()).collect();
        store.resize(pair_items.len() * stride, 0.0);
        let mut scores = Vec::with_capacity(pair_items.len());
        for (k, &i) in pair_items.iter().enumerate() {
            let st = &item_states[item_slot[&i]];
            scores.push(pair_forward(
                dims,
                p,
                params.item(i),
                &st.text_out,
                &st.image_out,
                &user_parts[us],
                &st.ipart,
                a2,
                b2,
                Some(&mut store[k * stride..(k + 1) * stride]),
                &mut g,
            ));
        }
        let k_neg = s.negs.len();
        let mut sample_loss = 0.0;
        let mut gscore = vec![0.0; pair_items.len()];
        if k_neg > 0 {
            let w = 1.0 / (n * k_neg as f64);
            for k in 0..k_neg {
                let hinge = hyper.margin - (scores[0] - scores[k + 1]);
                if hinge > 0.0 {
                    sample_loss += hinge;
                    gscore[0] -= w;
                    gscore[k + 1] += w;
                }
            }
            sample_loss /= k_neg as f64;
        }
        per_sample.push(sample_loss);
        ranking += sample_loss / n;

        for (k, &i) in pair_items.iter().enumerate() {
            let gs = gscore[k];
            if gs == 0.0 {
                continue;
            }
            let is = item_slot[&i];
            let st = &item_states[is];
            let v = params.item(i);
            for f in 0..dims.factors {
                let slot = &store[k * stride + f * (ha + 6)..k * stride + (f + 1) * (ha + 6)];
                let (gv, alpha, z) = (&slot[..ha], &slot[ha..ha + 3], &slot[ha + 3..ha + 6]);
                let gel = [gelu(z[0]), gelu(z[1]), gelu(z[2])];
                let dalpha = [gs * gel[0], gs * gel[1], gs * gel[2]];
                let dz = [
                    gs * alpha[0] * gelu_grad(z[0]),
                    gs * alpha[1] * gelu_grad(z[1]),
                    gs * alpha[2] * gelu_grad(z[2]),
                ];
                let mean = alpha[0] * dalpha[0] + alpha[1] * dalpha[1] + alpha[2] * dalpha[2];
                let mut dlogit = [0.0; CHANNELS];
                for c in 0..CHANNELS {
                    dlogit[c] = alpha[c] * (dalpha[c] - mean);
                    db2[c] += dlogit[c];
                }
                for r in 0..ha {
                    dg[r] = 0.0;
                }
                for c in 0..CHANNELS {
                    let row = &a2[c * ha..(c + 1) * ha];
                    let drow = &mut da2[c * ha..(c + 1) * ha];
                    for r in 0..ha {
                        drow[r] += dlogit[c] * gv[r];
                        dg[r] += dlogit[c] * row[r];
                    }
                }
                let dup = &mut du_part[us][f * ha..(f + 1) * ha];
                let dip = &mut di_part[is][f * ha..(f + 1) * ha];
                for r in 0..ha {
                    let dpre = dg[r] * (1.0 - gv[r] * gv[r]);
                    dup[r] += dpre;
                    dip[r] += dpre;
                }
                let span = f * dims.df..(f + 1) * dims.df;
                let (pf, vf, tf, xf) = (&p[span.clone()], &v[span.clone()], &st.text_out[span.clone()], &st.image_out[span.clone()]);
                for c in 0..dims.df {
                    let j = span.start + c;
                    du[us][j] += dz[0] * vf[c] + dz[1] * tf[c] + dz[2] * xf[c];
                    dv[is][j] += dz[0] * pf[c];
                    dt[is][j] += dz[1] * pf[c];
                    dx[is][j] += dz[2] * pf[c];
                }
            }
        }
    }

    // Distance correlation between factor blocks of the same modality.
    let mut dcor_total = 0.0;
    let rows = batch.len().min(hyper.dcor_rows);
    if hyper.dcor_weight > 0.0 && rows >= 2 && dims.factors >= 2 {
        let sample = &batch[..rows];
        let user_rows: Vec<&[f64]> = sample.iter().map(|s| params.user(s.user)).collect();
        let item_rows: Vec<&[f64]> = sample.iter().map(|s| params.item(s.pos)).collect();
        let text_rows: Vec<&[f64]> = sample.iter().map(|s| item_states[item_slot[&s.pos]].text_out.as_slice()).collect();
        let image_rows: Vec<&[f64]> = sample.iter().map(|s| item_states[item_slot[&s.pos]].image_out.as_slice()).collect();
        let df = dims.df;
        for (modality, mrows) in [&user_rows, &item_rows, &text_rows, &image_rows].into_iter().enumerate() {
            for fa in 0..dims.factors {
                for fb in fa + 1..dims.factors {
                    let xa: Vec<&[f64]> = mrows.iter().map(|r| &r[fa * df..(fa + 1) * df]).collect();
                    let xb: Vec<&[f64]> = mrows.iter().map(|r| &r[fb * df..(fb + 1) * df]).collect();
                    let (val, ga, gb) = dcor_with_grad(&xa, &xb, true);
                    dcor_total += val;
                    for (row, s) in sample.iter().enumerate() {
                        let target: &mut Vec<f64> = match modality {
                            0 => &mut du[user_slot[&s.user]],
                            1 => &mut dv[item_slot[&s.pos]],
                            2 => &mut dt[item_slot[&s.pos]],
                            _ => &mut dx[item_slot[&s.pos]],
                        };
                        for c in 0..df {
                            target[fa * df + c] += hyper.dcor_weight * ga[row * df + c];
                            target[fb * df + c] += hyper.dcor_weight * gb[row * df + c];
                        }
                    }
                }
            }
        }
    }

    let loss = ranking + hyper.dcor_weight * dcor_total;
    if !loss.is_finite() {
        return Err(Error::NonFinite(params.first_non_finite().unwrap_or("loss").to_string()));
    }

    grad.get_mut(Tensor::AttnW2).copy_from_slice(&da2);
    grad.get_mut(Tensor::AttnB2).copy_from_slice(&db2);
    let w1 = params.get(Tensor::AttnW1).to_vec();
    let mut dw1 = vec![0.0; w1.len()];
    let mut db1 = vec![0.0; ha];
    {
        let gue = grad.get_mut(Tensor::UserEmb);
        for (slot, &u) in users.iter().enumerate() {
            let mut dp = du[slot].clone();
            block_matvec_back(&w1, &mut dw1, dims, 0, params.user(u), &du_part[slot], &mut dp);
            let row = &mut gue[u as usize * d..(u as usize + 1) * d];
            for (r, g) in row.iter_mut().zip(&dp) {
                *r += g;
            }
        }
    }
    let df = dims.df;
    for (slot, &i) in items.iter().enumerate() {
        let dip = &di_part[slot];
        for f in 0..dims.factors {
            for r in 0..ha {
                db1[r] += dip[f * ha + r];
            }
        }
        let st = &item_states[slot];
        block_matvec_back(&w1, &mut dw1, dims, df, params.item(i), dip, &mut dv[slot]);
        block_matvec_back(&w1, &mut dw1, dims, 2 * df, &st.text_out, dip, &mut dt[slot]);
        block_matvec_back(&w1, &mut dw1, dims, 3 * df, &st.image_out, dip, &mut dx[slot]);
        let gie = grad.get_mut(Tensor::ItemEmb);
        for (r, g) in gie[i as usize * d..(i as usize + 1) * d].iter_mut().zip(&dv[slot]) {
            *r += g;
        }
    }
    grad.get_mut(Tensor::AttnW1).copy_from_slice(&dw1);
    grad.get_mut(Tensor::AttnB1).copy_from_slice(&db1);

    // Modality MLPs.
    let text = params.text_mlp();
    let image = params.image_mlp();
    let mut tg = [
        vec![0.0; text.w1.len()],
        vec![0.0; text.b1.len()],
        vec![0.0; text.w2.len()],
        vec![0.0; text.b2.len()],
    ];
    let mut ig = [
        vec![0.0; image.w1.len()],
        vec![0.0; image.b1.len()],
        vec![0.0; image.w2.len()],
        vec![0.0; image.b2.len()],
    ];
    for (slot, &i) in items.iter().enumerate() {
        let st = &item_states[slot];
        if dt[slot].iter().any(|&g| g != 0.0) {
            let [a, b, c, e] = &mut tg;
            mlp_backward(&text, features.text.row(i as usize), &st.text_h1, &st.text_keep, &st.text_z2, &dt[slot], [a, b, c, e]);
        }
        if dx[slot].iter().any(|&g| g != 0.0) {
            let [a, b, c, e] = &mut ig;
            mlp_backward(&image, features.image.row(i as usize), &st.image_h1, &st.image_keep, &st.image_z2, &dx[slot], [a, b, c, e]);
        }
    }
    for (t, v) in [Tensor::TextW1, Tensor::TextB1, Tensor::TextW2, Tensor::TextB2].into_iter().zip(&tg) {
        grad.get_mut(t).copy_from_slice(v);
    }
    for (t, v) in [Tensor::ImageW1, Tensor::ImageB1, Tensor::ImageW2, Tensor::ImageB2].into_iter().zip(&ig) {
        grad.get_mut(t).copy_from_slice(v);
    }

    Ok(LossOutput {
        loss,
        ranking,
        dcor: dcor_total,
        per_sample,
    })
}

/// `loss_and_grad` with a freshly allocated gradient.
pub fn total_loss(batch: &[Sample], params: &ModelParams, features: &ModalityBundle, hyper: &HyperParams, rng: Option<&mut Stream>) -> Result<(LossOutput, ModelParams)> {
    let mut grad = ModelParams::zeros(params.layout().clone());
    let out = loss_and_grad(batch, params, features, hyper, rng, &mut grad)?;
    Ok((out, grad))
}

/// Scores any (user, item) pair in evaluation mode with all item-side work
/// precomputed once.
pub struct Scorer<'a> {
    params: &'a ModelParams,
    dims: Dims,
    text: Vec<f64>,
    image: Vec<f64>,
    ipart: Vec<f64>,
}

impl<'a> Scorer<'a> {
    pub fn new(params: &'a ModelParams, features: &ModalityBundle) -> Result<Self> {
        check_features(params, features)?;
        let dims = Dims::of(params);
        let n = params.layout().num_items;
        let mut text = Vec::with_capacity(n * dims.d);
        let mut image = Vec::with_capacity(n * dims.d);
        let mut ipart = Vec::with_capacity(n * dims.factors * dims.ha);
        for i in 0..n as u32 {
            let st = item_state(params, features, dims, i, 0.0, None);
            text.extend_from_slice(&st.text_out);
            image.extend_from_slice(&st.image_out);
            ipart.extend_from_slice(&st.ipart);
        }
        Ok(Self {
            params,
            dims,
            text,
            image,
            ipart,
        })
    }

    pub fn num_items(&self) -> usize {
        self.params.layout().num_items
    }

    /// Scores of `user` against `items`, written into `out`.
    pub fn score_items(&self, user: u32, items: &[u32], out: &mut Vec<f64>) {
        let dims = self.dims;
        let upart = user_part(self.params, dims, user);
        let p = self.params.user(user);
        let a2 = self.params.get(Tensor::AttnW2);
        let b2 = self.params.get(Tensor::AttnB2);
        let (d, fh) = (dims.d, dims.factors * dims.ha);
        let mut g = vec![0.0; dims.ha];
        out.clear();
        out.extend(items.iter().map(|&i| {
            let i = i as usize;
            pair_forward(
                dims,
                p,
                self.params.item(i as u32),
                &self.text[i * d..(i + 1) * d],
                &self.image[i * d..(i + 1) * d],
                &upart,
                &self.ipart[i * fh..(i + 1) * fh],
                a2,
                b2,
                None,
                &mut g,
            )
        }));
    }

    pub fn score_all(&self, user: u32, out: &mut Vec<f64>) {
        let all: Vec<u32> = (0..self.num_items() as u32).collect();
        self.score_items(user, &all, out);
    }

    pub fn score(&self, user: u32, item: u32) -> f64 {
        let mut out = Vec::with_capacity(1);
        self.score_items(user, &[item], &mut out);
        out[0]
    }
}
