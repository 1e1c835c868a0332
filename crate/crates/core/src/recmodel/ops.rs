//! Single-vector building blocks of the scoring function. The batched engine
//! fuses these for speed; these stay as the readable reference path.

use rand::Rng;

use super::hyper::CHANNELS;
use crate::error::{Error, Result};
use crate::linalg::{affine, dot};
use crate::rng::Stream;

pub const LEAKY_SLOPE: f64 = 0.2;

#[inline]
pub fn lrelu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

/// Subgradient at zero taken from the positive side.
#[inline]
pub fn lrelu_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Standard normal CDF, via `erfc` so the lower tail keeps full relative
/// precision (`1 + erf(x)` cancels to 0 below z ≈ −8.3).
#[inline]
pub fn phi_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

/// Exact GELU, `z * Φ(z)`.
#[inline]
pub fn gelu(z: f64) -> f64 {
    z * phi_cdf(z)
}

#[inline]
pub fn gelu_grad(z: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    phi_cdf(z) + z * INV_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[inline]
pub fn softmax3(logits: [f64; CHANNELS]) -> [f64; CHANNELS] {
    let max = logits[0].max(logits[1]).max(logits[2]);
    let e = [(logits[0] - max).exp(), (logits[1] - max).exp(), (logits[2] - max).exp()];
    let s = e[0] + e[1] + e[2];
    [e[0] / s, e[1] / s, e[2] / s]
}

/// Borrowed weights of a two-layer modality MLP.
#[derive(Debug, Clone, Copy)]
pub struct MlpView<'a> {
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub w2: &'a [f64],
    pub b2: &'a [f64],
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl<'a> MlpView<'a> {
    pub fn new(w1: &'a [f64], b1: &'a [f64], w2: &'a [f64], b2: &'a [f64], input: usize, hidden: usize, output: usize) -> Result<Self> {
        if w1.len() != hidden * input || b1.len() != hidden || w2.len() != output * hidden || b2.len() != output {
            return Err(Error::shape(format!(
                "MLP weights inconsistent with {input} -> {hidden} -> {output}"
            )));
        }
        Ok(Self {
            w1,
            b1,
            w2,
            b2,
            input,
            hidden,
            output,
        })
    }
}

/// `LReLU(W2 · drop(LReLU(W1 x + b1)) + b2)`. Dropout (inverted scaling) is
/// applied to the hidden layer only when an RNG is supplied.
pub fn project_modality(raw: &[f64], mlp: &MlpView<'_>, dropout: f64, rng: Option<&mut Stream>) -> Result<Vec<f64>> {
    if raw.len() != mlp.input {
        return Err(Error::shape(format!(
            "raw feature has {} entries, MLP expects {}",
            raw.len(),
            mlp.input
        )));
    }
    let mut hidden = vec![0.0; mlp.hidden];
    affine(mlp.w1, mlp.b1, raw, &mut hidden);
    hidden.iter_mut().for_each(|h| *h = lrelu(*h));
    if let Some(rng) = rng {
        if dropout > 0.0 {
            let keep = 1.0 / (1.0 - dropout);
            for h in &mut hidden {
                *h = if rng.random::<f64>() < dropout { 0.0 } else { *h * keep };
            }
        }
    }
    let mut out = vec![0.0; mlp.output];
    affine(mlp.w2, mlp.b2, &hidden, &mut out);
    out.iter_mut().for_each(|o| *o = lrelu(*o));
    Ok(out)
}

/// Splits an embedding into `factors` contiguous equal blocks.
pub fn factorize(embedding: &[f64], factors: usize) -> Result<Vec<&[f64]>> {
    if factors == 0 || embedding.len() % factors != 0 {
        return Err(Error::invalid(format!(
            "{factors} factors do not divide dimension {}",
            embedding.len()
        )));
    }
    Ok(embedding.chunks_exact(embedding.len() / factors).collect())
}

/// Borrowed attention weights: `A1 (H_a x 4d_f)`, `b1`, `A2 (C x H_a)`, `b2`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionView<'a> {
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub w2: &'a [f64],
    pub b2: &'a [f64],
}

/// `Softmax(A2 tanh(A1 h + b1) + b2)` over the scoring channels.
pub fn attention_weights(h: &[f64], att: &AttentionView<'_>) -> Result<[f64; CHANNELS]> {
    let hidden = att.b1.len();
    if att.w1.len() != hidden * h.len() || att.w2.len() != CHANNELS * hidden || att.b2.len() != CHANNELS {
        return Err(Error::shape("attention weights inconsistent with input"));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attention input".into()));
    }
    let mut pre = vec![0.0; hidden];
    affine(att.w1, att.b1, h, &mut pre);
    pre.iter_mut().for_each(|v| *v = v.tanh());
    let mut logits = [0.0; CHANNELS];
    affine(att.w2, att.b2, &pre, &mut logits);
    Ok(softmax3(logits))
}

/// `Σ_s α_s · GELU(<p, e_s>)` over the ID, text and visual blocks.
pub fn factor_score(p: &[f64], v: &[f64], t: &[f64], x: &[f64], alpha: &[f64; CHANNELS]) -> f64 {
    alpha[0] * gelu(dot(p, v)) + alpha[1] * gelu(dot(p, t)) + alpha[2] * gelu(dot(p, x))
}

/// Mean hinge `max(0, m - (s_pos - s_neg))` over the negatives.
pub fn ranking_loss(pos: f64, negs: &[f64], margin: f64) -> f64 {
    if negs.is_empty() {
        return 0.0;
    }
    negs.iter().map(|n| (margin - (pos - n)).max(0.0)).sum::<f64>() / negs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn zero_mlp_gives_zero() {
        let z = vec![0.0; 6];
        let mlp = MlpView::new(&z, &z[..2], &z, &z[..3], 3, 2, 3).unwrap();
        assert_eq!(project_modality(&[1.0, 2.0, 3.0], &mlp, 0.0, None).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn scalar_mlp_hand_values() {
        let mlp = MlpView::new(&[2.0], &[0.0], &[1.0], &[0.0], 1, 1, 1).unwrap();
        assert_eq!(project_modality(&[1.0], &mlp, 0.0, None).unwrap(), vec![2.0]);
        let mlp = MlpView::new(&[1.0], &[0.0], &[1.0], &[0.0], 1, 1, 1).unwrap();
        let out = project_modality(&[-1.0], &mlp, 0.0, None).unwrap();
        assert!((out[0] - (-0.04)).abs() < 1e-15);
    }

    #[test]
    fn mlp_shape_errors() {
        assert!(MlpView::new(&[1.0, 2.0], &[0.0], &[1.0], &[0.0], 1, 1, 1).is_err());
        let mlp = MlpView::new(&[1.0], &[0.0], &[1.0], &[0.0], 1, 1, 1).unwrap();
        assert!(project_modality(&[1.0, 2.0], &mlp, 0.0, None).is_err());
    }

    #[test]
    fn dropout_only_in_training() {
        let w1 = vec![1.0; 40];
        let w2 = vec![1.0; 40];
        let mlp = MlpView::new(&w1, &[0.0; 40], &w2, &[0.0], 1, 40, 1).unwrap();
        let eval = project_modality(&[1.0], &mlp, 0.5, None).unwrap();
        assert_eq!(eval, vec![40.0]);
        let mut r = rng::stream(1, &[]);
        let train = project_modality(&[1.0], &mlp, 0.5, Some(&mut r)).unwrap();
        // Inverted scaling: surviving units count double.
        assert_eq!(train[0] % 2.0, 0.0);
        assert_ne!(train, eval);
    }

    #[test]
    fn factorize_blocks() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(factorize(&v, 2).unwrap(), vec![&[1.0, 2.0][..], &[3.0, 4.0][..]]);
        assert_eq!(factorize(&v, 1).unwrap(), vec![&v[..]]);
        let six = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let blocks = factorize(&six, 3).unwrap();
        assert_eq!(blocks.len(), 3);
        assert!(blocks.iter().all(|b| b.len() == 2));
        assert_eq!(blocks.concat(), six.to_vec());
        assert!(factorize(&six, 4).is_err());
    }

    #[test]
    fn attention_examples() {
        let h = [0.3, -1.0, 2.0, 0.5];
        let w1 = [0.0; 8];
        let w2 = [0.0; 6];
        let att = AttentionView { w1: &w1, b1: &[0.0; 2], w2: &w2, b2: &[0.0; 3] };
        let a = attention_weights(&h, &att).unwrap();
        for v in a {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let b2 = [std::f64::consts::LN_2, 0.0, 0.0];
        let att = AttentionView { b2: &b2, ..att };
        let a = attention_weights(&h, &att).unwrap();
        assert!((a[0] - 0.5).abs() < 1e-15 && (a[1] - 0.25).abs() < 1e-15 && (a[2] - 0.25).abs() < 1e-15);
        assert!(attention_weights(&[f64::NAN, 0.0, 0.0, 0.0], &att).is_err());
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
        let tail = gelu(-10.0);
        assert!(tail < 0.0 && tail > -1e-21);
        assert!((tail - (-7.619_853_024_160_527e-23)).abs() < 1e-30);
    }

    #[test]
    fn factor_score_examples() {
        let z = [0.0; 2];
        assert_eq!(factor_score(&z, &z, &z, &z, &[1.0 / 3.0; 3]), 0.0);
        let p = [1.0, 0.0];
        let v = [1.0, 5.0];
        let s = factor_score(&p, &v, &z, &z, &[1.0, 0.0, 0.0]);
        assert!((s - 0.841_345).abs() < 1e-6);
        let t = [-10.0, 0.0];
        let s = factor_score(&p, &z, &t, &z, &[0.0, 1.0, 0.0]);
        assert!(s.abs() < 1e-21);
    }

    #[test]
    fn ranking_loss_examples() {
        assert_eq!(ranking_loss(2.0, &[1.0, 1.0], 1.0), 0.0);
        assert_eq!(ranking_loss(0.3, &[0.3], 1.0), 1.0);
        assert!((ranking_loss(2.0, &[0.0, 1.5], 1.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &z in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-5;
            let fd = (gelu(z + h) - gelu(z - h)) / (2.0 * h);
            assert!((fd - gelu_grad(z)).abs() < 1e-9);
        }
    }
}
