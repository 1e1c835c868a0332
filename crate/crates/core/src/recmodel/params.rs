//! Flat parameter storage with a named tensor layout.
//!
//! Every learnable tensor lives in one contiguous `Vec<f64>`, which keeps
//! federated deltas, weighted averaging and the optimiser as plain loops.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::hyper::{HyperParams, CHANNELS};
use super::ops::{AttentionView, MlpView};
use crate::error::{Error, Result};
use crate::rng::{self, domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tensor {
    UserEmb,
    ItemEmb,
    TextW1,
    TextB1,
    TextW2,
    TextB2,
    ImageW1,
    ImageB1,
    ImageW2,
    ImageB2,
    AttnW1,
    AttnB1,
    AttnW2,
    AttnB2,
}

impl Tensor {
    pub const ALL: [Tensor; 14] = [
        Tensor::UserEmb,
        Tensor::ItemEmb,
        Tensor::TextW1,
        Tensor::TextB1,
        Tensor::TextW2,
        Tensor::TextB2,
        Tensor::ImageW1,
        Tensor::ImageB1,
        Tensor::ImageW2,
        Tensor::ImageB2,
        Tensor::AttnW1,
        Tensor::AttnB1,
        Tensor::AttnW2,
        Tensor::AttnB2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tensor::UserEmb => "user_embedding",
            Tensor::ItemEmb => "item_embedding",
            Tensor::TextW1 => "text_w1",
            Tensor::TextB1 => "text_b1",
            Tensor::TextW2 => "text_w2",
            Tensor::TextB2 => "text_b2",
            Tensor::ImageW1 => "image_w1",
            Tensor::ImageB1 => "image_b1",
            Tensor::ImageW2 => "image_w2",
            Tensor::ImageB2 => "image_b2",
            Tensor::AttnW1 => "attn_w1",
            Tensor::AttnB1 => "attn_b1",
            Tensor::AttnW2 => "attn_w2",
            Tensor::AttnB2 => "attn_b2",
        }
    }

    fn index(self) -> usize {
        Tensor::ALL.iter().position(|&t| t == self).unwrap()
    }
}

/// Shapes and offsets of every tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub factors: usize,
    shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
}

impl Layout {
    pub fn new(hyper: &HyperParams, num_users: usize, num_items: usize) -> Result<Self> {
        hyper.validate()?;
        let d = hyper.dim;
        let df = hyper.factor_dim();
        let shapes = vec![
            (num_users, d),
            (num_items, d),
            (hyper.text_hidden, hyper.text_dim),
            (hyper.text_hidden, 1),
            (d, hyper.text_hidden),
            (d, 1),
            (hyper.image_hidden, hyper.image_dim),
            (hyper.image_hidden, 1),
            (d, hyper.image_hidden),
            (d, 1),
            (hyper.attn_hidden, 4 * df),
            (hyper.attn_hidden, 1),
            (CHANNELS, hyper.attn_hidden),
            (CHANNELS, 1),
        ];
        let mut offsets = Vec::with_capacity(shapes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &(r, c) in &shapes {
            acc += r * c;
            offsets.push(acc);
        }
        Ok(Self {
            num_users,
            num_items,
            dim: d,
            factors: hyper.factors,
            shapes,
            offsets,
        })
    }

    pub fn shape(&self, t: Tensor) -> (usize, usize) {
        self.shapes[t.index()]
    }

    pub fn range(&self, t: Tensor) -> std::ops::Range<usize> {
        let i = t.index();
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Bytes of one uplink transfer in the f32 checkpoint encoding.
    pub fn payload_bytes(&self) -> u64 {
        (self.total() * 4) as u64
    }
}

/// All learnable tensors (also used for gradients and deltas).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layout: Arc<Layout>,
    data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let n = layout.total();
        Self {
            layout,
            data: vec![0.0; n],
        }
    }

    /// Embeddings ~ N(0, init_std); MLP and attention weights Glorot-uniform
    /// `±sqrt(6 / (fan_in + fan_out))`; biases zero.
    pub fn init(hyper: &HyperParams, num_users: usize, num_items: usize, seed: u64) -> Result<Self> {
        let layout = Arc::new(Layout::new(hyper, num_users, num_items)?);
        let mut p = Self::zeros(layout);
        let normal = Normal::new(0.0, hyper.init_std).map_err(|e| Error::invalid(e.to_string()))?;
        for (k, t) in Tensor::ALL.into_iter().enumerate() {
            let (rows, cols) = p.layout.shape(t);
            let mut r = rng::stream(seed, &[domain::INIT, k as u64]);
            let slot = p.get_mut(t);
            match t {
                Tensor::UserEmb | Tensor::ItemEmb => slot.iter_mut().for_each(|v| *v = normal.sample(&mut r)),
                Tensor::TextW1 | Tensor::TextW2 | Tensor::ImageW1 | Tensor::ImageW2 | Tensor::AttnW1 | Tensor::AttnW2 => {
                    let bound = (6.0 / (rows + cols) as f64).sqrt();
                    slot.iter_mut().for_each(|v| *v = r.random_range(-bound..bound));
                }
                _ => {}
            }
        }
        Ok(p)
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn get(&self, t: Tensor) -> &[f64] {
        &self.data[self.layout.range(t)]
    }

    pub fn get_mut(&mut self, t: Tensor) -> &mut [f64] {
        let r = self.layout.range(t);
        &mut self.data[r]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn user(&self, u: u32) -> &[f64] {
        let d = self.layout.dim;
        &self.get(Tensor::UserEmb)[u as usize * d..(u as usize + 1) * d]
    }

    pub fn item(&self, i: u32) -> &[f64] {
        let d = self.layout.dim;
        &self.get(Tensor::ItemEmb)[i as usize * d..(i as usize + 1) * d]
    }

    pub fn text_mlp(&self) -> MlpView<'_> {
        let (h, input) = self.layout.shape(Tensor::TextW1);
        MlpView {
            w1: self.get(Tensor::TextW1),
            b1: self.get(Tensor::TextB1),
            w2: self.get(Tensor::TextW2),
            b2: self.get(Tensor::TextB2),
            input,
            hidden: h,
            output: self.layout.dim,
        }
    }

    pub fn image_mlp(&self) -> MlpView<'_> {
        let (h, input) = self.layout.shape(Tensor::ImageW1);
        MlpView {
            w1: self.get(Tensor::ImageW1),
            b1: self.get(Tensor::ImageB1),
            w2: self.get(Tensor::ImageW2),
            b2: self.get(Tensor::ImageB2),
            input,
            hidden: h,
            output: self.layout.dim,
        }
    }

    pub fn attention(&self) -> AttentionView<'_> {
        AttentionView {
            w1: self.get(Tensor::AttnW1),
            b1: self.get(Tensor::AttnB1),
            w2: self.get(Tensor::AttnW2),
            b2: self.get(Tensor::AttnB2),
        }
    }

    fn same_layout(&self, other: &ModelParams) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::shape("parameter layouts differ"));
        }
        Ok(())
    }

    /// `self - other`.
    pub fn sub(&self, other: &ModelParams) -> Result<ModelParams> {
        self.same_layout(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self {
            layout: self.layout.clone(),
            data,
        })
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &ModelParams) -> Result<()> {
        self.same_layout(other)?;
        crate::linalg::axpy(alpha, &other.data, &mut self.data);
        Ok(())
    }

    /// Name of the first tensor holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        Tensor::ALL
            .into_iter()
            .find(|&t| self.get(t).iter().any(|v| !v.is_finite()))
            .map(Tensor::name)
    }

    /// Writes `<path>.json` (shape manifest) and `<path>.bin` (little-endian f32).
    pub fn write_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let base = path.as_ref();
        let manifest: Vec<CheckpointEntry> = Tensor::ALL
            .into_iter()
            .map(|t| {
                let (rows, cols) = self.layout.shape(t);
                CheckpointEntry {
                    name: t.name().to_string(),
                    shape: [rows, cols],
                    offset: self.layout.range(t).start,
                }
            })
            .collect();
        let json_path = base.with_extension("json");
        std::fs::write(&json_path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&json_path, e))?;
        let bin_path = base.with_extension("bin");
        let file = File::create(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let mut w = BufWriter::new(file);
        for &v in &self.data {
            w.write_all(&(v as f32).to_le_bytes()).map_err(|e| Error::io(&bin_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&bin_path, e))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}
