//! MovieLens-style interaction logs, item modality features, per-user
//! temporal splits and negative sampling.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{self, domain, Stream};

/// One observed rating, with dense 0-based indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub rating: u8,
    pub timestamp: u64,
}

/// All interactions plus the dense id remapping and a per-user positive index.
#[derive(Debug, Clone)]
pub struct InteractionLog {
    interactions: Vec<Interaction>,
    user_ids: Vec<u64>,
    item_ids: Vec<u64>,
    positives: Vec<Vec<u32>>,
}

impl InteractionLog {
    /// Builds a log from raw `(user, item, rating, timestamp)` records carrying
    /// arbitrary original ids. Ids are remapped densely in ascending order.
    pub fn from_raw(records: &[(u64, u64, u8, u64)]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("interaction log".into()));
        }
        let mut users = BTreeMap::new();
        let mut items = BTreeMap::new();
        for &(u, i, r, _) in records {
            if !(1..=5).contains(&r) {
                return Err(Error::invalid(format!("rating {r} outside [1, 5]")));
            }
            users.insert(u, 0u32);
            items.insert(i, 0u32);
        }
        for (idx, v) in users.values_mut().enumerate() {
            *v = idx as u32;
        }
        for (idx, v) in items.values_mut().enumerate() {
            *v = idx as u32;
        }
        let interactions = records
            .iter()
            .map(|&(u, i, rating, timestamp)| Interaction {
                user: users[&u],
                item: items[&i],
                rating,
                timestamp,
            })
            .collect();
        Ok(Self::from_dense(
            interactions,
            users.keys().copied().collect(),
            items.keys().copied().collect(),
        ))
    }

    fn from_dense(interactions: Vec<Interaction>, user_ids: Vec<u64>, item_ids: Vec<u64>) -> Self {
        let mut positives = vec![Vec::new(); user_ids.len()];
        for it in &interactions {
            positives[it.user as usize].push(it.item);
        }
        for p in &mut positives {
            p.sort_unstable();
            p.dedup();
        }
        Self {
            interactions,
            user_ids,
            item_ids,
            positives,
        }
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    /// Sorted, deduplicated items rated by `user`.
    pub fn positives(&self, user: u32) -> &[u32] {
        &self.positives[user as usize]
    }

    pub fn original_user_id(&self, user: u32) -> u64 {
        self.user_ids[user as usize]
    }

    pub fn original_item_id(&self, item: u32) -> u64 {
        self.item_ids[item as usize]
    }

    pub fn user_index(&self, original: u64) -> Option<u32> {
        self.user_ids.binary_search(&original).ok().map(|i| i as u32)
    }

    pub fn item_index(&self, original: u64) -> Option<u32> {
        self.item_ids.binary_search(&original).ok().map(|i| i as u32)
    }

    /// Interaction count per user.
    pub fn user_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_users()];
        for it in &self.interactions {
            counts[it.user as usize] += 1;
        }
        counts
    }
}

/// Parses tab-separated `user item rating timestamp` records.
pub fn parse_movielens<R: Read>(reader: R) -> Result<InteractionLog> {
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let field = |k: usize, name: &str| -> Result<u64> {
            fields[k].trim().parse::<u64>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("{name} `{}` is not an unsigned integer", fields[k]),
            })
        };
        let user = field(0, "user id")?;
        let item = field(1, "item id")?;
        let rating = field(2, "rating")?;
        let timestamp = field(3, "timestamp")?;
        if !(1..=5).contains(&rating) {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("rating {rating} outside [1, 5]"),
            });
        }
        records.push((user, item, rating as u8, timestamp));
    }
    if records.is_empty() {
        return Err(Error::Empty("no interactions in input".into()));
    }
    InteractionLog::from_raw(&records)
}

pub fn load_movielens(path: impl AsRef<Path>) -> Result<InteractionLog> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_movielens(file)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Synthetic,
    File,
}

/// Per-item text and image feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityBundle {
    pub text: Matrix,
    pub image: Matrix,
    pub source: FeatureSource,
}

impl ModalityBundle {
    pub fn num_items(&self) -> usize {
        self.text.rows()
    }

    pub fn text_dim(&self) -> usize {
        self.text.cols()
    }

    pub fn image_dim(&self) -> usize {
        self.image.cols()
    }

    fn validate(&self) -> Result<()> {
        if self.text.rows() != self.image.rows() {
            return Err(Error::shape(format!(
                "{} text rows vs {} image rows",
                self.text.rows(),
                self.image.rows()
            )));
        }
        if self.text.data().iter().chain(self.image.data()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("modality features".into()));
        }
        Ok(())
    }

    /// Writes the binary feature file: header `(N, d_T, d_V)` as little-endian
    /// u64, then per item `d_T` text and `d_V` image values as little-endian f32.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        for v in [self.num_items(), self.text_dim(), self.image_dim()] {
            put(&(v as u64).to_le_bytes())?;
        }
        for item in 0..self.num_items() {
            for &v in self.text.row(item).iter().chain(self.image.row(item)) {
                put(&(v as f32).to_le_bytes())?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 24 {
            return Err(Error::Empty("feature file shorter than its header".into()));
        }
        let header = |k: usize| u64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().unwrap()) as usize;
        let (n, dt, dv) = (header(0), header(1), header(2));
        if dt == 0 || dv == 0 {
            return Err(Error::invalid("feature dimensions must be >= 1"));
        }
        let expected = 24 + n * (dt + dv) * 4;
        if bytes.len() != expected {
            return Err(Error::shape(format!(
                "feature file has {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let mut text = Matrix::zeros(n, dt);
        let mut image = Matrix::zeros(n, dv);
        let mut values = bytes[24..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        for item in 0..n {
            for v in text.row_mut(item) {
                *v = values.next().unwrap();
            }
            for v in image.row_mut(item) {
                *v = values.next().unwrap();
            }
        }
        let bundle = Self {
            text,
            image,
            source: FeatureSource::File,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

/// Seeded standard-normal stand-ins for text and image encoder outputs.
/// Item `i`'s vector for modality `m` comes from its own stream keyed by
/// `(seed, i, m)`, so the bundle is a pure function of the arguments.
pub fn synth_features(seed: u64, text_dim: usize, image_dim: usize, num_items: usize) -> Result<ModalityBundle> {
    if text_dim == 0 || image_dim == 0 {
        return Err(Error::invalid("feature dimensions must be >= 1"));
    }
    let fill = |dim: usize, modality: u64| {
        let mut m = Matrix::zeros(num_items, dim);
        for item in 0..num_items {
            let mut s = rng::stream(seed, &[domain::FEATURES, item as u64, modality]);
            for v in m.row_mut(item) {
                *v = s.sample(StandardNormal);
            }
        }
        m
    };
    Ok(ModalityBundle {
        text: fill(text_dim, 0),
        image: fill(image_dim, 1),
        source: FeatureSource::Synthetic,
    })
}

/// Per-user train/test positives.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Vec<u32>>,
    pub test: Vec<Vec<u32>>,
    pub ratio: f64,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn num_users(&self) -> usize {
        self.train.len()
    }

    pub fn train_count(&self) -> usize {
        self.train.iter().map(Vec::len).sum()
    }

    pub fn test_count(&self) -> usize {
        self.test.iter().map(Vec::len).sum()
    }
}

/// Temporal per-user split: the `ceil(ratio * n)` earliest interactions of each
/// user go to train. The seed only orders interactions with equal timestamps.
pub fn split_per_user(log: &InteractionLog, ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut per_user: Vec<Vec<(u64, u64, u32)>> = vec![Vec::new(); log.num_users()];
    let mut tie = rng::stream(seed, &[domain::SPLIT]);
    for it in log.interactions() {
        per_user[it.user as usize].push((it.timestamp, tie.random::<u64>(), it.item));
    }
    let mut train = Vec::with_capacity(per_user.len());
    let mut test = Vec::with_capacity(per_user.len());
    for mut events in per_user {
        events.sort_unstable();
        let mut seen = HashSet::new();
        let items: Vec<u32> = events
            .into_iter()
            .map(|(_, _, item)| item)
            .filter(|item| seen.insert(*item))
            .collect();
        let cut = ((ratio * items.len() as f64).ceil() as usize).clamp(items.len().min(1), items.len());
        let mut tr = items[..cut].to_vec();
        let mut te = items[cut..].to_vec();
        tr.sort_unstable();
        te.sort_unstable();
        train.push(tr);
        test.push(te);
    }
    Ok(DatasetSplit {
        train,
        test,
        ratio,
        seed,
    })
}

/// Draws `k` items outside `positives` (sorted), uniformly. Within one call the
/// draws are distinct whenever enough negatives exist.
pub fn sample_negatives(positives: &[u32], num_items: usize, k: usize, rng: &mut Stream) -> Result<Vec<u32>> {
    let available = num_items.saturating_sub(positives.len());
    if available == 0 {
        return Err(Error::invalid("user has rated every item; no negatives to sample"));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let is_positive = |item: u32| positives.binary_search(&item).is_ok();
    // Dense users: enumerate the complement instead of rejection sampling.
    if available * 4 < num_items {
        let pool: Vec<u32> = (0..num_items as u32).filter(|&i| !is_positive(i)).collect();
        if k <= pool.len() {
            return Ok(pool.choose_multiple(rng, k).copied().collect());
        }
        return Ok((0..k).map(|_| pool[rng.random_range(0..pool.len())]).collect());
    }
    let distinct = k <= available;
    let mut out: Vec<u32> = Vec::with_capacity(k);
    while out.len() < k {
        let item = rng.random_range(0..num_items as u32);
        if is_positive(item) || (distinct && out.contains(&item)) {
            continue;
        }
        out.push(item);
    }
    Ok(out)
}
