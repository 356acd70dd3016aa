//! Datasets, labeled/unlabeled pools, seed sets and the reduced validation
//! split. Ships a synthetic "mini-MNIST" generator (Gaussian blobs per class
//! in pixel space) that is format-identical to the real data and fast enough
//! for tests.

use std::sync::Arc;

use rand::seq::index::sample as index_sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::idx::IdxFile;
use crate::tensor::Tensor;

/// Immutable image dataset: `[N, 1, H, W]` floats in [0,1] plus integer
/// labels. Shareable read-only across threads.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 4 || shape[1] != 1 {
            return Err(Error::Config(format!("expected [N,1,H,W] images, got {shape:?}")));
        }
        if shape[0] != labels.len() {
            return Err(Error::Config(format!(
                "{} images but {} labels",
                shape[0],
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|l| **l >= classes) {
            return Err(Error::Config(format!("label {bad} out of range for {classes} classes")));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("pixel values must lie in [0,1]".into()));
        }
        Ok(Self { images, labels, classes })
    }

    /// Build from parsed IDX files. Pixels normalize as v/255, so 0 -> 0.0
    /// and 255 -> 1.0 exactly.
    pub fn from_idx(images: &IdxFile, labels: &IdxFile, classes: usize) -> Result<Self> {
        let (count, rows, cols, pixels) = match images {
            IdxFile::Images { count, rows, cols, pixels } => (*count, *rows, *cols, pixels),
            IdxFile::Labels(_) => {
                return Err(Error::Config("expected an image file, got labels".into()))
            }
        };
        let raw_labels = match labels {
            IdxFile::Labels(l) => l,
            IdxFile::Images { .. } => {
                return Err(Error::Config("expected a label file, got images".into()))
            }
        };
        if raw_labels.len() != count {
            return Err(Error::Config(format!(
                "{count} images but {} labels",
                raw_labels.len()
            )));
        }
        let data: Vec<f64> = pixels.iter().map(|p| *p as f64 / 255.0).collect();
        let images = Tensor::new(vec![count, 1, rows, cols], data)?;
        Self::new(images, raw_labels.iter().map(|l| *l as usize).collect(), classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_dims(&self) -> (usize, usize) {
        let s = self.images.shape();
        (s[2], s[3])
    }

    /// Gather the images at `ids` into one `[k, 1, H, W]` batch.
    pub fn gather_images(&self, ids: &[usize]) -> Tensor {
        let row = self.images.row_len();
        let mut data = Vec::with_capacity(ids.len() * row);
        for id in ids {
            data.extend_from_slice(self.images.row(*id));
        }
        let (h, w) = self.image_dims();
        Tensor::new(vec![ids.len(), 1, h, w], data).expect("gather buffer sized by construction")
    }

    /// One-hot targets for the labels at `ids`.
    pub fn gather_one_hot(&self, ids: &[usize]) -> Tensor {
        let mut data = vec![0.0; ids.len() * self.classes];
        for (i, id) in ids.iter().enumerate() {
            data[i * self.classes + self.labels[*id]] = 1.0;
        }
        Tensor::new(vec![ids.len(), self.classes], data).expect("one-hot buffer sized")
    }

    /// New dataset holding only the rows at `ids` (in that order).
    pub fn subset(&self, ids: &[usize]) -> Result<Self> {
        let images = self.gather_images(ids);
        let labels = ids.iter().map(|id| self.labels[*id]).collect();
        Self::new(images, labels, self.classes)
    }
}

/// Labeled set L and unlabeled set U over one dataset, with stable ids
/// (dataset indices). L preserves insertion order; L and U stay disjoint.
#[derive(Debug, Clone)]
pub struct DataPool {
    dataset: Arc<Dataset>,
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
    // position of each id inside `unlabeled`, or NOT_PRESENT once labeled
    position: Vec<usize>,
}

const NOT_PRESENT: usize = usize::MAX;

impl DataPool {
    /// Fresh pool with every datapoint unlabeled.
    pub fn new(dataset: Arc<Dataset>) -> Self {
        let n = dataset.len();
        Self {
            dataset,
            labeled: Vec::new(),
            unlabeled: (0..n).collect(),
            position: (0..n).collect(),
        }
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn labeled_ids(&self) -> &[usize] {
        &self.labeled
    }

    pub fn unlabeled_ids(&self) -> &[usize] {
        &self.unlabeled
    }

    pub fn labeled_len(&self) -> usize {
        self.labeled.len()
    }

    pub fn unlabeled_len(&self) -> usize {
        self.unlabeled.len()
    }

    pub fn is_unlabeled(&self, id: usize) -> bool {
        id < self.position.len() && self.position[id] != NOT_PRESENT
    }

    /// Move `id` from U to L, preserving L's insertion order.
    pub fn label(&mut self, id: usize) -> Result<()> {
        if id >= self.position.len() {
            return Err(Error::Logic(format!("id {id} outside dataset")));
        }
        let pos = self.position[id];
        if pos == NOT_PRESENT {
            return Err(Error::Logic(format!("id {id} is not unlabeled")));
        }
        self.unlabeled.swap_remove(pos);
        if pos < self.unlabeled.len() {
            self.position[self.unlabeled[pos]] = pos;
        }
        self.position[id] = NOT_PRESENT;
        self.labeled.push(id);
        Ok(())
    }

    /// Label `per_class` uniformly random unlabeled instances of every class.
    pub fn build_seed_set<R: Rng>(&mut self, per_class: usize, rng: &mut R) -> Result<()> {
        if per_class == 0 {
            return Ok(());
        }
        let classes = self.dataset.classes;
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
        for id in &self.unlabeled {
            by_class[self.dataset.labels[*id]].push(*id);
        }
        // Candidates sorted so the draw is independent of U's internal order.
        for list in by_class.iter_mut() {
            list.sort_unstable();
        }
        let mut chosen = Vec::with_capacity(per_class * classes);
        for (class, list) in by_class.iter().enumerate() {
            if list.len() < per_class {
                return Err(Error::Config(format!(
                    "class {class} has {} unlabeled instances, seed set needs {per_class}",
                    list.len()
                )));
            }
            for idx in index_sample(rng, list.len(), per_class) {
                chosen.push(list[idx]);
            }
        }
        for id in chosen {
            self.label(id)?;
        }
        Ok(())
    }

    /// `k` distinct ids drawn uniformly from U without replacement. The ids
    /// stay in U.
    pub fn draw_candidates<R: Rng>(&self, k: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.unlabeled.len() < k {
            return Err(Error::PoolExhausted { requested: k, available: self.unlabeled.len() });
        }
        Ok(index_sample(rng, self.unlabeled.len(), k)
            .into_iter()
            .map(|i| self.unlabeled[i])
            .collect())
    }

    /// Like `draw_candidates` but never returns an id in `exclude`.
    pub fn draw_candidates_excluding<R: Rng>(
        &self,
        k: usize,
        exclude: &[usize],
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        let excluded_in_pool = exclude.iter().filter(|id| self.is_unlabeled(**id)).count();
        let available = self.unlabeled.len() - excluded_in_pool;
        if available < k {
            return Err(Error::PoolExhausted { requested: k, available });
        }
        // Rejection sampling is near-free while U is large; fall back to an
        // explicit filtered draw when it gets tight.
        if self.unlabeled.len() >= 2 * (k + exclude.len()) {
            let mut out = Vec::with_capacity(k);
            let mut attempts = 0usize;
            while out.len() < k {
                attempts += 1;
                if attempts > 100 * (k + 1) {
                    break;
                }
                let id = self.unlabeled[rng.gen_range(0..self.unlabeled.len())];
                if exclude.contains(&id) || out.contains(&id) {
                    continue;
                }
                out.push(id);
            }
            if out.len() == k {
                return Ok(out);
            }
        }
        let filtered: Vec<usize> = self
            .unlabeled
            .iter()
            .copied()
            .filter(|id| !exclude.contains(id))
            .collect();
        Ok(index_sample(rng, filtered.len(), k).into_iter().map(|i| filtered[i]).collect())
    }
}

/// Full validation data plus the reduced subset used for cheap per-step
/// evaluation.
#[derive(Debug, Clone)]
pub struct ValidationSplit {
    pub full: Arc<Dataset>,
    pub reduced: Arc<Dataset>,
}

impl ValidationSplit {
    /// Reduced set = `reduced_size` samples picked by a seeded draw, fixed
    /// for the lifetime of the split.
    pub fn new<R: Rng>(full: Arc<Dataset>, reduced_size: usize, rng: &mut R) -> Result<Self> {
        if reduced_size > full.len() {
            return Err(Error::Config(format!(
                "reduced validation size {reduced_size} exceeds {} samples",
                full.len()
            )));
        }
        let ids: Vec<usize> = index_sample(rng, full.len(), reduced_size).into_iter().collect();
        let reduced = Arc::new(full.subset(&ids)?);
        Ok(Self { full, reduced })
    }
}

/// Configuration for the synthetic blob dataset.
#[derive(Debug, Clone)]
pub struct MiniMnistConfig {
    pub classes: usize,
    pub train: usize,
    pub validation: usize,
    pub side: usize,
    /// stddev of the per-sample blob center displacement, in pixels
    pub center_jitter: f64,
    /// stddev of additive per-pixel noise
    pub pixel_noise: f64,
}

impl Default for MiniMnistConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            train: 2000,
            validation: 500,
            side: 8,
            center_jitter: 0.9,
            pixel_noise: 0.13,
        }
    }
}

/// Generate train and validation datasets of Gaussian blobs, one blob
/// prototype per class arranged on a circle. Samples are quantized to uint8
/// before normalization, so pixel statistics match IDX-loaded data.
pub fn generate_mini_mnist<R: Rng>(cfg: &MiniMnistConfig, rng: &mut R) -> (Dataset, Dataset) {
    let train = blob_dataset(cfg, cfg.train, rng);
    let validation = blob_dataset(cfg, cfg.validation, rng);
    (train, validation)
}

fn blob_dataset<R: Rng>(cfg: &MiniMnistConfig, n: usize, rng: &mut R) -> Dataset {
    let side = cfg.side;
    let mid = (side as f64 - 1.0) / 2.0;
    let ring = side as f64 * 0.30;
    let sigma = side as f64 * 0.16;
    let mut pixels = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % cfg.classes;
        let angle = 2.0 * std::f64::consts::PI * class as f64 / cfg.classes as f64;
        let cx = mid + ring * angle.cos() + cfg.center_jitter * gaussian(rng);
        let cy = mid + ring * angle.sin() + cfg.center_jitter * gaussian(rng);
        let amplitude = rng.gen_range(0.75..1.0);
        for y in 0..side {
            for x in 0..side {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let v = amplitude * (-d2 / (2.0 * sigma * sigma)).exp()
                    + cfg.pixel_noise * gaussian(rng);
                pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        labels.push(class);
    }
    let data: Vec<f64> = pixels.iter().map(|p| *p as f64 / 255.0).collect();
    let images = Tensor::new(vec![n, 1, side, side], data).expect("sized by construction");
    Dataset::new(images, labels, cfg.classes).expect("generator respects invariants")
}

/// Box-Muller standard normal.
fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
