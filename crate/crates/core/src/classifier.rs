//! The image-classification model trained inside the environment, plus macro
//! F1 scoring, the moving-average F1 tracker and layer-statistics extraction
//! for agent state vectors.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{DataPool, Dataset};
use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, Loss, Network};
use crate::tensor::Tensor;

/// Forward passes over large id sets run in chunks of this many images to
/// bound the im2col scratch memory.
const PREDICT_CHUNK: usize = 128;

#[derive(Debug, Clone)]
pub struct ClassifierConfig {
    pub input: (usize, usize),
    pub classes: usize,
    /// (filters, kernel, stride)
    pub conv1: (usize, usize, usize),
    pub conv2: (usize, usize, usize),
    pub dense: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
}

impl ClassifierConfig {
    /// The full-scale architecture: Conv2D 64 (3x3, stride 3) -> Conv2D 32
    /// (3x3) -> Flatten -> Dense 24, with a softmax classification head.
    pub fn mnist() -> Self {
        Self {
            input: (28, 28),
            classes: 10,
            conv1: (64, 3, 3),
            conv2: (32, 3, 1),
            dense: 24,
            lr: 0.05,
            batch_size: 32,
            max_epochs: 50,
        }
    }

    /// Desk-scale variant for the 8x8 synthetic dataset: widths halved twice
    /// and stride 1 so both conv layers fit the small geometry.
    pub fn mini(side: usize, classes: usize) -> Self {
        Self {
            input: (side, side),
            classes,
            conv1: (16, 3, 1),
            conv2: (8, 3, 1),
            dense: 12,
            lr: 0.05,
            batch_size: 32,
            max_epochs: 50,
        }
    }

    fn conv_out(dim: usize, kernel: usize, stride: usize) -> Result<usize> {
        if dim < kernel {
            return Err(Error::Config(format!("kernel {kernel} does not fit dimension {dim}")));
        }
        Ok((dim - kernel) / stride + 1)
    }

    fn flatten_dim(&self) -> Result<usize> {
        let (h, w) = self.input;
        let h1 = Self::conv_out(h, self.conv1.1, self.conv1.2)?;
        let w1 = Self::conv_out(w, self.conv1.1, self.conv1.2)?;
        let h2 = Self::conv_out(h1, self.conv2.1, self.conv2.2)?;
        let w2 = Self::conv_out(w1, self.conv2.1, self.conv2.2)?;
        Ok(self.conv2.0 * h2 * w2)
    }
}

/// Outcome of one `fit` call.
#[derive(Debug, Clone, Copy)]
pub struct FitReport {
    pub epochs_run: usize,
    pub final_val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct ICModel {
    pub net: Network,
    pub config: ClassifierConfig,
}

impl ICModel {
    pub fn new<R: Rng>(config: ClassifierConfig, rng: &mut R) -> Result<Self> {
        let net = build_network(&config, rng)?;
        Ok(Self { net, config })
    }

    /// Hard-reset the parameters (fresh random initialization).
    pub fn reinitialize<R: Rng>(&mut self, rng: &mut R) -> Result<()> {
        self.net = build_network(&self.config, rng)?;
        Ok(())
    }

    /// Train on the pool's labeled set from the current parameters.
    ///
    /// After every epoch the cross-entropy loss on `reduced_val` is measured;
    /// training stops as soon as that loss is not monotonically decreasing
    /// (patience 1), restoring the parameters from the epoch before the
    /// trigger, or after `max_epochs` epochs.
    pub fn fit<R: Rng>(
        &mut self,
        pool: &DataPool,
        reduced_val: &Dataset,
        rng: &mut R,
    ) -> Result<FitReport> {
        if pool.labeled_len() == 0 {
            return Err(Error::Config("cannot fit on an empty labeled set".into()));
        }
        let val_images = reduced_val.gather_images(&(0..reduced_val.len()).collect::<Vec<_>>());
        let val_targets = reduced_val.gather_one_hot(&(0..reduced_val.len()).collect::<Vec<_>>());

        let mut ids: Vec<usize> = pool.labeled_ids().to_vec();
        let dataset = pool.dataset();
        let mut prev_loss = f64::INFINITY;
        let mut snapshot = self.net.clone();
        let mut epochs_run = 0;
        for _ in 0..self.config.max_epochs {
            ids.shuffle(rng);
            for chunk in ids.chunks(self.config.batch_size) {
                let batch = dataset.gather_images(chunk);
                let targets = dataset.gather_one_hot(chunk);
                let (_, grads) = self.net.backward(&batch, &targets)?;
                self.net.sgd_step(&grads, self.config.lr)?;
            }
            epochs_run += 1;
            let val_loss = self.loss_chunked(&val_images, &val_targets)?;
            if val_loss >= prev_loss {
                self.net = snapshot;
                return Ok(FitReport { epochs_run, final_val_loss: prev_loss });
            }
            prev_loss = val_loss;
            snapshot = self.net.clone();
        }
        Ok(FitReport { epochs_run, final_val_loss: prev_loss })
    }

    fn loss_chunked(&self, images: &Tensor, targets: &Tensor) -> Result<f64> {
        let n = images.rows();
        let mut total = 0.0;
        let mut start = 0;
        while start < n {
            let end = (start + PREDICT_CHUNK).min(n);
            let batch = slice_rows(images, start, end);
            let target = slice_rows(targets, start, end);
            total += self.net.loss_value(&batch, &target)? * (end - start) as f64;
            start = end;
        }
        Ok(total / n as f64)
    }

    /// Class-probability rows for a `[k,1,H,W]` batch (eval mode).
    pub fn predict(&self, images: &Tensor) -> Result<Tensor> {
        let n = images.rows();
        let mut out = Vec::with_capacity(n * self.config.classes);
        let mut start = 0;
        while start < n {
            let end = (start + PREDICT_CHUNK).min(n);
            let batch = slice_rows(images, start, end);
            let pred = self.net.forward_eval(&batch)?;
            out.extend_from_slice(pred.data());
            start = end;
        }
        Tensor::new(vec![n, self.config.classes], out)
    }

    /// Predicted class per dataset id.
    pub fn predict_classes(&self, dataset: &Dataset, ids: &[usize]) -> Result<Vec<usize>> {
        let probs = self.predict(&dataset.gather_images(ids))?;
        Ok((0..probs.rows()).map(|i| argmax(probs.row(i))).collect())
    }
}

fn slice_rows(t: &Tensor, start: usize, end: usize) -> Tensor {
    let width = t.row_len();
    let mut shape = t.shape().to_vec();
    shape[0] = end - start;
    Tensor::new(shape, t.data()[start * width..end * width].to_vec()).expect("row slice sized")
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn build_network<R: Rng>(config: &ClassifierConfig, rng: &mut R) -> Result<Network> {
    let flatten = config.flatten_dim()?;
    let layers = vec![
        Layer::conv2d(1, config.conv1.0, config.conv1.1, config.conv1.2, Activation::Relu, 0.0, rng)?,
        Layer::conv2d(
            config.conv1.0,
            config.conv2.0,
            config.conv2.1,
            config.conv2.2,
            Activation::Relu,
            0.0,
            rng,
        )?,
        Layer::flatten(),
        Layer::dense(flatten, config.dense, Activation::Relu, 0.0, rng)?,
        Layer::dense(config.dense, config.classes, Activation::Softmax, 0.0, rng)?,
    ];
    Ok(Network::new(layers, Loss::CrossEntropy))
}

/// Unweighted mean of per-class F1 over all `classes`. A class that is never
/// predicted (or never occurs) contributes 0 to the mean.
pub fn macro_f1_from_predictions(predicted: &[usize], actual: &[usize], classes: usize) -> f64 {
    debug_assert_eq!(predicted.len(), actual.len());
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fneg = vec![0usize; classes];
    for (p, a) in predicted.iter().zip(actual) {
        if p == a {
            tp[*p] += 1;
        } else {
            fp[*p] += 1;
            fneg[*a] += 1;
        }
    }
    let mut sum = 0.0;
    for c in 0..classes {
        let denom = 2 * tp[c] + fp[c] + fneg[c];
        if denom > 0 {
            sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    sum / classes as f64
}

/// Macro F1 of the model over a dataset.
pub fn macro_f1(model: &ICModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Input("macro_f1 needs a non-empty dataset".into()));
    }
    let ids: Vec<usize> = (0..data.len()).collect();
    let predicted = model.predict_classes(data, &ids)?;
    Ok(macro_f1_from_predictions(&predicted, &data.labels, data.classes))
}

/// Exponential moving average of the F1 score: the first observation is taken
/// as-is, each later one blends as alpha * previous + (1 - alpha) * raw.
#[derive(Debug, Clone, Copy)]
pub struct F1Tracker {
    alpha: f64,
    current: f64,
    initialized: bool,
}

impl F1Tracker {
    pub fn new(alpha: f64) -> Self {
        Self { alpha, current: 0.0, initialized: false }
    }

    pub fn update(&mut self, raw: f64) -> f64 {
        debug_assert!((0.0..=1.0).contains(&raw));
        if self.initialized {
            self.current = self.alpha * self.current + (1.0 - self.alpha) * raw;
        } else {
            self.current = raw;
            self.initialized = true;
        }
        self.current
    }

    pub fn current(&self) -> f64 {
        self.current
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }
}

/// Statistics over the model parameters: for each parameter tensor in layer
/// order (weight then bias), its mean, population std and L2 norm. The
/// standard classifier has 4 parameterized layers, so this yields 24 floats.
pub fn extract_metrics(model: &ICModel) -> Vec<f64> {
    let mut out = Vec::new();
    for tensor in model.net.param_tensors() {
        out.push(tensor.mean());
        out.push(tensor.std());
        out.push(tensor.norm());
    }
    out
}
