//! Minimal sequential neural-net engine: dense, conv2d, batchnorm and flatten
//! layers with hand-written backprop, an SGD optimizer with per-layer L2 decay,
//! He-uniform initialization and a temperature softmax.
//!
//! Loss conventions: MSE carries the 1/(2N) factor and cross-entropy averages
//! over the batch, so gradients stay comparable across batch sizes.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.99;
const CE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    None,
    Relu,
    /// Leaky ReLU with negative slope `a`, 0 < a < 1.
    LeakyRelu(f64),
    /// Row-wise softmax. Only valid as the final activation.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    Mse,
    CrossEntropy,
}

#[derive(Debug, Clone)]
pub enum LayerKind {
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Conv2d {
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
    },
    BatchNorm {
        dim: usize,
        momentum: f64,
        eps: f64,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
    Flatten,
}

/// One layer of a sequential net. `weight`/`bias` are empty for flatten and
/// hold gamma/beta for batchnorm.
#[derive(Debug, Clone)]
pub struct Layer {
    pub kind: LayerKind,
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
    pub l2: f64,
}

impl Layer {
    pub fn dense<R: Rng>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        l2: f64,
        rng: &mut R,
    ) -> Result<Self> {
        validate_activation(activation)?;
        Ok(Self {
            kind: LayerKind::Dense { in_dim, out_dim },
            weight: he_uniform_init(vec![out_dim, in_dim], in_dim, rng)?,
            bias: Tensor::zeros(vec![out_dim]),
            activation,
            l2,
        })
    }

    pub fn conv2d<R: Rng>(
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
        l2: f64,
        rng: &mut R,
    ) -> Result<Self> {
        validate_activation(activation)?;
        if kernel == 0 || stride == 0 {
            return Err(Error::Config("conv2d kernel and stride must be positive".into()));
        }
        let fan_in = in_channels * kernel * kernel;
        Ok(Self {
            kind: LayerKind::Conv2d { in_channels, filters, kernel, stride },
            weight: he_uniform_init(vec![filters, in_channels, kernel, kernel], fan_in, rng)?,
            bias: Tensor::zeros(vec![filters]),
            activation,
            l2,
        })
    }

    pub fn batchnorm(dim: usize) -> Self {
        Self {
            kind: LayerKind::BatchNorm {
                dim,
                momentum: BATCHNORM_MOMENTUM,
                eps: BATCHNORM_EPS,
                running_mean: vec![0.0; dim],
                running_var: vec![1.0; dim],
            },
            weight: Tensor::filled(vec![dim], 1.0),
            bias: Tensor::zeros(vec![dim]),
            activation: Activation::None,
            l2: 0.0,
        }
    }

    pub fn flatten() -> Self {
        Self {
            kind: LayerKind::Flatten,
            weight: Tensor::zeros(vec![0]),
            bias: Tensor::zeros(vec![0]),
            activation: Activation::None,
            l2: 0.0,
        }
    }

    pub fn has_params(&self) -> bool {
        !matches!(self.kind, LayerKind::Flatten)
    }
}

fn validate_activation(activation: Activation) -> Result<()> {
    if let Activation::LeakyRelu(a) = activation {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Config(format!("leaky_relu slope must be in (0,1), got {a}")));
        }
    }
    Ok(())
}

/// Per-layer gradients, aligned with `Network::layers`. Flatten layers carry
/// empty tensors.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub dw: Tensor,
    pub db: Tensor,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub loss: Loss,
}

/// Per-layer forward cache kept for the backward pass.
enum Cache {
    Dense {
        input: Tensor,
        pre: Tensor,
        post: Tensor,
    },
    Conv {
        col: Vec<f64>,
        in_shape: [usize; 4],
        out_hw: (usize, usize),
        pre: Tensor,
        post: Tensor,
    },
    BatchNorm {
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Flatten {
        in_shape: Vec<usize>,
    },
}

impl Network {
    pub fn new(layers: Vec<Layer>, loss: Loss) -> Self {
        Self { layers, loss }
    }

    /// Run the net on a batch. `training` selects batch statistics (and
    /// updates running stats) for batchnorm layers; eval mode uses the stored
    /// running statistics.
    pub fn forward(&mut self, batch: &Tensor, training: bool) -> Result<Tensor> {
        let (out, _) = self.forward_impl(batch, training, false)?;
        Ok(out)
    }

    /// Eval-mode forward that cannot touch running statistics.
    pub fn forward_eval(&self, batch: &Tensor) -> Result<Tensor> {
        let mut x = batch.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let (out, _) = layer_forward(layer, &x, false, false)?;
            x = out;
            x.ensure_finite(&format!("layer {idx} output"))?;
        }
        Ok(x)
    }

    fn forward_impl(
        &mut self,
        batch: &Tensor,
        training: bool,
        keep_caches: bool,
    ) -> Result<(Tensor, Vec<Cache>)> {
        let mut x = batch.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for idx in 0..self.layers.len() {
            if training {
                update_running_stats(&mut self.layers[idx], &x);
            }
            let (out, cache) = layer_forward(&self.layers[idx], &x, training, keep_caches)?;
            x = out;
            x.ensure_finite(&format!("layer {idx} output"))?;
            if keep_caches {
                caches.push(cache.expect("cache requested"));
            }
        }
        Ok((x, caches))
    }

    /// Loss of the net on a batch without gradient bookkeeping.
    pub fn loss_value(&self, batch: &Tensor, target: &Tensor) -> Result<f64> {
        let pred = self.forward_eval(batch)?;
        compute_loss(self.loss, &pred, target)
    }

    /// Training-mode forward + backward. Returns the batch loss and one
    /// gradient per parameter, shaped like its parameter.
    pub fn backward(&mut self, batch: &Tensor, target: &Tensor) -> Result<(f64, GradientSet)> {
        self.backward_from(batch, |_| target.clone())
    }

    /// Like `backward`, but the regression target is built from the
    /// training-mode prediction itself. Entries copied from the prediction
    /// contribute zero gradient under MSE, which is how Q-learning masks the
    /// non-taken actions.
    pub fn backward_from(
        &mut self,
        batch: &Tensor,
        build_target: impl FnOnce(&Tensor) -> Tensor,
    ) -> Result<(f64, GradientSet)> {
        let (pred, caches) = self.forward_impl(batch, true, true)?;
        let target = &build_target(&pred);
        let loss = compute_loss(self.loss, &pred, target)?;

        let n = pred.rows().max(1) as f64;
        // Gradient wrt the final layer's pre-activation. Cross-entropy is
        // fused with the softmax head; every other combination goes through
        // the activation backward below.
        let fused_ce = self.loss == Loss::CrossEntropy;
        if fused_ce {
            let last = self
                .layers
                .last()
                .ok_or_else(|| Error::Config("empty network".into()))?;
            if last.activation != Activation::Softmax {
                return Err(Error::Config(
                    "cross_entropy requires a softmax final activation".into(),
                ));
            }
        }

        let mut grads: Vec<LayerGrads> = Vec::with_capacity(self.layers.len());
        // dL/d(output of current layer), walking backwards.
        let mut upstream: Tensor;
        if fused_ce {
            // dL/dz = (p - y)/N, skipping the softmax jacobian.
            let mut d = pred.clone();
            for (dv, yv) in d.data_mut().iter_mut().zip(target.data()) {
                *dv = (*dv - yv) / n;
            }
            upstream = d;
        } else {
            upstream = loss_backward(self.loss, &pred, target)?;
        }

        for (i, layer) in self.layers.iter().enumerate().rev() {
            let cache = &caches[i];
            let skip_activation = fused_ce && i == self.layers.len() - 1;
            let (dx, layer_grads) = layer_backward(layer, cache, &upstream, skip_activation)?;
            grads.push(layer_grads);
            upstream = dx;
        }
        grads.reverse();
        Ok((loss, GradientSet { layers: grads }))
    }

    /// One SGD step: param <- param - lr * (grad + l2 * param). Batchnorm
    /// running statistics stay untouched.
    pub fn sgd_step(&mut self, grads: &GradientSet, lr: f64) -> Result<()> {
        if lr <= 0.0 {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Config("gradient set does not match network".into()));
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            if !layer.has_params() {
                continue;
            }
            apply_update(&mut layer.weight, &g.dw, lr, layer.l2)?;
            apply_update(&mut layer.bias, &g.db, lr, layer.l2)?;
        }
        Ok(())
    }

    /// Parameter tensors in layer order (weight then bias per layer that has
    /// them). Drives layer-statistics extraction and checkpointing.
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if layer.has_params() {
                out.push(&layer.weight);
                out.push(&layer.bias);
            }
        }
        out
    }

    /// Output dimension of the final parameterized layer.
    pub fn output_dim(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| match l.kind {
            LayerKind::Dense { out_dim, .. } => Some(out_dim),
            _ => None,
        })
    }
}

fn apply_update(param: &mut Tensor, grad: &Tensor, lr: f64, l2: f64) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::Config(format!(
            "gradient shape {:?} does not match parameter {:?}",
            grad.shape(),
            param.shape()
        )));
    }
    for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * (g + l2 * *p);
    }
    param.ensure_finite("sgd update")?;
    Ok(())
}

// ---- layer forward/backward ----

fn layer_forward(
    layer: &Layer,
    input: &Tensor,
    training: bool,
    keep_cache: bool,
) -> Result<(Tensor, Option<Cache>)> {
    match layer.kind {
        LayerKind::Dense { in_dim, out_dim } => {
            if input.row_len() != in_dim {
                return Err(Error::Config(format!(
                    "dense layer expects {} inputs per row, got {}",
                    in_dim,
                    input.row_len()
                )));
            }
            let n = input.rows();
            let mut pre = matmul_nt(input.data(), n, in_dim, layer.weight.data(), out_dim);
            for row in 0..n {
                for (j, b) in layer.bias.data().iter().enumerate() {
                    pre[row * out_dim + j] += b;
                }
            }
            let pre = Tensor::new(vec![n, out_dim], pre)?;
            let post = apply_activation(layer.activation, &pre);
            let cache = keep_cache.then(|| Cache::Dense {
                input: input.clone(),
                pre: pre.clone(),
                post: post.clone(),
            });
            Ok((post, cache))
        }
        LayerKind::Conv2d { in_channels, filters, kernel, stride } => {
            let shape = input.shape();
            if shape.len() != 4 || shape[1] != in_channels {
                return Err(Error::Config(format!(
                    "conv2d expects [N, {in_channels}, H, W] input, got {shape:?}"
                )));
            }
            let (n, h, w) = (shape[0], shape[2], shape[3]);
            if h < kernel || w < kernel {
                return Err(Error::Config(format!(
                    "conv2d kernel {kernel} does not fit {h}x{w} input"
                )));
            }
            let oh = (h - kernel) / stride + 1;
            let ow = (w - kernel) / stride + 1;
            let col = im2col(input.data(), n, in_channels, h, w, kernel, stride, oh, ow);
            let patch = in_channels * kernel * kernel;
            let rows = n * oh * ow;
            let mut out_col = matmul_nt(&col, rows, patch, layer.weight.data(), filters);
            for r in 0..rows {
                for (f, b) in layer.bias.data().iter().enumerate() {
                    out_col[r * filters + f] += b;
                }
            }
            // [N*OH*OW, F] -> [N, F, OH, OW]
            let mut pre = vec![0.0; n * filters * oh * ow];
            for img in 0..n {
                for y in 0..oh {
                    for x in 0..ow {
                        let r = (img * oh + y) * ow + x;
                        for f in 0..filters {
                            pre[((img * filters + f) * oh + y) * ow + x] = out_col[r * filters + f];
                        }
                    }
                }
            }
            let pre = Tensor::new(vec![n, filters, oh, ow], pre)?;
            let post = apply_activation(layer.activation, &pre);
            let cache = keep_cache.then(|| Cache::Conv {
                col,
                in_shape: [n, in_channels, h, w],
                out_hw: (oh, ow),
                pre: pre.clone(),
                post: post.clone(),
            });
            Ok((post, cache))
        }
        LayerKind::BatchNorm { dim, eps, .. } => {
            if input.row_len() != dim {
                return Err(Error::Config(format!(
                    "batchnorm expects {} features per row, got {}",
                    dim,
                    input.row_len()
                )));
            }
            let n = input.rows();
            let (mean, var) = if training {
                batch_moments(input, dim)
            } else {
                match &layer.kind {
                    LayerKind::BatchNorm { running_mean, running_var, .. } => {
                        (running_mean.clone(), running_var.clone())
                    }
                    _ => unreachable!(),
                }
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let gamma = layer.weight.data();
            let beta = layer.bias.data();
            let mut normalized = vec![0.0; n * dim];
            let mut out = vec![0.0; n * dim];
            for i in 0..n {
                let row = input.row(i);
                for d in 0..dim {
                    let xn = (row[d] - mean[d]) * inv_std[d];
                    normalized[i * dim + d] = xn;
                    out[i * dim + d] = gamma[d] * xn + beta[d];
                }
            }
            let out = Tensor::new(vec![n, dim], out)?;
            let cache = keep_cache.then(|| Cache::BatchNorm {
                normalized: normalized.clone(),
                inv_std: inv_std.clone(),
            });
            // Activation::None by construction for batchnorm layers.
            Ok((out, cache))
        }
        LayerKind::Flatten => {
            let in_shape = input.shape().to_vec();
            let n = input.rows();
            let flat = input.clone().reshape(vec![n, input.row_len()])?;
            let cache = keep_cache.then(|| Cache::Flatten { in_shape });
            Ok((flat, cache))
        }
    }
}

/// Training-mode forward has to fold the batch statistics into the running
/// estimates; done as a separate pass so eval forward can stay `&self`.
fn update_running_stats(layer: &mut Layer, input: &Tensor) {
    if let LayerKind::BatchNorm { dim, momentum, running_mean, running_var, .. } = &mut layer.kind {
        let (mean, var) = batch_moments(input, *dim);
        for d in 0..*dim {
            running_mean[d] = *momentum * running_mean[d] + (1.0 - *momentum) * mean[d];
            running_var[d] = *momentum * running_var[d] + (1.0 - *momentum) * var[d];
        }
    }
}

fn batch_moments(input: &Tensor, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = input.rows().max(1) as f64;
    let mut mean = vec![0.0; dim];
    let mut var = vec![0.0; dim];
    for i in 0..input.rows() {
        for (d, v) in input.row(i).iter().enumerate() {
            mean[d] += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    for i in 0..input.rows() {
        for (d, v) in input.row(i).iter().enumerate() {
            let delta = v - mean[d];
            var[d] += delta * delta;
        }
    }
    for v in var.iter_mut() {
        *v /= n;
    }
    (mean, var)
}

fn layer_backward(
    layer: &Layer,
    cache: &Cache,
    upstream: &Tensor,
    skip_activation: bool,
) -> Result<(Tensor, LayerGrads)> {
    match (&layer.kind, cache) {
        (LayerKind::Dense { in_dim, out_dim }, Cache::Dense { input, pre, post }) => {
            let n = input.rows();
            let dpre = if skip_activation {
                upstream.clone()
            } else {
                activation_backward(layer.activation, pre, post, upstream)
            };
            let dw = matmul_tn(dpre.data(), n, *out_dim, input.data(), *in_dim);
            let mut db = vec![0.0; *out_dim];
            for i in 0..n {
                for (j, v) in dpre.row(i).iter().enumerate() {
                    db[j] += v;
                }
            }
            let dx = matmul_nn(dpre.data(), n, *out_dim, layer.weight.data(), *in_dim);
            Ok((
                Tensor::new(vec![n, *in_dim], dx)?,
                LayerGrads {
                    dw: Tensor::new(vec![*out_dim, *in_dim], dw)?,
                    db: Tensor::new(vec![*out_dim], db)?,
                },
            ))
        }
        (
            LayerKind::Conv2d { in_channels, filters, kernel, stride },
            Cache::Conv { col, in_shape, out_hw, pre, post },
        ) => {
            let dpre = if skip_activation {
                upstream.clone()
            } else {
                activation_backward(layer.activation, pre, post, upstream)
            };
            let [n, _, h, w] = *in_shape;
            let (oh, ow) = *out_hw;
            let patch = in_channels * kernel * kernel;
            let rows = n * oh * ow;
            // [N, F, OH, OW] -> [N*OH*OW, F]
            let dpre_data = dpre.data();
            let mut dout_col = vec![0.0; rows * filters];
            for img in 0..n {
                for f in 0..*filters {
                    for y in 0..oh {
                        for x in 0..ow {
                            let r = (img * oh + y) * ow + x;
                            dout_col[r * filters + f] =
                                dpre_data[((img * filters + f) * oh + y) * ow + x];
                        }
                    }
                }
            }
            let dw = matmul_tn(&dout_col, rows, *filters, col, patch);
            let mut db = vec![0.0; *filters];
            for r in 0..rows {
                for f in 0..*filters {
                    db[f] += dout_col[r * filters + f];
                }
            }
            let dcol = matmul_nn(&dout_col, rows, *filters, layer.weight.data(), patch);
            let dx = col2im(&dcol, n, *in_channels, h, w, *kernel, *stride, oh, ow);
            Ok((
                Tensor::new(vec![n, *in_channels, h, w], dx)?,
                LayerGrads {
                    dw: Tensor::new(vec![*filters, *in_channels, *kernel, *kernel], dw)?,
                    db: Tensor::new(vec![*filters], db)?,
                },
            ))
        }
        (LayerKind::BatchNorm { dim, .. }, Cache::BatchNorm { normalized, inv_std }) => {
            let n = upstream.rows();
            let nf = n as f64;
            let gamma = layer.weight.data();
            let mut dgamma = vec![0.0; *dim];
            let mut dbeta = vec![0.0; *dim];
            for i in 0..n {
                for (d, v) in upstream.row(i).iter().enumerate() {
                    dgamma[d] += v * normalized[i * dim + d];
                    dbeta[d] += v;
                }
            }
            let mut dx = vec![0.0; n * dim];
            for i in 0..n {
                for d in 0..*dim {
                    let dy = upstream.row(i)[d];
                    dx[i * dim + d] = gamma[d] * inv_std[d] / nf
                        * (nf * dy - dbeta[d] - normalized[i * dim + d] * dgamma[d]);
                }
            }
            Ok((
                Tensor::new(vec![n, *dim], dx)?,
                LayerGrads {
                    dw: Tensor::new(vec![*dim], dgamma)?,
                    db: Tensor::new(vec![*dim], dbeta)?,
                },
            ))
        }
        (LayerKind::Flatten, Cache::Flatten { in_shape }) => Ok((
            upstream.clone().reshape(in_shape.clone())?,
            LayerGrads { dw: Tensor::zeros(vec![0]), db: Tensor::zeros(vec![0]) },
        )),
        _ => Err(Error::Config("layer/cache mismatch in backward".into())),
    }
}

fn apply_activation(activation: Activation, pre: &Tensor) -> Tensor {
    match activation {
        Activation::None => pre.clone(),
        Activation::Relu => {
            let mut out = pre.clone();
            for v in out.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            out
        }
        Activation::LeakyRelu(a) => {
            let mut out = pre.clone();
            for v in out.data_mut() {
                if *v < 0.0 {
                    *v *= a;
                }
            }
            out
        }
        Activation::Softmax => {
            let mut out = pre.clone();
            for i in 0..out.rows() {
                softmax_in_place(out.row_mut(i), 1.0);
            }
            out
        }
    }
}

/// dL/dpre given dL/dpost.
fn activation_backward(activation: Activation, pre: &Tensor, post: &Tensor, upstream: &Tensor) -> Tensor {
    match activation {
        Activation::None => upstream.clone(),
        Activation::Relu => {
            let mut out = upstream.clone();
            for (d, z) in out.data_mut().iter_mut().zip(pre.data()) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
            out
        }
        Activation::LeakyRelu(a) => {
            let mut out = upstream.clone();
            for (d, z) in out.data_mut().iter_mut().zip(pre.data()) {
                if *z <= 0.0 {
                    *d *= a;
                }
            }
            out
        }
        Activation::Softmax => {
            // dz_j = p_j * (dy_j - sum_k dy_k p_k), row-wise.
            let mut out = upstream.clone();
            let width = out.row_len();
            for i in 0..out.rows() {
                let p = post.row(i);
                let dot: f64 = (0..width).map(|j| out.row(i)[j] * p[j]).sum();
                let row = out.row_mut(i);
                for j in 0..width {
                    row[j] = p[j] * (row[j] - dot);
                }
            }
            out
        }
    }
}

// ---- losses ----

pub fn compute_loss(loss: Loss, pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Config(format!(
            "prediction shape {:?} does not match target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.rows().max(1) as f64;
    let value = match loss {
        Loss::Mse => {
            let sq: f64 = pred
                .data()
                .iter()
                .zip(target.data())
                .map(|(p, y)| (p - y) * (p - y))
                .sum();
            sq / (2.0 * n)
        }
        Loss::CrossEntropy => {
            let mut sum = 0.0;
            for (p, y) in pred.data().iter().zip(target.data()) {
                if *y != 0.0 {
                    sum -= y * p.clamp(CE_CLAMP, 1.0).ln();
                }
            }
            sum / n
        }
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numeric("non-finite loss".into()))
    }
}

/// dL/dpred. Cross-entropy is only reachable through the fused softmax path
/// in `Network::backward`.
fn loss_backward(loss: Loss, pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let n = pred.rows().max(1) as f64;
    match loss {
        Loss::Mse => {
            let mut d = pred.clone();
            for (dv, y) in d.data_mut().iter_mut().zip(target.data()) {
                *dv = (*dv - y) / n;
            }
            Ok(d)
        }
        Loss::CrossEntropy => Err(Error::Config(
            "cross_entropy gradient requires the fused softmax head".into(),
        )),
    }
}

// ---- spec-level free functions ----

/// Samples uniform in [-sqrt(6/fan_in), +sqrt(6/fan_in)].
pub fn he_uniform_init<R: Rng>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(Error::Config("he_uniform fan_in must be >= 1".into()));
    }
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape, data)
}

/// Shift-by-max softmax with temperature, in place. `tau` must be positive.
pub fn softmax_in_place(values: &mut [f64], tau: f64) {
    debug_assert!(tau > 0.0);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = ((*v - max) / tau).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

/// Temperature softmax over a vector tensor.
pub fn softmax(v: &Tensor, temperature: f64) -> Result<Tensor> {
    if temperature <= 0.0 {
        return Err(Error::Config(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    let mut out = v.clone();
    softmax_in_place(out.data_mut(), temperature);
    Ok(out)
}

// ---- small dense linear algebra ----

/// C[m,n] = A[m,k] * B[n,k]^T
fn matmul_nt(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        let cr = &mut c[i * n..(i + 1) * n];
        for (j, cv) in cr.iter_mut().enumerate() {
            let br = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (av, bv) in ar.iter().zip(br) {
                acc += av * bv;
            }
            *cv = acc;
        }
    }
    c
}

/// C[m,n] = A[l,m]^T * B[l,n]
fn matmul_tn(a: &[f64], l: usize, m: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for row in 0..l {
        let ar = &a[row * m..(row + 1) * m];
        let br = &b[row * n..(row + 1) * n];
        for (i, av) in ar.iter().enumerate() {
            if *av == 0.0 {
                continue;
            }
            let cr = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in cr.iter_mut().zip(br) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// C[m,n] = A[m,k] * B[k,n]
fn matmul_nn(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        let cr = &mut c[i * n..(i + 1) * n];
        for (l, av) in ar.iter().enumerate() {
            if *av == 0.0 {
                continue;
            }
            let br = &b[l * n..(l + 1) * n];
            for (cv, bv) in cr.iter_mut().zip(br) {
                *cv += av * bv;
            }
        }
    }
    c
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    input: &[f64],
    n: usize,
    channels: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let patch = channels * kernel * kernel;
    let mut col = vec![0.0; n * oh * ow * patch];
    for img in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                let row = ((img * oh + y) * ow + x) * patch;
                let (sy, sx) = (y * stride, x * stride);
                let mut p = row;
                for c in 0..channels {
                    let base = ((img * channels + c) * h + sy) * w + sx;
                    for ky in 0..kernel {
                        let src = base + ky * w;
                        col[p..p + kernel].copy_from_slice(&input[src..src + kernel]);
                        p += kernel;
                    }
                }
            }
        }
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    dcol: &[f64],
    n: usize,
    channels: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let patch = channels * kernel * kernel;
    let mut dx = vec![0.0; n * channels * h * w];
    for img in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                let row = ((img * oh + y) * ow + x) * patch;
                let (sy, sx) = (y * stride, x * stride);
                let mut p = row;
                for c in 0..channels {
                    let base = ((img * channels + c) * h + sy) * w + sx;
                    for ky in 0..kernel {
                        let dst = base + ky * w;
                        for kx in 0..kernel {
                            dx[dst + kx] += dcol[p];
                            p += 1;
                        }
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Central finite differences over every parameter of `net`, compared
    /// against the analytic gradients at 1e-4 relative tolerance. Uses only
    /// training-mode loss evaluation, never the backward pass it checks.
    fn finite_difference_check(net: &mut Network, x: &Tensor, y: &Tensor) {
        const H: f64 = 1e-5;
        let (_, grads) = net.backward(x, y).unwrap();
        for li in 0..net.layers.len() {
            if !net.layers[li].has_params() {
                continue;
            }
            for which in [0usize, 1] {
                let len = if which == 0 {
                    net.layers[li].weight.len()
                } else {
                    net.layers[li].bias.len()
                };
                for pi in 0..len {
                    let read = |n: &mut Network, v: f64| -> f64 {
                        {
                            let t = if which == 0 {
                                &mut n.layers[li].weight
                            } else {
                                &mut n.layers[li].bias
                            };
                            t.data_mut()[pi] = v;
                        }
                        let pred = n.forward(x, true).unwrap();
                        compute_loss(n.loss, &pred, y).unwrap()
                    };
                    let orig = if which == 0 {
                        net.layers[li].weight.data()[pi]
                    } else {
                        net.layers[li].bias.data()[pi]
                    };
                    let hi = read(net, orig + H);
                    let lo = read(net, orig - H);
                    read(net, orig); // restore
                    let numeric = (hi - lo) / (2.0 * H);
                    let analytic = if which == 0 {
                        grads.layers[li].dw.data()[pi]
                    } else {
                        grads.layers[li].db.data()[pi]
                    };
                    let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                    assert!(
                        (numeric - analytic).abs() / denom <= 1e-4,
                        "layer {li} param {pi}: analytic {analytic} vs numeric {numeric}"
                    );
                }
            }
        }
    }

    fn random_batch<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(vec![rows, cols], data).unwrap()
    }

    fn one_hot_batch(labels: &[usize], classes: usize) -> Tensor {
        let mut data = vec![0.0; labels.len() * classes];
        for (i, l) in labels.iter().enumerate() {
            data[i * classes + l] = 1.0;
        }
        Tensor::new(vec![labels.len(), classes], data).unwrap()
    }

    #[test]
    fn dense_identity_forward() {
        let mut r = rng(0);
        let mut layer = Layer::dense(2, 2, Activation::None, 0.0, &mut r).unwrap();
        layer.weight = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        layer.bias = Tensor::zeros(vec![2]);
        let mut net = Network::new(vec![layer], Loss::Mse);
        let out = net
            .forward(&Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap(), false)
            .unwrap();
        assert_eq!(out.data(), &[3.0, 4.0]);
    }

    #[test]
    fn leaky_relu_discounts_negatives() {
        let pre = Tensor::new(vec![1, 2], vec![-2.0, 5.0]).unwrap();
        let post = apply_activation(Activation::LeakyRelu(0.1), &pre);
        assert!((post.data()[0] + 0.2).abs() < 1e-12);
        assert_eq!(post.data()[1], 5.0);
    }

    #[test]
    fn leaky_relu_slope_validated() {
        let mut r = rng(0);
        assert!(Layer::dense(2, 2, Activation::LeakyRelu(1.0), 0.0, &mut r).is_err());
        assert!(Layer::dense(2, 2, Activation::LeakyRelu(0.0), 0.0, &mut r).is_err());
    }

    #[test]
    fn conv_identity_kernel() {
        let mut r = rng(1);
        let mut layer = Layer::conv2d(1, 1, 1, 1, Activation::None, 0.0, &mut r).unwrap();
        layer.weight = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let image: Vec<f64> = (0..16).map(|v| v as f64 / 7.0).collect();
        let x = Tensor::new(vec![1, 1, 4, 4], image.clone()).unwrap();
        let mut net = Network::new(vec![layer], Loss::Mse);
        let out = net.forward(&x, false).unwrap();
        assert_eq!(out.shape(), &[1, 1, 4, 4]);
        assert_eq!(out.data(), &image[..]);
    }

    #[test]
    fn conv_output_geometry() {
        let mut r = rng(2);
        let layer = Layer::conv2d(1, 64, 3, 3, Activation::Relu, 0.0, &mut r).unwrap();
        let x = Tensor::zeros(vec![2, 1, 28, 28]);
        let mut net = Network::new(vec![layer], Loss::Mse);
        let out = net.forward(&x, false).unwrap();
        assert_eq!(out.shape(), &[2, 64, 9, 9]);
    }

    #[test]
    fn backward_dense_1x1_hand_case() {
        let mut r = rng(0);
        let mut layer = Layer::dense(1, 1, Activation::None, 0.0, &mut r).unwrap();
        layer.weight = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
        layer.bias = Tensor::zeros(vec![1]);
        let mut net = Network::new(vec![layer], Loss::Mse);
        let x = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let y = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
        let (loss, grads) = net.backward(&x, &y).unwrap();
        assert!((loss - 2.0).abs() < 1e-12); // 1/2 * (2-0)^2
        assert!((grads.layers[0].dw.data()[0] - 2.0).abs() < 1e-12);
        assert!((grads.layers[0].db.data()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn backward_zero_at_minimum() {
        let mut r = rng(3);
        let net_layers = vec![
            Layer::dense(3, 4, Activation::LeakyRelu(0.2), 0.0, &mut r).unwrap(),
            Layer::dense(4, 2, Activation::None, 0.0, &mut r).unwrap(),
        ];
        let mut net = Network::new(net_layers, Loss::Mse);
        let x = random_batch(5, 3, &mut r);
        let y = net.forward(&x, false).unwrap();
        let (loss, grads) = net.backward(&x, &y).unwrap();
        assert!(loss.abs() < 1e-18);
        for lg in &grads.layers {
            assert!(lg.dw.data().iter().all(|v| v.abs() < 1e-12));
            assert!(lg.db.data().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn gradient_check_dense_stack_mse() {
        let mut r = rng(7);
        let layers = vec![
            Layer::dense(4, 6, Activation::LeakyRelu(0.1), 0.0, &mut r).unwrap(),
            Layer::dense(6, 3, Activation::None, 0.0, &mut r).unwrap(),
        ];
        let mut net = Network::new(layers, Loss::Mse);
        let x = random_batch(5, 4, &mut r);
        let y = random_batch(5, 3, &mut r);
        finite_difference_check(&mut net, &x, &y);
    }

    #[test]
    fn gradient_check_batchnorm() {
        let mut r = rng(8);
        let layers = vec![
            Layer::dense(3, 8, Activation::LeakyRelu(0.3), 0.0, &mut r).unwrap(),
            Layer::batchnorm(8),
            Layer::dense(8, 2, Activation::None, 0.0, &mut r).unwrap(),
        ];
        let mut net = Network::new(layers, Loss::Mse);
        let x = random_batch(6, 3, &mut r);
        let y = random_batch(6, 2, &mut r);
        finite_difference_check(&mut net, &x, &y);
    }

    #[test]
    fn gradient_check_conv_flatten_softmax_ce() {
        let mut r = rng(9);
        let layers = vec![
            Layer::conv2d(1, 2, 3, 2, Activation::LeakyRelu(0.1), 0.0, &mut r).unwrap(),
            Layer::conv2d(2, 3, 2, 1, Activation::Relu, 0.0, &mut r).unwrap(),
            Layer::flatten(),
            Layer::dense(12, 3, Activation::Softmax, 0.0, &mut r).unwrap(),
        ];
        let mut net = Network::new(layers, Loss::CrossEntropy);
        let data = (0..49).map(|_| r.gen_range(0.0..1.0)).collect();
        let x = Tensor::new(vec![1, 1, 7, 7], data).unwrap();
        let y = one_hot_batch(&[1], 3);
        finite_difference_check(&mut net, &x, &y);
    }

    #[test]
    fn gradient_check_softmax_with_mse() {
        // Exercises the general softmax jacobian (non-fused path).
        let mut r = rng(10);
        let layers = vec![Layer::dense(3, 4, Activation::Softmax, 0.0, &mut r).unwrap()];
        let mut net = Network::new(layers, Loss::Mse);
        let x = random_batch(4, 3, &mut r);
        let y = random_batch(4, 4, &mut r);
        finite_difference_check(&mut net, &x, &y);
    }

    #[test]
    fn sgd_arithmetic() {
        let mut r = rng(0);
        let mut layer = Layer::dense(1, 1, Activation::None, 0.0, &mut r).unwrap();
        layer.weight = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let mut net = Network::new(vec![layer], Loss::Mse);
        let grads = GradientSet {
            layers: vec![LayerGrads {
                dw: Tensor::new(vec![1, 1], vec![0.5]).unwrap(),
                db: Tensor::zeros(vec![1]),
            }],
        };
        net.sgd_step(&grads, 0.1).unwrap();
        assert!((net.layers[0].weight.data()[0] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn sgd_zero_grad_is_identity_without_l2() {
        let mut r = rng(4);
        let layer = Layer::dense(3, 2, Activation::None, 0.0, &mut r).unwrap();
        let before = layer.weight.clone();
        let mut net = Network::new(vec![layer], Loss::Mse);
        let grads = GradientSet {
            layers: vec![LayerGrads {
                dw: Tensor::zeros(vec![2, 3]),
                db: Tensor::zeros(vec![2]),
            }],
        };
        net.sgd_step(&grads, 0.1).unwrap();
        assert_eq!(net.layers[0].weight, before);
    }

    #[test]
    fn sgd_l2_decay_arithmetic() {
        let mut r = rng(0);
        let mut layer = Layer::dense(1, 1, Activation::None, 0.001, &mut r).unwrap();
        layer.weight = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let mut net = Network::new(vec![layer], Loss::Mse);
        let grads = GradientSet {
            layers: vec![LayerGrads {
                dw: Tensor::zeros(vec![1, 1]),
                db: Tensor::zeros(vec![1]),
            }],
        };
        net.sgd_step(&grads, 0.1).unwrap();
        assert!((net.layers[0].weight.data()[0] - 0.9999).abs() < 1e-12);
    }

    #[test]
    fn he_uniform_bounds_and_mean() {
        let mut r = rng(11);
        let t = he_uniform_init(vec![10000], 6, &mut r).unwrap();
        assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(t.mean().abs() < 0.02);
        let t24 = he_uniform_init(vec![1000], 24, &mut r).unwrap();
        assert!(t24.data().iter().all(|v| v.abs() <= 0.5));
        assert!(he_uniform_init(vec![4], 0, &mut r).is_err());
    }

    #[test]
    fn softmax_symmetry_and_closed_form() {
        let v = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let p = softmax(&v, 1.0).unwrap();
        assert!((p.data()[0] - 0.5).abs() < 1e-12);

        // Two classes collapse to the logistic function: p0 = sigma((2-0)/0.2).
        let v = Tensor::new(vec![2], vec![2.0, 0.0]).unwrap();
        let p = softmax(&v, 0.2).unwrap();
        let sigma10 = 1.0 / (1.0 + (-10.0f64).exp());
        assert!((p.data()[0] - sigma10).abs() < 1e-9);
        assert!((p.data()[1] - (1.0 - sigma10)).abs() < 1e-9);
    }

    #[test]
    fn softmax_large_values_no_overflow() {
        let v = Tensor::new(vec![2], vec![1000.0, 0.0]).unwrap();
        let p = softmax(&v, 1.0).unwrap();
        assert!(p.all_finite());
        assert!((p.data()[0] - 1.0).abs() < 1e-12);
        assert!(p.data()[1] >= 0.0);
        assert!(softmax(&v, 0.0).is_err());
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let mut r = rng(12);
        let layers = vec![Layer::dense(3, 5, Activation::Softmax, 0.0, &mut r).unwrap()];
        let mut net = Network::new(layers, Loss::CrossEntropy);
        let x = random_batch(7, 3, &mut r);
        let out = net.forward(&x, false).unwrap();
        for i in 0..out.rows() {
            let row = out.row(i);
            assert!(row.iter().all(|p| *p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn cross_entropy_of_confident_correct_prediction_is_small() {
        let pred = Tensor::new(vec![1, 3], vec![1.0 - 2e-12, 1e-12, 1e-12]).unwrap();
        let target = one_hot_batch(&[0], 3);
        let loss = compute_loss(Loss::CrossEntropy, &pred, &target).unwrap();
        assert!(loss.abs() < 1e-9);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut r = rng(13);
        let layers = vec![
            Layer::dense(4, 8, Activation::LeakyRelu(0.3), 0.0, &mut r).unwrap(),
            Layer::batchnorm(8),
            Layer::dense(8, 2, Activation::None, 0.0, &mut r).unwrap(),
        ];
        let net = Network::new(layers, Loss::Mse);
        let x = random_batch(3, 4, &mut r);
        let a = net.forward_eval(&x).unwrap();
        let b = net.forward_eval(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batchnorm_modes_differ_and_running_stats_update() {
        let layers = vec![Layer::batchnorm(2)];
        let mut net = Network::new(layers, Loss::Mse);
        let x = Tensor::new(vec![4, 2], vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]).unwrap();
        let train_out = net.forward(&x, true).unwrap();
        // batch statistics: each column normalized to mean 0.
        let col0_mean: f64 = (0..4).map(|i| train_out.row(i)[0]).sum::<f64>() / 4.0;
        assert!(col0_mean.abs() < 1e-9);
        match &net.layers[0].kind {
            LayerKind::BatchNorm { running_mean, .. } => {
                // one update: 0.99 * 0 + 0.01 * 2.5
                assert!((running_mean[0] - 0.025).abs() < 1e-12);
            }
            _ => unreachable!(),
        }
        let eval_out = net.forward(&x, false).unwrap();
        assert_ne!(train_out, eval_out);
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let mut r = rng(15);
        let layers = vec![Layer::dense(4, 2, Activation::None, 0.0, &mut r).unwrap()];
        let mut net = Network::new(layers, Loss::Mse);
        let x = random_batch(2, 3, &mut r);
        assert!(matches!(net.forward(&x, false), Err(Error::Config(_))));
    }
}
