//! The layers a sparse block is made of: submanifold convolution, batch
//! normalization, ReLU and 2x2 max pooling, each with a hand-written
//! backward pass.
//!
//! Convolution and pooling are driven by a prebuilt [`RuleBook`]; the
//! layer functions themselves never touch grid coordinates beyond the
//! rulebook's support arrays. Backward passes take the same inputs the
//! forward pass saw (the caller keeps them alive), so no layer owns any
//! hidden state between calls.
//!
//! All accumulations iterate sites in sorted coordinate order, which makes
//! every result bit-reproducible for a fixed input.

use crate::error::{Error, Result};
use crate::sparse::{RuleBook, RuleBookKind, SparseTensor};

/// Weights of one submanifold convolution.
///
/// `weights` is laid out as `[kernel offset][in channel][out channel]`,
/// flattened row-major; `offset` follows the rulebook convention
/// `(di + k/2) * k + (dj + k/2)`.
#[derive(Clone, Debug)]
pub struct SscLayer {
    pub kernel_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl SscLayer {
    /// Zero-initialized layer with validated shapes.
    pub fn zeros(kernel_size: usize, in_channels: usize, out_channels: usize) -> Result<Self> {
        if kernel_size == 0 || kernel_size % 2 == 0 {
            return Err(Error::config(format!(
                "kernel size must be odd and positive, got {kernel_size}"
            )));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::config("channel counts must be at least 1"));
        }
        Ok(SscLayer {
            kernel_size,
            in_channels,
            out_channels,
            weights: vec![0.0; kernel_size * kernel_size * in_channels * out_channels],
            bias: vec![0.0; out_channels],
        })
    }

    #[inline]
    fn w(&self, offset: usize, ci: usize, co: usize) -> f64 {
        self.weights[(offset * self.in_channels + ci) * self.out_channels + co]
    }
}

/// Gradients produced by [`ssc_backward`].
pub struct SscGrads {
    pub input: SparseTensor,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

fn check_support(rb_support: &[crate::sparse::Coord], x: &SparseTensor, what: &str) -> Result<()> {
    if rb_support.len() != x.len() || rb_support.iter().any(|c| !x.contains(*c)) {
        return Err(Error::contract(format!(
            "rulebook {what} support does not match tensor support"
        )));
    }
    Ok(())
}

/// Submanifold convolution: output sites are exactly the input sites, and
/// each output accumulates `weights[offset] * input[site + offset]` over
/// the rules, plus a bias at every active site.
pub fn ssc_forward(layer: &SscLayer, x: &SparseTensor, rb: &RuleBook) -> Result<SparseTensor> {
    if rb.kind() != RuleBookKind::Submanifold || rb.kernel_size() != layer.kernel_size {
        return Err(Error::contract(
            "rulebook was not built for this submanifold layer",
        ));
    }
    if x.channels() != layer.in_channels {
        return Err(Error::contract(format!(
            "input has {} channels, layer expects {}",
            x.channels(),
            layer.in_channels
        )));
    }
    check_support(rb.input_support(), x, "input")?;

    let n = rb.input_support().len();
    let (cin, cout) = (layer.in_channels, layer.out_channels);
    let in_feats: Vec<&[f64]> = rb
        .input_support()
        .iter()
        .map(|c| x.get(*c).expect("support checked"))
        .collect();

    let mut out = vec![0.0; n * cout];
    for site in out.chunks_exact_mut(cout) {
        site.copy_from_slice(&layer.bias);
    }
    for rule in rb.rules() {
        let xi = in_feats[rule.input as usize];
        let dst = &mut out[rule.output as usize * cout..(rule.output as usize + 1) * cout];
        let wbase = rule.offset as usize * cin * cout;
        for (ci, &xv) in xi.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wrow = &layer.weights[wbase + ci * cout..wbase + (ci + 1) * cout];
            for (d, &w) in dst.iter_mut().zip(wrow) {
                *d += w * xv;
            }
        }
    }

    let mut y = SparseTensor::new(x.grid_size(), cout)?;
    for (idx, c) in rb.output_support().iter().enumerate() {
        y.insert(*c, out[idx * cout..(idx + 1) * cout].to_vec())?;
    }
    Ok(y)
}

/// Backward pass of [`ssc_forward`] given the forward input `x` and the
/// rulebook used. Returns gradients for the input sites, the weights and
/// the bias.
pub fn ssc_backward(
    layer: &SscLayer,
    x: &SparseTensor,
    rb: &RuleBook,
    grad_y: &SparseTensor,
) -> Result<SscGrads> {
    if rb.kind() != RuleBookKind::Submanifold || rb.kernel_size() != layer.kernel_size {
        return Err(Error::contract(
            "rulebook was not built for this submanifold layer",
        ));
    }
    if grad_y.channels() != layer.out_channels {
        return Err(Error::contract("output gradient channel mismatch"));
    }
    check_support(rb.input_support(), x, "input")?;
    check_support(rb.output_support(), grad_y, "output")?;

    let (cin, cout) = (layer.in_channels, layer.out_channels);
    let in_feats: Vec<&[f64]> = rb
        .input_support()
        .iter()
        .map(|c| x.get(*c).expect("support checked"))
        .collect();
    let out_grads: Vec<&[f64]> = rb
        .output_support()
        .iter()
        .map(|c| grad_y.get(*c).expect("support checked"))
        .collect();

    let mut grad_b = vec![0.0; cout];
    for gy in &out_grads {
        for (b, g) in grad_b.iter_mut().zip(gy.iter()) {
            *b += g;
        }
    }

    let mut grad_w = vec![0.0; layer.weights.len()];
    let mut grad_x = vec![0.0; in_feats.len() * cin];
    for rule in rb.rules() {
        let xi = in_feats[rule.input as usize];
        let gy = out_grads[rule.output as usize];
        let wbase = rule.offset as usize * cin * cout;
        let gx = &mut grad_x[rule.input as usize * cin..(rule.input as usize + 1) * cin];
        for ci in 0..cin {
            let wrow = &layer.weights[wbase + ci * cout..wbase + (ci + 1) * cout];
            let gwrow = &mut grad_w[wbase + ci * cout..wbase + (ci + 1) * cout];
            let xv = xi[ci];
            let mut acc = 0.0;
            for co in 0..cout {
                gwrow[co] += xv * gy[co];
                acc += wrow[co] * gy[co];
            }
            gx[ci] += acc;
        }
    }

    let mut input = SparseTensor::new(x.grid_size(), cin)?;
    for (idx, c) in rb.input_support().iter().enumerate() {
        input.insert(*c, grad_x[idx * cin..(idx + 1) * cin].to_vec())?;
    }
    Ok(SscGrads {
        input,
        weights: grad_w,
        bias: grad_b,
    })
}

/// Per-channel batch normalization over the active sites of a batch.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::config("channels must be at least 1"));
        }
        Ok(BatchNorm {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    /// Folds one batch's statistics into the running estimates.
    pub fn update_running(&mut self, stats: &BnBatchStats) {
        for c in 0..self.channels {
            self.running_mean[c] =
                (1.0 - self.momentum) * self.running_mean[c] + self.momentum * stats.mean[c];
            self.running_var[c] =
                (1.0 - self.momentum) * self.running_var[c] + self.momentum * stats.var[c];
        }
    }
}

/// Per-channel mean and (biased) variance of one training batch, plus the
/// number of active sites they were computed over.
#[derive(Clone, Debug)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

/// Training-mode batch norm: statistics are pooled over every active site
/// of every batch member. Supports pass through unchanged.
pub fn batchnorm_forward_train(
    bn: &BatchNorm,
    batch: &[SparseTensor],
) -> Result<(Vec<SparseTensor>, BnBatchStats)> {
    let c = bn.channels;
    for x in batch {
        if x.channels() != c {
            return Err(Error::contract("batch norm channel mismatch"));
        }
    }
    let count: usize = batch.iter().map(SparseTensor::len).sum();
    if count == 0 {
        return Err(Error::data(
            "batch norm in training mode over zero active sites",
        ));
    }

    let mut mean = vec![0.0; c];
    for x in batch {
        for (_, feats) in x.iter_sorted() {
            for (m, v) in mean.iter_mut().zip(feats) {
                *m += v;
            }
        }
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    let mut var = vec![0.0; c];
    for x in batch {
        for (_, feats) in x.iter_sorted() {
            for ch in 0..c {
                let d = feats[ch] - mean[ch];
                var[ch] += d * d;
            }
        }
    }
    for v in &mut var {
        *v /= count as f64;
    }

    let stats = BnBatchStats { mean, var, count };
    let mut outs = Vec::with_capacity(batch.len());
    for x in batch {
        let mut y = SparseTensor::new(x.grid_size(), c)?;
        for (at, feats) in x.iter_sorted() {
            let mut row = Vec::with_capacity(c);
            for ch in 0..c {
                let xhat = (feats[ch] - stats.mean[ch]) / (stats.var[ch] + bn.eps).sqrt();
                row.push(bn.gamma[ch] * xhat + bn.beta[ch]);
            }
            y.insert(at, row)?;
        }
        outs.push(y);
    }
    Ok((outs, stats))
}

/// Inference-mode batch norm using the running statistics.
pub fn batchnorm_forward_eval(bn: &BatchNorm, x: &SparseTensor) -> Result<SparseTensor> {
    if x.channels() != bn.channels {
        return Err(Error::contract("batch norm channel mismatch"));
    }
    let c = bn.channels;
    let mut y = SparseTensor::new(x.grid_size(), c)?;
    for (at, feats) in x.iter_sorted() {
        let mut row = Vec::with_capacity(c);
        for ch in 0..c {
            let xhat = (feats[ch] - bn.running_mean[ch]) / (bn.running_var[ch] + bn.eps).sqrt();
            row.push(bn.gamma[ch] * xhat + bn.beta[ch]);
        }
        y.insert(at, row)?;
    }
    Ok(y)
}

/// Backward pass of training-mode batch norm. `batch` must be the same
/// inputs the forward pass normalized, `stats` its returned statistics.
/// Returns per-sample input gradients plus gamma and beta gradients.
pub fn batchnorm_backward(
    bn: &BatchNorm,
    batch: &[SparseTensor],
    stats: &BnBatchStats,
    grad_out: &[SparseTensor],
) -> Result<(Vec<SparseTensor>, Vec<f64>, Vec<f64>)> {
    if batch.len() != grad_out.len() {
        return Err(Error::contract("batch/gradient length mismatch"));
    }
    let c = bn.channels;
    let n = stats.count as f64;
    let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + bn.eps).sqrt()).collect();

    // First pass: channel sums of dy and dy * xhat.
    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_xhat = vec![0.0; c];
    for (x, gy) in batch.iter().zip(grad_out) {
        if x.len() != gy.len() || x.channels() != c || gy.channels() != c {
            return Err(Error::contract("batch norm backward shape mismatch"));
        }
        for (at, feats) in x.iter_sorted() {
            let g = gy
                .get(at)
                .ok_or_else(|| Error::contract("gradient support mismatch"))?;
            for ch in 0..c {
                let xhat = (feats[ch] - stats.mean[ch]) * inv_std[ch];
                sum_dy[ch] += g[ch];
                sum_dy_xhat[ch] += g[ch] * xhat;
            }
        }
    }

    let mut grads = Vec::with_capacity(batch.len());
    for (x, gy) in batch.iter().zip(grad_out) {
        let mut gx = SparseTensor::new(x.grid_size(), c)?;
        for (at, feats) in x.iter_sorted() {
            let g = gy.get(at).expect("support checked");
            let mut row = Vec::with_capacity(c);
            for ch in 0..c {
                let xhat = (feats[ch] - stats.mean[ch]) * inv_std[ch];
                let dx = bn.gamma[ch]
                    * inv_std[ch]
                    * (g[ch] - sum_dy[ch] / n - xhat * sum_dy_xhat[ch] / n);
                row.push(dx);
            }
            gx.insert(at, row)?;
        }
        grads.push(gx);
    }
    Ok((grads, sum_dy_xhat, sum_dy))
}

/// Element-wise ReLU; the support is left untouched, so a site clamped to
/// zero stays active.
pub fn relu_forward(x: &SparseTensor) -> Result<SparseTensor> {
    let mut y = SparseTensor::new(x.grid_size(), x.channels())?;
    for (at, feats) in x.iter_sorted() {
        y.insert(at, feats.iter().map(|v| v.max(0.0)).collect())?;
    }
    Ok(y)
}

/// Backward pass of ReLU given the forward *input*.
pub fn relu_backward(x: &SparseTensor, grad_y: &SparseTensor) -> Result<SparseTensor> {
    if x.len() != grad_y.len() || x.channels() != grad_y.channels() {
        return Err(Error::contract("relu backward shape mismatch"));
    }
    let mut gx = SparseTensor::new(x.grid_size(), x.channels())?;
    for (at, feats) in x.iter_sorted() {
        let g = grad_y
            .get(at)
            .ok_or_else(|| Error::contract("gradient support mismatch"))?;
        gx.insert(
            at,
            feats
                .iter()
                .zip(g)
                .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                .collect(),
        )?;
    }
    Ok(gx)
}

/// Which input site won each `(output site, channel)` slot of a pooling
/// forward pass; indices refer to the rulebook's input support.
pub struct PoolArgmax {
    argmax: Vec<u32>,
    channels: usize,
}

/// 2x2 stride-2 max pooling over active sites. Output sites are the
/// halved input coordinates; each output channel takes the maximum over
/// the (up to four) contributing inputs. Ties resolve to the first
/// contributor in sorted coordinate order.
pub fn maxpool_forward(x: &SparseTensor, rb: &RuleBook) -> Result<(SparseTensor, PoolArgmax)> {
    if rb.kind() != RuleBookKind::Pool2 {
        return Err(Error::contract("rulebook was not built for pooling"));
    }
    check_support(rb.input_support(), x, "input")?;

    let c = x.channels();
    let n_out = rb.output_support().len();
    let in_feats: Vec<&[f64]> = rb
        .input_support()
        .iter()
        .map(|at| x.get(*at).expect("support checked"))
        .collect();

    let mut best = vec![f64::NEG_INFINITY; n_out * c];
    let mut argmax = vec![u32::MAX; n_out * c];
    for rule in rb.rules() {
        let xi = in_feats[rule.input as usize];
        let base = rule.output as usize * c;
        for ch in 0..c {
            if xi[ch] > best[base + ch] {
                best[base + ch] = xi[ch];
                argmax[base + ch] = rule.input;
            }
        }
    }

    let mut y = SparseTensor::new(rb.output_grid(), c)?;
    for (idx, at) in rb.output_support().iter().enumerate() {
        y.insert(*at, best[idx * c..(idx + 1) * c].to_vec())?;
    }
    Ok((y, PoolArgmax { argmax, channels: c }))
}

/// Backward pass of max pooling: each output gradient flows to the input
/// site that won the forward maximum.
pub fn maxpool_backward(
    rb: &RuleBook,
    cache: &PoolArgmax,
    grad_y: &SparseTensor,
) -> Result<SparseTensor> {
    if rb.kind() != RuleBookKind::Pool2 {
        return Err(Error::contract("rulebook was not built for pooling"));
    }
    check_support(rb.output_support(), grad_y, "output")?;
    let c = cache.channels;
    if grad_y.channels() != c {
        return Err(Error::contract("pool backward channel mismatch"));
    }

    let mut grad_in = vec![0.0; rb.input_support().len() * c];
    for (out_idx, at) in rb.output_support().iter().enumerate() {
        let gy = grad_y.get(*at).expect("support checked");
        for ch in 0..c {
            let winner = cache.argmax[out_idx * c + ch];
            if winner != u32::MAX {
                grad_in[winner as usize * c + ch] += gy[ch];
            }
        }
    }

    let mut gx = SparseTensor::new(rb.input_grid(), c)?;
    for (idx, at) in rb.input_support().iter().enumerate() {
        gx.insert(*at, grad_in[idx * c..(idx + 1) * c].to_vec())?;
    }
    Ok(gx)
}

/// Numerically stable softmax. All-equal inputs come out exactly uniform.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
