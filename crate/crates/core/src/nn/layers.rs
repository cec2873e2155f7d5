//! Hand-differentiated layers. Each layer caches what its backward pass needs
//! during `forward`; `backward` consumes the upstream gradient, accumulates
//! parameter gradients and returns the gradient with respect to its input.

use rand::Rng as _;

use super::tensor::{NumericBatch, Param};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub trait Layer {
    fn forward(&mut self, x: &NumericBatch, mode: Mode, rng: &mut Rng) -> Result<NumericBatch>;

    fn backward(&mut self, grad: &NumericBatch) -> Result<NumericBatch>;

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    /// Non-trainable state that must survive checkpointing.
    fn buffers(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

fn no_cache(layer: &str) -> Error {
    Error::Shape(format!("{layer}: backward called before forward"))
}

fn expect_shape(layer: &str, got: [usize; 3], want: [usize; 3]) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{layer}: expected gradient {want:?}, got {got:?}")));
    }
    Ok(())
}

/// Valid output range `t` for tap offset `off`: `0 <= t < t_out` and `0 <= t + off < t_in`.
#[inline]
fn tap_range(off: isize, t_in: usize, t_out: usize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (t_in as isize - off).clamp(0, t_out as isize) as usize;
    (lo, hi.max(lo))
}

/// Stride-1 cross-correlation with zero padding. Kernel layout `[out, in, k]`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub padding: usize,
    input: Option<NumericBatch>,
}

impl Conv1d {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        padding: usize,
        with_bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let weight = Param::kaiming(
            format!("{name}.weight"),
            vec![out_channels, in_channels, kernel_size],
            in_channels * kernel_size,
            rng,
        );
        let bias = with_bias.then(|| Param::filled(format!("{name}.bias"), vec![out_channels], 0.0));
        Conv1d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel_size,
            padding,
            input: None,
        }
    }

    pub fn output_len(&self, t: usize) -> Option<usize> {
        (t + 2 * self.padding).checked_sub(self.kernel_size).map(|v| v + 1)
    }

    fn kernel(&self, co: usize, ci: usize) -> &[f64] {
        let k = self.kernel_size;
        let start = (co * self.in_channels + ci) * k;
        &self.weight.value[start..start + k]
    }

    pub fn apply(&self, x: &NumericBatch) -> Result<NumericBatch> {
        let [b, c, t] = x.shape();
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv `{}` expects {} input channels, got {c}",
                self.weight.name, self.in_channels
            )));
        }
        let t_out = self
            .output_len(t)
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Shape(format!("conv `{}`: input length {t} too short", self.weight.name)))?;
        let mut out = NumericBatch::zeros(b, self.out_channels, t_out);
        for bi in 0..b {
            for co in 0..self.out_channels {
                let row = out.row_mut(bi, co);
                if let Some(bias) = &self.bias {
                    row.fill(bias.value[co]);
                }
                for ci in 0..c {
                    let xs = x.row(bi, ci);
                    for (kk, &w) in self.kernel(co, ci).iter().enumerate() {
                        let off = kk as isize - self.padding as isize;
                        let (lo, hi) = tap_range(off, t, t_out);
                        let src = &xs[(lo as isize + off) as usize..(hi as isize + off) as usize];
                        for (o, &v) in row[lo..hi].iter_mut().zip(src) {
                            *o += w * v;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

impl Layer for Conv1d {
    fn forward(&mut self, x: &NumericBatch, _mode: Mode, _rng: &mut Rng) -> Result<NumericBatch> {
        let out = self.apply(x)?;
        self.input = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad: &NumericBatch) -> Result<NumericBatch> {
        let x = self.input.as_ref().ok_or_else(|| no_cache("conv1d"))?;
        let [b, c, t] = x.shape();
        let t_out = self.output_len(t).unwrap_or(0);
        expect_shape("conv1d", grad.shape(), [b, self.out_channels, t_out])?;
        let k = self.kernel_size;
        let mut gx = NumericBatch::zeros(b, c, t);
        for bi in 0..b {
            for co in 0..self.out_channels {
                let g = grad.row(bi, co);
                if let Some(bias) = &mut self.bias {
                    bias.grad[co] += g.iter().sum::<f64>();
                }
                for ci in 0..c {
                    let xs = x.row(bi, ci);
                    let wbase = (co * self.in_channels + ci) * k;
                    for kk in 0..k {
                        let off = kk as isize - self.padding as isize;
                        let (lo, hi) = tap_range(off, t, t_out);
                        let s0 = (lo as isize + off) as usize;
                        let s1 = (hi as isize + off) as usize;
                        let dw: f64 = g[lo..hi].iter().zip(&xs[s0..s1]).map(|(a, b)| a * b).sum();
                        self.weight.grad[wbase + kk] += dw;
                        let w = self.weight.value[wbase + kk];
                        let gxr = gx.row_mut(bi, ci);
                        for (dst, &gv) in gxr[s0..s1].iter_mut().zip(&g[lo..hi]) {
                            *dst += w * gv;
                        }
                    }
                }
            }
        }
        Ok(gx)
    }

    fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
struct BnCache {
    xhat: NumericBatch,
    inv_std: Vec<f64>,
    mode: Mode,
}

/// Per-channel batch normalisation over the batch and time axes.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub eps: f64,
    pub momentum: f64,
    cache: Option<BnCache>,
}

impl BatchNorm1d {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm1d {
            gamma: Param::filled(format!("{name}.gamma"), vec![channels], 1.0),
            beta: Param::filled(format!("{name}.beta"), vec![channels], 0.0),
            running_mean: Param::filled(format!("{name}.running_mean"), vec![channels], 0.0),
            running_var: Param::filled(format!("{name}.running_var"), vec![channels], 1.0),
            eps: BN_EPSILON,
            momentum: BN_MOMENTUM,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

impl Layer for BatchNorm1d {
    fn forward(&mut self, x: &NumericBatch, mode: Mode, _rng: &mut Rng) -> Result<NumericBatch> {
        let [b, c, t] = x.shape();
        if c != self.channels() {
            return Err(Error::Shape(format!(
                "batch norm `{}` expects {} channels, got {c}",
                self.gamma.name,
                self.channels()
            )));
        }
        let m = (b * t) as f64;
        if mode == Mode::Train && b * t < 2 {
            return Err(Error::Shape(format!(
                "batch norm `{}` needs at least 2 values per channel in training",
                self.gamma.name
            )));
        }
        let mut xhat = NumericBatch::zeros(b, c, t);
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = (0..b).map(|bi| x.row(bi, ch).iter().sum::<f64>()).sum::<f64>() / m;
                    let var = (0..b)
                        .map(|bi| x.row(bi, ch).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
                        .sum::<f64>()
                        / m;
                    let mo = self.momentum;
                    self.running_mean.value[ch] = (1.0 - mo) * self.running_mean.value[ch] + mo * mean;
                    self.running_var.value[ch] = (1.0 - mo) * self.running_var.value[ch] + mo * var * m / (m - 1.0);
                    (mean, var)
                }
                Mode::Eval => (self.running_mean.value[ch], self.running_var.value[ch]),
            };
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = is;
            for bi in 0..b {
                let src = x.row(bi, ch);
                for (d, &v) in xhat.row_mut(bi, ch).iter_mut().zip(src) {
                    *d = (v - mean) * is;
                }
            }
        }
        let mut out = xhat.clone();
        for bi in 0..b {
            for ch in 0..c {
                let (g, be) = (self.gamma.value[ch], self.beta.value[ch]);
                out.row_mut(bi, ch).iter_mut().for_each(|v| *v = g * *v + be);
            }
        }
        self.cache = Some(BnCache { xhat, inv_std, mode });
        Ok(out)
    }

    fn backward(&mut self, grad: &NumericBatch) -> Result<NumericBatch> {
        let cache = self.cache.as_ref().ok_or_else(|| no_cache("batchnorm1d"))?;
        let [b, c, t] = cache.xhat.shape();
        expect_shape("batchnorm1d", grad.shape(), [b, c, t])?;
        let m = (b * t) as f64;
        let mut gx = NumericBatch::zeros(b, c, t);
        for ch in 0..c {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for bi in 0..b {
                for (&g, &xh) in grad.row(bi, ch).iter().zip(cache.xhat.row(bi, ch)) {
                    sum_g += g;
                    sum_gx += g * xh;
                }
            }
            self.gamma.grad[ch] += sum_gx;
            self.beta.grad[ch] += sum_g;
            let gamma = self.gamma.value[ch];
            let is = cache.inv_std[ch];
            for bi in 0..b {
                let g = grad.row(bi, ch);
                let xh = cache.xhat.row(bi, ch);
                let dst = gx.row_mut(bi, ch);
                match cache.mode {
                    Mode::Train => {
                        let scale = gamma * is / m;
                        for ((d, &gv), &xv) in dst.iter_mut().zip(g).zip(xh) {
                            *d = scale * (m * gv - sum_g - xv * sum_gx);
                        }
                    }
                    Mode::Eval => {
                        for (d, &gv) in dst.iter_mut().zip(g) {
                            *d = gamma * is * gv;
                        }
                    }
                }
            }
        }
        Ok(gx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn buffers(&self) -> Vec<&Param> {
        vec![&self.running_mean, &self.running_var]
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.running_mean, &mut self.running_var]
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    output: Option<NumericBatch>,
}

impl Layer for Relu {
    fn forward(&mut self, x: &NumericBatch, _mode: Mode, _rng: &mut Rng) -> Result<NumericBatch> {
        let mut out = x.clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, grad: &NumericBatch) -> Result<NumericBatch> {
        let out = self.output.as_ref().ok_or_else(|| no_cache("relu"))?;
        expect_shape("relu", grad.shape(), out.shape())?;
        let mut gx = grad.clone();
        gx.data_mut()
            .iter_mut()
            .zip(out.data())
            .for_each(|(g, &o)| if o <= 0.0 { *g = 0.0 });
        Ok(gx)
    }
}

/// Non-overlapping max pooling; a trailing remainder shorter than `size` is dropped.
#[derive(Debug, Clone)]
pub struct MaxPool1d {
    pub size: usize,
    argmax: Vec<usize>,
    in_shape: Option<[usize; 3]>,
}

impl MaxPool1d {
    pub fn new(size: usize) -> Self {
        MaxPool1d {
            size,
            argmax: Vec::new(),
            in_shape: None,
        }
    }
}

impl Layer for MaxPool1d {
    fn forward(&mut self, x: &NumericBatch, _mode: Mode, _rng: &mut Rng) -> Result<NumericBatch> {
        let [b, c, t] = x.shape();
        if self.size == 0 || t < self.size {
            return Err(Error::Shape(format!("max pool of size {} over length {t}", self.size)));
        }
        let t_out = t / self.size;
        let mut out = NumericBatch::zeros(b, c, t_out);
        self.argmax.clear();
        self.argmax.reserve(b * c * t_out);
        for bi in 0..b {
            for ch in 0..c {
                let src = x.row(bi, ch);
                let dst = out.row_mut(bi, ch);
                for (j, d) in dst.iter_mut().enumerate() {
                    let base = j * self.size;
                    let mut best = base;
                    for i in base + 1..base + self.size {
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                    *d = src[best];
                    self.argmax.push(best);
                }
            }
        }
        self.in_shape = Some([b, c, t]);
        Ok(out)
    }

    fn backward(&mut self, grad: &NumericBatch) -> Result<NumericBatch> {
        let [b, c, t] = self.in_shape.ok_or_else(|| no_cache("maxpool1d"))?;
        expect_shape("maxpool1d", grad.shape(), [b, c, t / self.size])?;
        let mut gx = NumericBatch::zeros(b, c, t);
        let t_out = t / self.size;
        for bi in 0..b {
            for ch in 0..c {
                let g = grad.row(bi, ch);
                let base = (bi * c + ch) * t_out;
                let dst = gx.row_mut(bi, ch);
                for (j, &gv) in g.iter().enumerate() {
                    dst[self.argmax[base + j]] += gv;
                }
            }
        }
        Ok(gx)
    }
}

/// Inverted dropout: kept values are scaled by `1 / keep_prob` during training.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub keep_prob: f64,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(keep_prob: f64) -> Self {
        Dropout { keep_prob, mask: None }
    }
}

impl Layer for Dropout {
    fn forward(&mut self, x: &NumericBatch, mode: Mode, rng: &mut Rng) -> Result<NumericBatch> {
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::config("dropout_keep_train", "must lie in (0, 1]"));
        }
        if mode == Mode::Eval || self.keep_prob == 1.0 {
            self.mask = None;
            return Ok(x.clone());
        }
        let scale = 1.0 / self.keep_prob;
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.random::<f64>() < self.keep_prob { scale } else { 0.0 })
            .collect();
        let mut out = x.clone();
        out.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.mask = Some(mask);
        Ok(out)
    }

    fn backward(&mut self, grad: &NumericBatch) -> Result<NumericBatch> {
        let mut gx = grad.clone();
        if let Some(mask) = &self.mask {
            if mask.len() != gx.len() {
                return Err(Error::Shape("dropout: gradient does not match mask".into()));
            }
            gx.data_mut().iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
        }
        Ok(gx)
    }
}

/// Mean over the time axis: `[B, C, T] -> [B, C, 1]`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    in_shape: Option<[usize; 3]>,
}

impl Layer for GlobalAvgPool {
    fn forward(&mut self, x: &NumericBatch, _mode: Mode, _rng: &mut Rng) -> Result<NumericBatch> {
        let [b, c, t] = x.shape();
        let mut out = NumericBatch::zeros(b, c, 1);
        for bi in 0..b {
            for ch in 0..c {
                out.row_mut(bi, ch)[0] = x.row(bi, ch).iter().sum::<f64>() / t as f64;
            }
        }
        self.in_shape = Some([b, c, t]);
        Ok(out)
    }

    fn backward(&mut self, grad: &NumericBatch) -> Result<NumericBatch> {
        let [b, c, t] = self.in_shape.ok_or_else(|| no_cache("global average pool"))?;
        expect_shape("global average pool", grad.shape(), [b, c, 1])?;
        let mut gx = NumericBatch::zeros(b, c, t);
        for bi in 0..b {
            for ch in 0..c {
                let g = grad.row(bi, ch)[0] / t as f64;
                gx.row_mut(bi, ch).fill(g);
            }
        }
        Ok(gx)
    }
}

/// `[B, C, T] -> [B, C*T, 1]`.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    in_shape: Option<[usize; 3]>,
}

impl Layer for Flatten {
    fn forward(&mut self, x: &NumericBatch, _mode: Mode, _rng: &mut Rng) -> Result<NumericBatch> {
        let [b, c, t] = x.shape();
        self.in_shape = Some([b, c, t]);
        NumericBatch::from_vec([b, c * t, 1], x.data().to_vec())
    }

    fn backward(&mut self, grad: &NumericBatch) -> Result<NumericBatch> {
        let shape = self.in_shape.ok_or_else(|| no_cache("flatten"))?;
        NumericBatch::from_vec(shape, grad.data().to_vec())
    }
}

/// Fully connected layer over the channel axis of `[B, in, 1]` inputs.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    input: Option<NumericBatch>,
}

impl Dense {
    pub fn new(name: &str, inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Dense {
            weight: Param::kaiming(format!("{name}.weight"), vec![outputs, inputs], inputs, rng),
            bias: Param::filled(format!("{name}.bias"), vec![outputs], 0.0),
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }
}

impl Layer for Dense {
    fn forward(&mut self, x: &NumericBatch, _mode: Mode, _rng: &mut Rng) -> Result<NumericBatch> {
        let [b, n_in, t] = x.shape();
        if t != 1 || n_in != self.inputs() {
            return Err(Error::Shape(format!(
                "dense `{}` expects [B, {}, 1], got {:?}",
                self.weight.name,
                self.inputs(),
                x.shape()
            )));
        }
        let n_out = self.outputs();
        let mut out = NumericBatch::zeros(b, n_out, 1);
        for bi in 0..b {
            let xs = x.sample(bi);
            for o in 0..n_out {
                let w = &self.weight.value[o * n_in..(o + 1) * n_in];
                out.row_mut(bi, o)[0] = self.bias.value[o] + w.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        self.input = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad: &NumericBatch) -> Result<NumericBatch> {
        let x = self.input.as_ref().ok_or_else(|| no_cache("dense"))?;
        let [b, n_in, _] = x.shape();
        let n_out = self.outputs();
        expect_shape("dense", grad.shape(), [b, n_out, 1])?;
        let mut gx = NumericBatch::zeros(b, n_in, 1);
        for bi in 0..b {
            let xs = x.sample(bi);
            for o in 0..n_out {
                let g = grad.row(bi, o)[0];
                self.bias.grad[o] += g;
                let wg = &mut self.weight.grad[o * n_in..(o + 1) * n_in];
                wg.iter_mut().zip(xs).for_each(|(d, &v)| *d += g * v);
                let w = &self.weight.value[o * n_in..(o + 1) * n_in];
                let dst = gx.data_mut();
                dst[bi * n_in..(bi + 1) * n_in]
                    .iter_mut()
                    .zip(w)
                    .for_each(|(d, &wv)| *d += g * wv);
            }
        }
        Ok(gx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
