//! Layer implementations with manual backward passes. Each layer caches in
//! Train mode exactly the tensors its backward consumes.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::surrogate::{surrogate_grad, SurrogateKind, SurrogateSpec};
use crate::tensor::{col2im, im2col, matmul_serial, ConvGeom, Scalar, Tensor};
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
    /// Inference after batch-norm folding: no BatchNorm layers remain and
    /// activations compare against per-channel thresholds.
    FoldedEval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Linear,
    Conv2d,
    BatchNorm,
    Activation,
    AvgPool,
    GlobalAvgPool,
    Dropout,
    ResidualAdd,
    Flatten,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Linear => "linear",
            LayerKind::Conv2d => "conv2d",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Activation => "activation",
            LayerKind::AvgPool => "avgpool",
            LayerKind::GlobalAvgPool => "gap",
            LayerKind::Dropout => "dropout",
            LayerKind::ResidualAdd => "residual_add",
            LayerKind::Flatten => "flatten",
        }
    }
}

/// Which parameter a slot holds; weight decay applies to weights and biases
/// only, never to the batch-norm affine.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
}

pub struct Linear<T: Scalar> {
    pub w: Tensor<T>, // out x in
    pub b: Option<Tensor<T>>,
    pub gw: Tensor<T>,
    pub gb: Option<Tensor<T>>,
    cache_x: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, bias: bool, rng: &mut Rng) -> Linear<T> {
        let std = (2.0 / in_features as f64).sqrt();
        Linear {
            w: rng.normal_tensor(&[out_features, in_features], std),
            b: bias.then(|| Tensor::zeros(&[out_features])),
            gw: Tensor::zeros(&[out_features, in_features]),
            gb: bias.then(|| Tensor::zeros(&[out_features])),
            cache_x: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.w.shape()[0]
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if x.rank() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "linear expects a rank-2 input, got {:?}",
                x.shape()
            )));
        }
        let mut y = x.matmul(&self.w.transpose()?)?;
        if let Some(b) = &self.b {
            y = y.ew_add(b)?;
        }
        if mode == Mode::Train {
            self.cache_x = Some(x.clone());
        }
        Ok(y)
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .cache_x
            .take()
            .ok_or_else(|| Error::InvalidNetwork("linear backward before forward".into()))?;
        self.gw = gy.transpose()?.matmul(&x)?;
        if let Some(gb) = &mut self.gb {
            let n = gy.shape()[0];
            let mut acc = vec![0.0f64; gy.shape()[1]];
            for i in 0..n {
                for (j, a) in acc.iter_mut().enumerate() {
                    *a += gy.at(&[i, j]).as_f64();
                }
            }
            *gb = Tensor::from_vec(
                &[acc.len()],
                acc.into_iter().map(T::from_f64).collect(),
            )?;
        }
        gy.matmul(&self.w)
    }
}

pub struct Conv2d<T: Scalar> {
    pub w: Tensor<T>, // c_out x c_in x k x k
    pub gw: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
    cache_x: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Conv2d<T> {
        let std = (2.0 / (c_in * k * k) as f64).sqrt();
        Conv2d {
            w: rng.normal_tensor(&[c_out, c_in, k, k], std),
            gw: Tensor::zeros(&[c_out, c_in, k, k]),
            stride,
            pad,
            cache_x: None,
        }
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = x.conv2d(&self.w, self.stride, self.pad)?;
        if mode == Mode::Train {
            self.cache_x = Some(x.clone());
        }
        Ok(y)
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .cache_x
            .take()
            .ok_or_else(|| Error::InvalidNetwork("conv backward before forward".into()))?;
        let g = ConvGeom::resolve(x.shape(), self.w.shape(), self.stride, self.pad)?;
        let ckk = g.c_in * g.k * g.k;
        let span = g.out_h * g.out_w;
        let in_size = g.c_in * g.in_h * g.in_w;
        let out_size = g.c_out * span;

        // Per-image weight-gradient partials and input gradients; the
        // partials are reduced serially in batch order afterwards so the
        // result is independent of the thread count.
        let parts: Vec<(Vec<T>, Vec<T>)> = (0..g.batch)
            .into_par_iter()
            .map(|n| {
                let x_n = &x.data()[n * in_size..(n + 1) * in_size];
                let gy_n = &gy.data()[n * out_size..(n + 1) * out_size];
                let cols = im2col(x_n, &g);

                // cols is ckk x span; transpose for gw_n = gy_n * cols^T.
                let mut cols_t = vec![T::zero(); span * ckk];
                for r in 0..ckk {
                    for s in 0..span {
                        cols_t[s * ckk + r] = cols[r * span + s];
                    }
                }
                let mut gw_n = vec![T::zero(); g.c_out * ckk];
                matmul_serial(gy_n, &cols_t, &mut gw_n, g.c_out, span, ckk);

                // gcols = w^T (ckk x c_out) * gy_n (c_out x span).
                let mut w_t = vec![T::zero(); ckk * g.c_out];
                for co in 0..g.c_out {
                    for r in 0..ckk {
                        w_t[r * g.c_out + co] = self.w.data()[co * ckk + r];
                    }
                }
                let mut gcols = vec![T::zero(); ckk * span];
                matmul_serial(&w_t, gy_n, &mut gcols, ckk, g.c_out, span);
                (gw_n, col2im(&gcols, &g))
            })
            .collect();

        let mut gw = vec![T::zero(); g.c_out * ckk];
        let mut gx = vec![T::zero(); g.batch * in_size];
        for (n, (gw_n, gx_n)) in parts.into_iter().enumerate() {
            for (a, v) in gw.iter_mut().zip(&gw_n) {
                *a += *v;
            }
            gx[n * in_size..(n + 1) * in_size].copy_from_slice(&gx_n);
        }
        self.gw = Tensor::from_vec(self.w.shape(), gw)?;
        Tensor::from_vec(x.shape(), gx)
    }
}

struct BnCache<T: Scalar> {
    x_hat: Tensor<T>,
    inv_std: Vec<f64>,
    m: usize,
}

pub struct BatchNorm<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub ggamma: Tensor<T>,
    pub gbeta: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache<T>>,
}

/// Split an input shape into (batch, channels, inner extent); batch-norm
/// accepts `N x C` and `N x C x H x W`.
fn bn_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape.len() {
        2 => Ok((shape[0], shape[1], 1)),
        4 => Ok((shape[0], shape[1], shape[2] * shape[3])),
        _ => Err(Error::ShapeMismatch(format!(
            "batchnorm expects rank 2 or 4, got {shape:?}"
        ))),
    }
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> BatchNorm<T> {
        BatchNorm {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            ggamma: Tensor::zeros(&[channels]),
            gbeta: Tensor::zeros(&[channels]),
            momentum: 0.9,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Per-channel eval-mode affine `y = scale * x + shift`, composed from
    /// the running statistics in f64. Folding uses exactly these values.
    pub fn eval_affine(&self) -> (Vec<f64>, Vec<f64>) {
        let c = self.channels();
        let mut scale = vec![0.0; c];
        let mut shift = vec![0.0; c];
        for i in 0..c {
            let inv = 1.0 / (self.running_var.data()[i].as_f64() + self.eps).sqrt();
            scale[i] = self.gamma.data()[i].as_f64() * inv;
            shift[i] = self.beta.data()[i].as_f64() - self.running_mean.data()[i].as_f64() * scale[i];
        }
        (scale, shift)
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (nb, ch, inner) = bn_dims(x.shape())?;
        if ch != self.channels() {
            return Err(Error::ShapeMismatch(format!(
                "batchnorm over {} channels got input {:?}",
                self.channels(),
                x.shape()
            )));
        }
        match mode {
            Mode::Train => {
                let m = nb * inner;
                if m < 2 {
                    return Err(Error::InvalidParam(
                        "batchnorm needs at least 2 values per channel in train mode".into(),
                    ));
                }
                let mut mean = vec![0.0f64; ch];
                let mut var = vec![0.0f64; ch];
                for n in 0..nb {
                    for c in 0..ch {
                        let base = (n * ch + c) * inner;
                        for t in 0..inner {
                            mean[c] += x.data()[base + t].as_f64();
                        }
                    }
                }
                for v in mean.iter_mut() {
                    *v /= m as f64;
                }
                for n in 0..nb {
                    for c in 0..ch {
                        let base = (n * ch + c) * inner;
                        for t in 0..inner {
                            let d = x.data()[base + t].as_f64() - mean[c];
                            var[c] += d * d;
                        }
                    }
                }
                for v in var.iter_mut() {
                    *v /= m as f64;
                }
                let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + self.eps).sqrt()).collect();

                let mut x_hat = vec![T::zero(); x.len()];
                let mut y = vec![T::zero(); x.len()];
                for n in 0..nb {
                    for c in 0..ch {
                        let base = (n * ch + c) * inner;
                        let (g, b) = (self.gamma.data()[c].as_f64(), self.beta.data()[c].as_f64());
                        for t in 0..inner {
                            let xh = (x.data()[base + t].as_f64() - mean[c]) * inv_std[c];
                            x_hat[base + t] = T::from_f64(xh);
                            y[base + t] = T::from_f64(g * xh + b);
                        }
                    }
                }
                for c in 0..ch {
                    let rm = self.running_mean.data()[c].as_f64();
                    let rv = self.running_var.data()[c].as_f64();
                    self.running_mean.data_mut()[c] =
                        T::from_f64(self.momentum * rm + (1.0 - self.momentum) * mean[c]);
                    self.running_var.data_mut()[c] =
                        T::from_f64(self.momentum * rv + (1.0 - self.momentum) * var[c]);
                }
                self.cache = Some(BnCache {
                    x_hat: Tensor::from_vec(x.shape(), x_hat)?,
                    inv_std,
                    m,
                });
                Tensor::from_vec(x.shape(), y)
            }
            Mode::Eval => {
                let (scale, shift) = self.eval_affine();
                let mut y = vec![T::zero(); x.len()];
                for n in 0..nb {
                    for c in 0..ch {
                        let base = (n * ch + c) * inner;
                        for t in 0..inner {
                            y[base + t] =
                                T::from_f64(scale[c] * x.data()[base + t].as_f64() + shift[c]);
                        }
                    }
                }
                Tensor::from_vec(x.shape(), y)
            }
            Mode::FoldedEval => Err(Error::InvalidNetwork(
                "batchnorm layer present in a folded graph".into(),
            )),
        }
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidNetwork("batchnorm backward before forward".into()))?;
        let (nb, ch, inner) = bn_dims(gy.shape())?;
        let m = cache.m as f64;

        let mut sum_gy = vec![0.0f64; ch];
        let mut sum_gy_xhat = vec![0.0f64; ch];
        for n in 0..nb {
            for c in 0..ch {
                let base = (n * ch + c) * inner;
                for t in 0..inner {
                    let g = gy.data()[base + t].as_f64();
                    sum_gy[c] += g;
                    sum_gy_xhat[c] += g * cache.x_hat.data()[base + t].as_f64();
                }
            }
        }
        self.gbeta = Tensor::from_vec(&[ch], sum_gy.iter().map(|&v| T::from_f64(v)).collect())?;
        self.ggamma = Tensor::from_vec(
            &[ch],
            sum_gy_xhat.iter().map(|&v| T::from_f64(v)).collect(),
        )?;

        let mut gx = vec![T::zero(); gy.len()];
        for n in 0..nb {
            for c in 0..ch {
                let base = (n * ch + c) * inner;
                let k = self.gamma.data()[c].as_f64() * cache.inv_std[c];
                for t in 0..inner {
                    let g = gy.data()[base + t].as_f64();
                    let xh = cache.x_hat.data()[base + t].as_f64();
                    gx[base + t] =
                        T::from_f64(k * (g - sum_gy[c] / m - xh * sum_gy_xhat[c] / m));
                }
            }
        }
        Tensor::from_vec(gy.shape(), gx)
    }
}

/// Accumulated spike counts for one activation layer.
#[derive(Clone, Debug, Default)]
pub struct FiringStats {
    pub spikes: f64,
    pub count: f64,
    /// One flag per feature-map position; true once that neuron has fired.
    pub ever_fired: Vec<bool>,
}

impl FiringStats {
    pub fn rate(&self) -> f64 {
        if self.count == 0.0 {
            0.0
        } else {
            self.spikes / self.count
        }
    }

    pub fn dead_fraction(&self) -> f64 {
        if self.ever_fired.is_empty() {
            return 0.0;
        }
        let dead = self.ever_fired.iter().filter(|&&f| !f).count();
        dead as f64 / self.ever_fired.len() as f64
    }
}

pub struct Activation<T: Scalar> {
    pub spec: SurrogateSpec,
    /// Per-channel thresholds; set when a preceding batch-norm was folded in.
    pub folded_u_th: Option<Vec<f64>>,
    cache_u: Option<Tensor<T>>,
    pub stats: FiringStats,
}

impl<T: Scalar> Activation<T> {
    pub fn new(spec: SurrogateSpec) -> Activation<T> {
        Activation {
            spec,
            folded_u_th: None,
            cache_u: None,
            stats: FiringStats::default(),
        }
    }

    fn forward(&mut self, u: &Tensor<T>, mode: Mode, record: bool) -> Result<Tensor<T>> {
        let lo = if self.spec.kind == SurrogateKind::SteB {
            -T::one()
        } else {
            T::zero()
        };
        let y = match (&self.folded_u_th, mode) {
            (Some(th), Mode::FoldedEval) => {
                let (_, ch, inner) = bn_dims(u.shape())?;
                if ch != th.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "folded thresholds cover {} channels, input is {:?}",
                        th.len(),
                        u.shape()
                    )));
                }
                let data: Vec<T> = u
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let c = (i / inner) % ch;
                        if v.as_f64() >= th[c] {
                            T::one()
                        } else {
                            lo
                        }
                    })
                    .collect();
                Tensor::from_vec(u.shape(), data)?
            }
            _ => {
                let th = T::from_f64(self.spec.u_th);
                u.map(|v| if v >= th { T::one() } else { lo })?
            }
        };
        if mode == Mode::Train {
            self.cache_u = Some(u.clone());
        }
        if record {
            self.record(&y);
        }
        Ok(y)
    }

    fn record(&mut self, y: &Tensor<T>) {
        let per_sample: usize = y.shape()[1..].iter().product();
        if self.stats.ever_fired.len() != per_sample {
            self.stats.ever_fired = vec![false; per_sample];
        }
        for (i, &v) in y.data().iter().enumerate() {
            self.stats.count += 1.0;
            if v == T::one() {
                self.stats.spikes += 1.0;
                self.stats.ever_fired[i % per_sample] = true;
            }
        }
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let u = self
            .cache_u
            .take()
            .ok_or_else(|| Error::InvalidNetwork("activation backward before forward".into()))?;
        gy.ew_mul(&surrogate_grad(&u, &self.spec)?)
    }
}

pub struct AvgPool {
    pub k: usize,
    pub stride: usize,
    cache_shape: Option<Vec<usize>>,
}

impl AvgPool {
    pub fn new(k: usize, stride: usize) -> AvgPool {
        AvgPool {
            k,
            stride,
            cache_shape: None,
        }
    }

    fn forward<T: Scalar>(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if x.rank() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "avgpool expects rank 4, got {:?}",
                x.shape()
            )));
        }
        let (nb, ch, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        if self.k > h || self.k > w {
            return Err(Error::ShapeMismatch(format!(
                "avgpool window {} larger than input {h}x{w}",
                self.k
            )));
        }
        let oh = (h - self.k) / self.stride + 1;
        let ow = (w - self.k) / self.stride + 1;
        let inv = T::from_f64(1.0 / (self.k * self.k) as f64);
        let mut out = Tensor::zeros(&[nb, ch, oh, ow]);
        for n in 0..nb {
            for c in 0..ch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = T::zero();
                        for ky in 0..self.k {
                            for kx in 0..self.k {
                                acc += x.at(&[n, c, oy * self.stride + ky, ox * self.stride + kx]);
                            }
                        }
                        out.set(&[n, c, oy, ox], acc * inv);
                    }
                }
            }
        }
        if mode == Mode::Train {
            self.cache_shape = Some(x.shape().to_vec());
        }
        Ok(out)
    }

    fn backward<T: Scalar>(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .cache_shape
            .take()
            .ok_or_else(|| Error::InvalidNetwork("avgpool backward before forward".into()))?;
        let (nb, ch) = (shape[0], shape[1]);
        let (oh, ow) = (gy.shape()[2], gy.shape()[3]);
        let inv = T::from_f64(1.0 / (self.k * self.k) as f64);
        let mut gx = Tensor::zeros(&shape);
        for n in 0..nb {
            for c in 0..ch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = gy.at(&[n, c, oy, ox]) * inv;
                        for ky in 0..self.k {
                            for kx in 0..self.k {
                                let iy = oy * self.stride + ky;
                                let ix = ox * self.stride + kx;
                                let cur = gx.at(&[n, c, iy, ix]);
                                gx.set(&[n, c, iy, ix], cur + g);
                            }
                        }
                    }
                }
            }
        }
        Ok(gx)
    }
}

#[derive(Default)]
pub struct GlobalAvgPool {
    cache_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    fn forward<T: Scalar>(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if x.rank() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "global avgpool expects rank 4, got {:?}",
                x.shape()
            )));
        }
        if mode == Mode::Train {
            self.cache_shape = Some(x.shape().to_vec());
        }
        x.reduce_mean(&[2, 3])
    }

    fn backward<T: Scalar>(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .cache_shape
            .take()
            .ok_or_else(|| Error::InvalidNetwork("gap backward before forward".into()))?;
        let (nb, ch, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let inv = T::from_f64(1.0 / (h * w) as f64);
        let mut gx = vec![T::zero(); nb * ch * h * w];
        for n in 0..nb {
            for c in 0..ch {
                let g = gy.at(&[n, c]) * inv;
                let base = (n * ch + c) * h * w;
                for t in 0..h * w {
                    gx[base + t] = g;
                }
            }
        }
        Tensor::from_vec(&shape, gx)
    }
}

pub struct Dropout<T: Scalar> {
    pub rate: f64,
    rng: Rng,
    cache_mask: Option<Vec<bool>>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64) -> Dropout<T> {
        Dropout {
            rate,
            rng: Rng::new(0),
            cache_mask: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = Rng::new(seed);
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode != Mode::Train || self.rate == 0.0 {
            return Ok(x.clone());
        }
        // Inverted dropout: eval needs no rescaling.
        let keep = 1.0 - self.rate;
        let scale = T::from_f64(1.0 / keep);
        let mask: Vec<bool> = (0..x.len()).map(|_| self.rng.next_f64() >= self.rate).collect();
        let data: Vec<T> = x
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| if m { v * scale } else { T::zero() })
            .collect();
        self.cache_mask = Some(mask);
        Tensor::from_vec(x.shape(), data)
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self
            .cache_mask
            .take()
            .ok_or_else(|| Error::InvalidNetwork("dropout backward before forward".into()))?;
        let scale = T::from_f64(1.0 / (1.0 - self.rate));
        let data: Vec<T> = gy
            .data()
            .iter()
            .zip(&mask)
            .map(|(&g, &m)| if m { g * scale } else { T::zero() })
            .collect();
        Tensor::from_vec(gy.shape(), data)
    }
}

#[derive(Default)]
pub struct Flatten {
    cache_shape: Option<Vec<usize>>,
}

impl Flatten {
    fn forward<T: Scalar>(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Train {
            self.cache_shape = Some(x.shape().to_vec());
        }
        let n = x.shape()[0];
        x.reshape(&[n, x.len() / n])
    }

    fn backward<T: Scalar>(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .cache_shape
            .take()
            .ok_or_else(|| Error::InvalidNetwork("flatten backward before forward".into()))?;
        gy.reshape(&shape)
    }
}

/// One layer of the graph. `ResidualAdd` is resolved by the network, which
/// owns the tapped tensor.
pub enum Layer<T: Scalar> {
    Linear(Linear<T>),
    Conv2d(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Activation(Activation<T>),
    AvgPool(AvgPool),
    GlobalAvgPool(GlobalAvgPool),
    Dropout(Dropout<T>),
    ResidualAdd { from: usize },
    Flatten(Flatten),
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Linear(_) => LayerKind::Linear,
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Activation(_) => LayerKind::Activation,
            Layer::AvgPool(_) => LayerKind::AvgPool,
            Layer::GlobalAvgPool(_) => LayerKind::GlobalAvgPool,
            Layer::Dropout(_) => LayerKind::Dropout,
            Layer::ResidualAdd { .. } => LayerKind::ResidualAdd,
            Layer::Flatten(_) => LayerKind::Flatten,
        }
    }

    /// Forward for every layer except `ResidualAdd` (handled by the graph).
    pub(crate) fn forward(&mut self, x: &Tensor<T>, mode: Mode, record: bool) -> Result<Tensor<T>> {
        match self {
            Layer::Linear(l) => l.forward(x, mode),
            Layer::Conv2d(l) => l.forward(x, mode),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Activation(l) => l.forward(x, mode, record),
            Layer::AvgPool(l) => l.forward(x, mode),
            Layer::GlobalAvgPool(l) => l.forward(x, mode),
            Layer::Dropout(l) => l.forward(x, mode),
            Layer::Flatten(l) => l.forward(x, mode),
            Layer::ResidualAdd { .. } => Err(Error::InvalidNetwork(
                "residual add requires the graph context".into(),
            )),
        }
    }

    pub(crate) fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Linear(l) => l.backward(gy),
            Layer::Conv2d(l) => l.backward(gy),
            Layer::BatchNorm(l) => l.backward(gy),
            Layer::Activation(l) => l.backward(gy),
            Layer::AvgPool(l) => l.backward(gy),
            Layer::GlobalAvgPool(l) => l.backward(gy),
            Layer::Dropout(l) => l.backward(gy),
            Layer::Flatten(l) => l.backward(gy),
            Layer::ResidualAdd { .. } => Err(Error::InvalidNetwork(
                "residual add requires the graph context".into(),
            )),
        }
    }
}
