use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Param, Tensor};
use crate::error::{Error, Result};

/// Serializable description of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    LeakyRelu {
        slope: f64,
    },
    BatchNorm {
        features: usize,
        eps: f64,
        momentum: f64,
    },
    Softmax,
    Sigmoid,
    Flatten,
    /// Appends an auxiliary `[batch, extra]` input to a flat feature vector.
    Concat {
        extra: usize,
    },
}

impl LayerSpec {
    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |why: &str| Err(Error::shape(format!("{self:?} on input {input:?}: {why}")));
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if input.len() != 3 || input[0] != in_channels {
                    return bad("expected [channels, h, w]");
                }
                if stride == 0 || kernel == 0 || input[1] < kernel || input[2] < kernel {
                    return bad("kernel larger than input");
                }
                Ok(vec![
                    out_channels,
                    (input[1] - kernel) / stride + 1,
                    (input[2] - kernel) / stride + 1,
                ])
            }
            LayerSpec::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return bad("expected a flat vector");
                }
                Ok(vec![outputs])
            }
            LayerSpec::BatchNorm { features, .. } => {
                if input.is_empty() || input[0] != features {
                    return bad("feature count mismatch");
                }
                Ok(input.to_vec())
            }
            LayerSpec::Softmax | LayerSpec::Sigmoid => {
                if input.len() != 1 {
                    return bad("expected a flat vector");
                }
                Ok(input.to_vec())
            }
            LayerSpec::LeakyRelu { .. } => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Concat { extra } => {
                if input.len() != 1 {
                    return bad("concat needs a flat vector");
                }
                Ok(vec![input[0] + extra])
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weight: Param,
    pub bias: Param,
    /// Input shape and unfolded patches from the last forward.
    input: Option<(Vec<usize>, Vec<f64>)>,
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    cache: Option<BnCache>,
}

#[derive(Clone, Debug)]
struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    train: bool,
}

#[derive(Clone, Debug)]
pub enum Layer {
    Conv2d(Conv2d),
    Dense(Dense),
    LeakyRelu { slope: f64, input: Option<Tensor> },
    BatchNorm(BatchNorm),
    Softmax { output: Option<Tensor> },
    Sigmoid { output: Option<Tensor> },
    Flatten { input_shape: Option<Vec<usize>> },
    Concat { extra: usize, width: Option<usize> },
}

fn not_cached() -> Error {
    Error::invalid("backward called before forward")
}

impl Layer {
    /// Fresh layer with fan-in uniform initialization.
    pub fn from_spec(spec: &LayerSpec, rng: &mut impl Rng) -> Layer {
        match *spec {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let bound = 1.0 / ((in_channels * kernel * kernel) as f64).sqrt();
                Layer::Conv2d(Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    weight: Param::new(Tensor::uniform(
                        &[out_channels, in_channels, kernel, kernel],
                        bound,
                        rng,
                    )),
                    bias: Param::new(Tensor::uniform(&[out_channels], bound, rng)),
                    input: None,
                })
            }
            LayerSpec::Dense { inputs, outputs } => {
                let bound = 1.0 / (inputs as f64).sqrt();
                Layer::Dense(Dense {
                    weight: Param::new(Tensor::uniform(&[outputs, inputs], bound, rng)),
                    bias: Param::new(Tensor::uniform(&[outputs], bound, rng)),
                    input: None,
                })
            }
            LayerSpec::LeakyRelu { slope } => Layer::LeakyRelu { slope, input: None },
            LayerSpec::BatchNorm {
                features,
                eps,
                momentum,
            } => Layer::BatchNorm(BatchNorm {
                eps,
                momentum,
                gamma: Param::new(Tensor::full(&[features], 1.0)),
                beta: Param::new(Tensor::zeros(&[features])),
                running_mean: Tensor::zeros(&[features]),
                running_var: Tensor::full(&[features], 1.0),
                cache: None,
            }),
            LayerSpec::Softmax => Layer::Softmax { output: None },
            LayerSpec::Sigmoid => Layer::Sigmoid { output: None },
            LayerSpec::Flatten => Layer::Flatten { input_shape: None },
            LayerSpec::Concat { extra } => Layer::Concat { extra, width: None },
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            _ => vec![],
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            _ => vec![],
        }
    }

    /// Non-trainable state that still has to be checkpointed.
    pub fn buffers(&self) -> Vec<&Tensor> {
        match self {
            Layer::BatchNorm(b) => vec![&b.running_mean, &b.running_var],
            _ => vec![],
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::BatchNorm(b) => vec![&mut b.running_mean, &mut b.running_var],
            _ => vec![],
        }
    }

    /// Evaluates without caching; BatchNorm uses running statistics unless
    /// `train` is set (in which case it uses batch statistics and leaves the
    /// running ones alone).
    pub fn eval(&self, x: &Tensor, aux: Option<&Tensor>, train: bool) -> Result<Tensor> {
        match self {
            Layer::Conv2d(c) => c.forward(x),
            Layer::Dense(d) => d.forward(x),
            Layer::LeakyRelu { slope, .. } => Ok(leaky(x, *slope)),
            Layer::BatchNorm(b) => b.forward(x, train).map(|(y, _)| y),
            Layer::Softmax { .. } => softmax(x),
            Layer::Sigmoid { .. } => Ok(sigmoid(x)),
            Layer::Flatten { .. } => flatten(x),
            Layer::Concat { extra, .. } => concat(x, aux, *extra),
        }
    }

    /// Evaluates and caches for [`Layer::backward`]. In train mode BatchNorm
    /// also updates its running statistics.
    pub fn forward(&mut self, x: &Tensor, aux: Option<&Tensor>, train: bool) -> Result<Tensor> {
        match self {
            Layer::Conv2d(c) => {
                let (y, cols) = c.forward_cols(x)?;
                c.input = Some((x.shape().to_vec(), cols));
                Ok(y)
            }
            Layer::Dense(d) => {
                let y = d.forward(x)?;
                d.input = Some(x.clone());
                Ok(y)
            }
            Layer::LeakyRelu { slope, input } => {
                *input = Some(x.clone());
                Ok(leaky(x, *slope))
            }
            Layer::BatchNorm(b) => {
                let (y, cache) = b.forward(x, train)?;
                if train {
                    b.update_running(x)?;
                }
                b.cache = Some(cache);
                Ok(y)
            }
            Layer::Softmax { output } => {
                let y = softmax(x)?;
                *output = Some(y.clone());
                Ok(y)
            }
            Layer::Sigmoid { output } => {
                let y = sigmoid(x);
                *output = Some(y.clone());
                Ok(y)
            }
            Layer::Flatten { input_shape } => {
                *input_shape = Some(x.shape().to_vec());
                flatten(x)
            }
            Layer::Concat { extra, width } => {
                *width = x.shape().get(1).copied();
                concat(x, aux, *extra)
            }
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(c) => c.backward(g),
            Layer::Dense(d) => d.backward(g),
            Layer::LeakyRelu { slope, input } => {
                let x = input.as_ref().ok_or_else(not_cached)?;
                check_same(x, g)?;
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xi, &gi)| if xi > 0.0 { gi } else { *slope * gi })
                    .collect();
                Tensor::new(x.shape().to_vec(), data)
            }
            Layer::BatchNorm(b) => b.backward(g),
            Layer::Softmax { output } => {
                let y = output.as_ref().ok_or_else(not_cached)?;
                check_same(y, g)?;
                let k = y.shape()[1];
                let mut out = vec![0.0; y.len()];
                for i in 0..y.batch() {
                    let (ys, gs) = (&y.data()[i * k..(i + 1) * k], &g.data()[i * k..(i + 1) * k]);
                    let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        out[i * k + j] = ys[j] * (gs[j] - dot);
                    }
                }
                Tensor::new(y.shape().to_vec(), out)
            }
            Layer::Sigmoid { output } => {
                let y = output.as_ref().ok_or_else(not_cached)?;
                check_same(y, g)?;
                let data = y
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&yi, &gi)| gi * yi * (1.0 - yi))
                    .collect();
                Tensor::new(y.shape().to_vec(), data)
            }
            Layer::Flatten { input_shape } => {
                let shape = input_shape.clone().ok_or_else(not_cached)?;
                g.clone().reshape(shape)
            }
            Layer::Concat { width, extra } => {
                let w = width.ok_or_else(not_cached)?;
                let total = w + *extra;
                if g.shape().len() != 2 || g.shape()[1] != total {
                    return Err(Error::shape("concat gradient has the wrong width"));
                }
                let mut out = Vec::with_capacity(g.batch() * w);
                for i in 0..g.batch() {
                    out.extend_from_slice(&g.data()[i * total..i * total + w]);
                }
                Tensor::new(vec![g.batch(), w], out)
            }
        }
    }

    /// Cached LeakyReLU input, if any (used to detect kinks in gradient checks).
    pub fn leaky_input(&self) -> Option<&Tensor> {
        match self {
            Layer::LeakyRelu { input, .. } => input.as_ref(),
            _ => None,
        }
    }
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "gradient shape {:?} does not match {:?}",
            b.shape(),
            a.shape()
        )));
    }
    Ok(())
}

fn leaky(x: &Tensor, slope: f64) -> Tensor {
    let data = x
        .data()
        .iter()
        .map(|&v| if v > 0.0 { v } else { slope * v })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn sigmoid(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| sigmoid_scalar(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

fn softmax(x: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 2 {
        return Err(Error::shape("softmax expects [batch, classes]"));
    }
    let k = x.shape()[1];
    let mut out = vec![0.0; x.len()];
    for i in 0..x.batch() {
        let row = &x.data()[i * k..(i + 1) * k];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..k {
            let e = (row[j] - m).exp();
            out[i * k + j] = e;
            z += e;
        }
        for v in &mut out[i * k..(i + 1) * k] {
            *v /= z;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

fn flatten(x: &Tensor) -> Result<Tensor> {
    let b = x.batch();
    let per = if b == 0 { 0 } else { x.len() / b };
    x.clone().reshape(vec![b, per])
}

fn concat(x: &Tensor, aux: Option<&Tensor>, extra: usize) -> Result<Tensor> {
    let aux = aux.ok_or_else(|| Error::invalid("concat layer needs an auxiliary input"))?;
    if x.shape().len() != 2 || aux.shape() != [x.batch(), extra] {
        return Err(Error::shape(format!(
            "cannot concat {:?} with {:?} (extra {extra})",
            x.shape(),
            aux.shape()
        )));
    }
    let w = x.shape()[1];
    let mut out = Vec::with_capacity(x.batch() * (w + extra));
    for i in 0..x.batch() {
        out.extend_from_slice(&x.data()[i * w..(i + 1) * w]);
        out.extend_from_slice(&aux.data()[i * extra..(i + 1) * extra]);
    }
    Tensor::new(vec![x.batch(), w + extra], out)
}

impl Conv2d {
    fn out_dims(&self, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
        let s = shape;
        if s.len() != 4 || s[1] != self.in_channels || s[2] < self.kernel || s[3] < self.kernel {
            return Err(Error::shape(format!(
                "conv({}->{}, k{}) cannot take input {s:?}",
                self.in_channels, self.out_channels, self.kernel
            )));
        }
        Ok((
            s[2],
            s[3],
            (s[2] - self.kernel) / self.stride + 1,
            (s[3] - self.kernel) / self.stride + 1,
        ))
    }

    /// Unfolds one sample into a patch-major `[oh*ow, C*k*k]` matrix.
    fn im2col(&self, x: &[f64], h: usize, w: usize, oh: usize, ow: usize, cols: &mut [f64]) {
        let (k, s) = (self.kernel, self.stride);
        let r_len = self.in_channels * k * k;
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &mut cols[(oy * ow + ox) * r_len..(oy * ow + ox + 1) * r_len];
                for ic in 0..self.in_channels {
                    for ky in 0..k {
                        let src = (ic * h + oy * s + ky) * w + ox * s;
                        let dst = (ic * k + ky) * k;
                        row[dst..dst + k].copy_from_slice(&x[src..src + k]);
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn col2im(
        (channels, k, s): (usize, usize, usize),
        cols: &[f64],
        h: usize,
        w: usize,
        oh: usize,
        ow: usize,
        gx: &mut [f64],
    ) {
        let r_len = channels * k * k;
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &cols[(oy * ow + ox) * r_len..(oy * ow + ox + 1) * r_len];
                for ic in 0..channels {
                    for ky in 0..k {
                        let dst = (ic * h + oy * s + ky) * w + ox * s;
                        let src = (ic * k + ky) * k;
                        axpy(1.0, &row[src..src + k], &mut gx[dst..dst + k]);
                    }
                }
            }
        }
    }

    /// Output plus the per-sample patch matrices.
    fn forward_cols(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let (h, w, oh, ow) = self.out_dims(x.shape())?;
        let (b, o) = (x.batch(), self.out_channels);
        let r_len = self.in_channels * self.kernel * self.kernel;
        let p = oh * ow;
        let wt = self.weight.value.data();
        let bias = self.bias.value.data();
        let mut cols = vec![0.0; b * r_len * p];
        let mut out = vec![0.0; b * o * p];
        for bi in 0..b {
            let c = &mut cols[bi * r_len * p..(bi + 1) * r_len * p];
            self.im2col(x.sample(bi), h, w, oh, ow, c);
            for oc in 0..o {
                let wr = &wt[oc * r_len..(oc + 1) * r_len];
                let dst = &mut out[(bi * o + oc) * p..(bi * o + oc + 1) * p];
                for (pi, d) in dst.iter_mut().enumerate() {
                    *d = bias[oc] + dot(wr, &c[pi * r_len..(pi + 1) * r_len]);
                }
            }
        }
        Ok((Tensor::new(vec![b, o, oh, ow], out)?, cols))
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_cols(x).map(|(y, _)| y)
    }

    fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let (shape, cols) = self.input.as_ref().ok_or_else(not_cached)?;
        let (h, w, oh, ow) = self.out_dims(shape)?;
        let (b, o) = (shape[0], self.out_channels);
        if g.shape() != [b, o, oh, ow] {
            return Err(Error::shape("conv gradient has the wrong shape"));
        }
        let r_len = self.in_channels * self.kernel * self.kernel;
        let geom = (self.in_channels, self.kernel, self.stride);
        let p = oh * ow;
        let wt = self.weight.value.data();
        let gw = self.weight.grad.data_mut();
        let gb = self.bias.grad.data_mut();
        let mut gx = vec![0.0; shape.iter().product()];
        let mut gcols = vec![0.0; r_len * p];
        let per = gx.len() / b.max(1);
        for bi in 0..b {
            let c = &cols[bi * r_len * p..(bi + 1) * r_len * p];
            gcols.iter_mut().for_each(|v| *v = 0.0);
            for oc in 0..o {
                let go = &g.data()[(bi * o + oc) * p..(bi * o + oc + 1) * p];
                let wr = &wt[oc * r_len..(oc + 1) * r_len];
                let gwr = &mut gw[oc * r_len..(oc + 1) * r_len];
                for (pi, &gv) in go.iter().enumerate() {
                    if gv == 0.0 {
                        continue;
                    }
                    gb[oc] += gv;
                    axpy(gv, &c[pi * r_len..(pi + 1) * r_len], gwr);
                    axpy(gv, wr, &mut gcols[pi * r_len..(pi + 1) * r_len]);
                }
            }
            Self::col2im(geom, &gcols, h, w, oh, ow, &mut gx[bi * per..(bi + 1) * per]);
        }
        Tensor::new(shape.clone(), gx)
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`.
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl Dense {
    fn dims(&self) -> (usize, usize) {
        let s = self.weight.value.shape();
        (s[0], s[1])
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (o, n) = self.dims();
        if x.shape().len() != 2 || x.shape()[1] != n {
            return Err(Error::shape(format!("dense({n}->{o}) cannot take {:?}", x.shape())));
        }
        let w = self.weight.value.data();
        let bias = self.bias.value.data();
        let mut out = Vec::with_capacity(x.batch() * o);
        for i in 0..x.batch() {
            let xi = x.sample(i);
            for j in 0..o {
                out.push(bias[j] + dot(&w[j * n..(j + 1) * n], xi));
            }
        }
        Tensor::new(vec![x.batch(), o], out)
    }

    fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or_else(not_cached)?;
        let (o, n) = self.dims();
        if g.shape() != [x.batch(), o] {
            return Err(Error::shape("dense gradient has the wrong shape"));
        }
        let w = self.weight.value.data();
        let mut gx = vec![0.0; x.len()];
        let gw = self.weight.grad.data_mut();
        for i in 0..x.batch() {
            let xi = x.sample(i);
            for j in 0..o {
                let gv = g.data()[i * o + j];
                if gv == 0.0 {
                    continue;
                }
                axpy(gv, xi, &mut gw[j * n..(j + 1) * n]);
                axpy(gv, &w[j * n..(j + 1) * n], &mut gx[i * n..(i + 1) * n]);
            }
        }
        let gb = self.bias.grad.data_mut();
        for i in 0..x.batch() {
            for j in 0..o {
                gb[j] += g.data()[i * o + j];
            }
        }
        Tensor::new(x.shape().to_vec(), gx)
    }
}

impl BatchNorm {
    /// `(features, spatial)` layout of an input.
    fn layout(&self, x: &Tensor) -> Result<(usize, usize)> {
        let f = self.gamma.value.len();
        let s = x.shape();
        if s.len() < 2 || s[1] != f {
            return Err(Error::shape(format!("batchnorm({f}) cannot take {s:?}")));
        }
        Ok((f, s[2..].iter().product()))
    }

    fn batch_stats(&self, x: &Tensor) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        let (f, sp) = self.layout(x)?;
        let b = x.batch();
        let n = b * sp;
        let mut mean = vec![0.0; f];
        let mut var = vec![0.0; f];
        for c in 0..f {
            let mut s = 0.0;
            for bi in 0..b {
                s += x.data()[(bi * f + c) * sp..(bi * f + c + 1) * sp].iter().sum::<f64>();
            }
            mean[c] = s / n as f64;
            let mut v = 0.0;
            for bi in 0..b {
                v += x.data()[(bi * f + c) * sp..(bi * f + c + 1) * sp]
                    .iter()
                    .map(|x| (x - mean[c]).powi(2))
                    .sum::<f64>();
            }
            var[c] = v / n as f64;
        }
        Ok((mean, var, n))
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<(Tensor, BnCache)> {
        let (f, sp) = self.layout(x)?;
        let (mean, var) = if train {
            let (m, v, _) = self.batch_stats(x)?;
            (m, v)
        } else {
            (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
            )
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        let (gamma, beta) = (self.gamma.value.data(), self.beta.value.data());
        for bi in 0..x.batch() {
            for c in 0..f {
                for i in (bi * f + c) * sp..(bi * f + c + 1) * sp {
                    let h = (x.data()[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    y[i] = gamma[c] * h + beta[c];
                }
            }
        }
        Ok((
            Tensor::new(x.shape().to_vec(), y)?,
            BnCache {
                xhat: Tensor::new(x.shape().to_vec(), xhat)?,
                inv_std,
                train,
            },
        ))
    }

    fn update_running(&mut self, x: &Tensor) -> Result<()> {
        let (mean, var, n) = self.batch_stats(x)?;
        let m = self.momentum;
        let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
        for (r, v) in self.running_mean.data_mut().iter_mut().zip(&mean) {
            *r = (1.0 - m) * *r + m * v;
        }
        for (r, v) in self.running_var.data_mut().iter_mut().zip(&var) {
            *r = (1.0 - m) * *r + m * v * unbias;
        }
        Ok(())
    }

    fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(not_cached)?;
        check_same(&cache.xhat, g)?;
        let (f, sp) = self.layout(g)?;
        let b = g.batch();
        let n = (b * sp) as f64;
        let gamma = self.gamma.value.data().to_vec();
        let xh = cache.xhat.data();
        let gd = g.data();
        let mut gx = vec![0.0; g.len()];
        for c in 0..f {
            let idx = |bi: usize| (bi * f + c) * sp..(bi * f + c + 1) * sp;
            let (mut sum_g, mut sum_gx) = (0.0, 0.0);
            for bi in 0..b {
                for i in idx(bi) {
                    sum_g += gd[i];
                    sum_gx += gd[i] * xh[i];
                }
            }
            self.gamma.grad.data_mut()[c] += sum_gx;
            self.beta.grad.data_mut()[c] += sum_g;
            let k = gamma[c] * cache.inv_std[c];
            for bi in 0..b {
                for i in idx(bi) {
                    gx[i] = if cache.train {
                        k * (gd[i] - sum_g / n - xh[i] * sum_gx / n)
                    } else {
                        k * gd[i]
                    };
                }
            }
        }
        Tensor::new(g.shape().to_vec(), gx)
    }
}
