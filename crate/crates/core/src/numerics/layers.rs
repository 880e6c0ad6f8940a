//! Elementwise activations, pooling, batch normalization, dropout, dense layers and
//! the softmax cross-entropy loss. Each forward has a matching hand-written backward.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{r, Real, Tensor};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient passes where the forward input was strictly positive.
pub fn relu_backward<T: Real>(grad: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    grad.zip_map(x, |g, v| if v > T::zero() { g } else { T::zero() })
}

/// Max pooling with a square window equal to its stride. Trailing rows/columns that do
/// not fill a window are dropped.
pub fn max_pool<T: Real>(x: &Tensor<T>, size: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    x.expect_ndim(4, "max_pool input")?;
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if size == 0 || h < size || w < size {
        return Err(Error::config(format!("pool size {size} for {h}x{w} input")));
    }
    let (oh, ow) = (h / size, w / size);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0usize; n * c * oh * ow];
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * size * w + ox * size;
                for i in 0..size {
                    for j in 0..size {
                        let at = base + (oy * size + i) * w + ox * size + j;
                        if src[at] > src[best] {
                            best = at;
                        }
                    }
                }
                let o = (plane * oh + oy) * ow + ox;
                dst[o] = src[best];
                argmax[o] = best;
            }
        }
    }
    Ok((out, argmax))
}

pub fn max_pool_backward<T: Real>(grad: &Tensor<T>, argmax: &[usize], input_shape: &[usize]) -> Tensor<T> {
    let mut gx = Tensor::zeros(input_shape);
    let d = gx.data_mut();
    for (&g, &at) in grad.data().iter().zip(argmax) {
        d[at] += g;
    }
    gx
}

/// Batch normalization over the channel axis of `[N,C,H,W]` (or `[N,C]`).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T: Real> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: f64,
    pub momentum: f64,
}

/// Values saved by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T: Real> {
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
}

pub const BN_EPS: f64 = 1e-5;

fn channel_layout(shape: &[usize]) -> (usize, usize, usize) {
    let n = shape[0];
    let c = shape[1];
    let plane = shape[2..].iter().product::<usize>().max(1);
    (n, c, plane)
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: BN_EPS,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Training mode normalizes with batch statistics and updates the running
    /// estimates; inference mode uses the running estimates.
    pub fn forward(&mut self, x: &Tensor<T>, training: bool) -> Result<(Tensor<T>, Option<BnCache<T>>)> {
        if x.ndim() < 2 || x.shape()[1] != self.channels() {
            return Err(Error::shape(format!(
                "batch_norm: expected {} channels, got shape {:?}",
                self.channels(),
                x.shape()
            )));
        }
        let (n, c, plane) = channel_layout(x.shape());
        let m = n * plane;

        if training && m < 2 {
            return Err(Error::shape("batch_norm in training mode needs at least 2 values per channel"));
        }
        let eps: T = r(self.eps);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        if training {
            let mf: T = r(m as f64);
            for (i, chunk) in x.data().chunks(plane).enumerate() {
                mean[i % c] += chunk.iter().copied().sum::<T>();
            }
            mean.iter_mut().for_each(|v| *v = *v / mf);
            for (i, chunk) in x.data().chunks(plane).enumerate() {
                let mu = mean[i % c];
                var[i % c] += chunk.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
            }
            var.iter_mut().for_each(|v| *v = *v / mf);
            let mom: T = r(self.momentum);
            let unbias: T = r(m as f64 / (m as f64 - 1.0));
            for ch in 0..c {
                self.running_mean[ch] = (T::one() - mom) * self.running_mean[ch] + mom * mean[ch];
                self.running_var[ch] = (T::one() - mom) * self.running_var[ch] + mom * var[ch] * unbias;
            }
        } else {
            mean.copy_from_slice(&self.running_mean);
            var.copy_from_slice(&self.running_var);
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut x_hat = x.clone();
        for (i, chunk) in x_hat.data_mut().chunks_mut(plane).enumerate() {
            let ch = i % c;
            chunk.iter_mut().for_each(|v| *v = (*v - mean[ch]) * inv_std[ch]);
        }
        let mut y = x_hat.clone();
        for (i, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
            let ch = i % c;
            chunk.iter_mut().for_each(|v| *v = *v * self.gamma[ch] + self.beta[ch]);
        }
        Ok((y, training.then_some(BnCache { x_hat, inv_std })))
    }

    /// Returns `(grad_input, grad_gamma, grad_beta)` for a training-mode forward.
    pub fn backward(&self, grad: &Tensor<T>, cache: &BnCache<T>) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
        grad.expect_shape(cache.x_hat.shape(), "batch_norm grad")?;
        let (n, c, plane) = channel_layout(grad.shape());
        let mf: T = r((n * plane) as f64);
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for (i, (g, xh)) in grad.data().chunks(plane).zip(cache.x_hat.data().chunks(plane)).enumerate() {
            let ch = i % c;
            dbeta[ch] += g.iter().copied().sum::<T>();
            dgamma[ch] += g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
        }
        let mut dx = grad.clone();
        for (i, (d, xh)) in dx.data_mut().chunks_mut(plane).zip(cache.x_hat.data().chunks(plane)).enumerate() {
            let ch = i % c;
            let k = self.gamma[ch] * cache.inv_std[ch] / mf;
            for (v, &h) in d.iter_mut().zip(xh) {
                *v = k * (mf * *v - dbeta[ch] - h * dgamma[ch]);
            }
        }
        Ok((dx, dgamma, dbeta))
    }
}

/// Functional form of [`BatchNorm::forward`].
pub fn batch_norm_forward<T: Real>(
    x: &Tensor<T>,
    state: &mut BatchNorm<T>,
    training: bool,
) -> Result<(Tensor<T>, Option<BnCache<T>>)> {
    state.forward(x, training)
}

/// Inverted dropout: each activation is zeroed with probability `rate`, survivors are
/// scaled by `1 / (1 - rate)`. Returns the applied mask (already scaled).
pub fn dropout<T: Real, R: Rng + ?Sized>(
    x: &Tensor<T>,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep: T = r(1.0 / (1.0 - rate));
    let mut mask = Tensor::zeros(x.shape());
    for m in mask.data_mut() {
        *m = if rng.gen::<f64>() < rate { T::zero() } else { keep };
    }
    let y = x.zip_map(&mask, |a, b| a * b)?;
    Ok((y, Some(mask)))
}

/// Dense layer `y = x W^T + b` with `W: [out, in]`.
pub fn fully_connected<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &[T]) -> Result<Tensor<T>> {
    x.expect_ndim(2, "fc input")?;
    w.expect_ndim(2, "fc weights")?;
    let (n, din) = (x.shape()[0], x.shape()[1]);
    let dout = w.shape()[0];
    if w.shape()[1] != din || b.len() != dout {
        return Err(Error::shape(format!(
            "fc: input {:?}, weights {:?}, bias {}",
            x.shape(),
            w.shape(),
            b.len()
        )));
    }
    let mut y = Tensor::zeros(&[n, dout]);
    for row in y.data_mut().chunks_mut(dout) {
        row.copy_from_slice(b);
    }
    // SAFETY: x is [n, din], w^T is [din, dout] via strides, y is [n, dout].
    unsafe {
        T::gemm(
            n, din, dout, T::one(),
            x.data().as_ptr(), din as isize, 1,
            w.data().as_ptr(), 1, din as isize,
            T::one(), y.data_mut().as_mut_ptr(), dout as isize, 1,
        );
    }
    Ok(y)
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn fully_connected_backward<T: Real>(
    grad: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let (n, din) = (x.shape()[0], x.shape()[1]);
    let dout = w.shape()[0];
    grad.expect_shape(&[n, dout], "fc grad")?;
    let mut gx = Tensor::zeros(&[n, din]);
    let mut gw = Tensor::zeros(&[dout, din]);
    // SAFETY: shapes as documented in each call.
    unsafe {
        // gx[n, din] = grad[n, dout] * w[dout, din]
        T::gemm(
            n, dout, din, T::one(),
            grad.data().as_ptr(), dout as isize, 1,
            w.data().as_ptr(), din as isize, 1,
            T::zero(), gx.data_mut().as_mut_ptr(), din as isize, 1,
        );
        // gw[dout, din] = grad^T[dout, n] * x[n, din]
        T::gemm(
            dout, n, din, T::one(),
            grad.data().as_ptr(), 1, dout as isize,
            x.data().as_ptr(), din as isize, 1,
            T::zero(), gw.data_mut().as_mut_ptr(), din as isize, 1,
        );
    }
    let mut gb = vec![T::zero(); dout];
    for row in grad.data().chunks(dout) {
        for (a, &g) in gb.iter_mut().zip(row) {
            *a += g;
        }
    }
    Ok((gx, gw, gb))
}

/// Numerically stable softmax over the last axis of `[N, K]`.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let k = logits.shape()[1];
    let mut p = logits.clone();
    for row in p.data_mut().chunks_mut(k) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v = *v / z);
    }
    p
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    logits.expect_ndim(2, "logits")?;
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::shape(format!("label {bad} out of range for {k} classes")));
    }
    let mut grad = softmax(logits);
    let nf: T = r(n as f64);
    let mut loss = T::zero();
    for (row, &label) in grad.data_mut().chunks_mut(k).zip(labels) {
        loss -= row[label].max(T::min_positive_value()).ln();
        row[label] -= T::one();
        row.iter_mut().for_each(|v| *v = *v / nf);
    }
    Ok((loss / nf, grad))
}
