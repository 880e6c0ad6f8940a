//! Slow, direct reference implementations used to certify the fast paths.
//!
//! Nothing here calls into the convolution, FFT or Gabor code it checks; every
//! routine is a literal transcription of the defining formula in 64-bit arithmetic.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::gabor::GaborParams;
use crate::numerics::conv::ConvSpec;
use crate::tensor::Tensor;

/// Quadruple loop over the cross-correlation definition with zero padding.
pub fn naive_conv2d(input: &Tensor<f64>, weights: &Tensor<f64>, spec: &ConvSpec) -> Result<Tensor<f64>> {
    if input.ndim() != 4 || weights.ndim() != 4 {
        return Err(Error::RejectedInput("naive_conv2d expects 4-d tensors".into()));
    }
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let [f, wc, kh, kw] = [
        weights.shape()[0],
        weights.shape()[1],
        weights.shape()[2],
        weights.shape()[3],
    ];
    if wc != c || kh != spec.kernel_h || kw != spec.kernel_w || f != spec.out_channels || c != spec.in_channels {
        return Err(Error::RejectedInput(format!(
            "naive_conv2d: input {:?}, weights {:?}, spec {spec:?}",
            input.shape(),
            weights.shape()
        )));
    }
    let (s, p) = (spec.stride as isize, spec.padding as isize);
    let ph = h as isize + 2 * p;
    let pw = w as isize + 2 * p;
    if ph < kh as isize || pw < kw as isize {
        return Err(Error::Config("kernel larger than padded input".into()));
    }
    let oh = ((ph - kh as isize) / s + 1) as usize;
    let ow = ((pw - kw as isize) / s + 1) as usize;
    let mut out = Tensor::zeros(&[n, f, oh, ow]);
    for b in 0..n {
        for o in 0..f {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = y as isize * s + i as isize - p;
                                let ix = x as isize * s + j as isize - p;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    acc += input.get(&[b, ch, iy as usize, ix as usize]) * weights.get(&[o, ch, i, j]);
                                }
                            }
                        }
                    }
                    out.set(&[b, o, y, x], acc);
                }
            }
        }
    }
    Ok(out)
}

/// Direct O(k⁴) DFT magnitudes over rows `0..k`, columns `0..=k/2`, row-major.
pub fn naive_dft_magnitudes(input: &Tensor<f64>) -> Result<Vec<f64>> {
    if input.ndim() != 2 || input.shape()[0] != input.shape()[1] {
        return Err(Error::RejectedInput("naive DFT needs a square 2-d input".into()));
    }
    let k = input.shape()[0];
    let mut out = Vec::with_capacity(k * (k / 2 + 1));
    for u in 0..k {
        for v in 0..=k / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..k {
                for x in 0..k {
                    let a = -2.0 * PI * ((u * y) as f64 + (v * x) as f64) / k as f64;
                    let val = input.get(&[y, x]);
                    re += val * a.cos();
                    im += val * a.sin();
                }
            }
            out.push((re * re + im * im).sqrt());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteDiffConfig {
    pub epsilon: f64,
}

impl Default for FiniteDiffConfig {
    fn default() -> Self {
        FiniteDiffConfig { epsilon: 1e-5 }
    }
}

/// Central differences `(f(x + εe_i) - f(x - εe_i)) / 2ε` for every coordinate.
pub fn finite_diff_grad(
    mut f: impl FnMut(&[f64]) -> f64,
    point: &[f64],
    config: FiniteDiffConfig,
) -> Result<Vec<f64>> {
    if !(config.epsilon > 0.0) {
        return Err(Error::Config("finite difference epsilon must be positive".into()));
    }
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + config.epsilon;
        let fp = f(&x);
        x[i] = orig - config.epsilon;
        let fm = f(&x);
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Oracle {
                index: i,
                reason: format!("non-finite function value ({fp}, {fm})"),
            });
        }
        grad.push((fp - fm) / (2.0 * config.epsilon));
    }
    Ok(grad)
}

/// `‖a - b‖₂ / max(‖a‖₂, ‖b‖₂)`, or the absolute norm when both are below `floor`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

/// A plane wave `A cos(2π x_s'/λ_s - φ_s)` with `x_s' = x cosθ_s + y sinθ_s`, where
/// `(x, y)` is measured from a chosen origin with `y` pointing up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    pub wavelength: f64,
    pub theta: f64,
    pub phase: f64,
    pub amplitude: f64,
}

impl Sinusoid {
    pub fn at(&self, x: f64, y: f64) -> f64 {
        let xp = x * self.theta.cos() + y * self.theta.sin();
        self.amplitude * (2.0 * PI * xp / self.wavelength - self.phase).cos()
    }

    /// `h x w` image with origin at pixel `(row0, col0)`.
    pub fn image(&self, h: usize, w: usize, row0: f64, col0: f64) -> Tensor<f64> {
        Tensor::from_fn(&[h, w], |i| self.at(i[1] as f64 - col0, row0 - i[0] as f64))
    }

    /// The same wave translated by `delta` pixels along its own direction.
    pub fn translated(&self, delta: f64) -> Sinusoid {
        Sinusoid {
            phase: self.phase + 2.0 * PI * delta / self.wavelength,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// Expected response of a complex Gabor filter centered on the sinusoid's origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GaborResponse {
    /// Matched wavelength and orientation: the ideal single-sided response.
    Matched {
        magnitude: f64,
        /// Extracted phase, folded into the arctangent range `(-π/2, π/2]`.
        phase: f64,
        /// Bound on the deviation of each of real/imag from the ideal values.
        leakage: f64,
    },
    /// Mismatched filter: only the magnitude range is known.
    Bounds { magnitude: Interval },
}

/// Folds an angle into `(-π/2, π/2]` (the period of single-argument arctangent).
pub fn fold_half_period(a: f64) -> f64 {
    let mut v = a - PI * (a / PI).round();
    if v <= -PI / 2.0 {
        v += PI;
    }
    if v > PI / 2.0 {
        v -= PI;
    }
    v
}

/// Analytic response by direct summation over a `size x size` window.
///
/// For a matched sinusoid, `real + i·imag = (A/2)·Σe·exp(i(φ_s + ψ)) + leakage`, where
/// the leakage is the envelope's spectrum evaluated at twice the carrier frequency.
pub fn analytic_gabor_response(params: &GaborParams, size: usize, input: &Sinusoid) -> GaborResponse {
    let c = (size / 2) as f64;
    let (st, ct) = params.theta.sin_cos();
    let w = 2.0 * PI / params.lambda;
    let ws = 2.0 * PI / input.wavelength;
    let (sts, cts) = input.theta.sin_cos();
    // S1 = Σ e exp(i(ωx' - ω_s x_s')),  S2 = Σ e exp(i(ωx' + ω_s x_s'))
    let (mut s1r, mut s1i, mut s2r, mut s2i, mut env_sum) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for row in 0..size {
        for col in 0..size {
            let x = col as f64 - c;
            let y = c - row as f64;
            let xr = x * ct + y * st;
            let yr = -x * st + y * ct;
            let e = (-(xr * xr + params.gamma * params.gamma * yr * yr) / (2.0 * params.sigma * params.sigma)).exp();
            let xs = x * cts + y * sts;
            env_sum += e;
            let a1 = w * xr - ws * xs;
            let a2 = w * xr + ws * xs;
            s1r += e * a1.cos();
            s1i += e * a1.sin();
            s2r += e * a2.cos();
            s2i += e * a2.sin();
        }
    }
    let half = input.amplitude.abs() / 2.0;
    let matched = (params.lambda - input.wavelength).abs() < 1e-12 && (params.theta - input.theta).abs() < 1e-12;
    if matched {
        GaborResponse::Matched {
            magnitude: half * env_sum,
            phase: fold_half_period(input.phase + params.psi),
            leakage: half * s2r.hypot(s2i),
        }
    } else {
        let m1 = s1r.hypot(s1i);
        let m2 = s2r.hypot(s2i);
        GaborResponse::Bounds {
            magnitude: Interval {
                lo: half * (m1 - m2).abs(),
                hi: half * (m1 + m2),
            },
        }
    }
}
