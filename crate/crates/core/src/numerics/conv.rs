//! 2D cross-correlation with symmetric zero padding, lowered to GEMM via im2col.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    /// Square kernel, stride 1, `padding = k / 2` ("same" output size).
    pub fn same(in_channels: usize, out_channels: usize, k: usize) -> Self {
        ConvSpec {
            kernel_h: k,
            kernel_w: k,
            stride: 1,
            padding: k / 2,
            in_channels,
            out_channels,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 {
            return Err(Error::config(format!("degenerate conv spec {self:?}")));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config(format!("zero channels in {self:?}")));
        }
        Ok(())
    }

    /// Output spatial extent; the last partial stride window is dropped.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel_h || pw < self.kernel_w {
            return Err(Error::config(format!(
                "kernel {}x{} larger than padded input {ph}x{pw}",
                self.kernel_h, self.kernel_w
            )));
        }
        Ok((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }
}

fn check_input<T: Real>(input: &Tensor<T>, spec: &ConvSpec) -> Result<(usize, usize, usize)> {
    input.expect_ndim(4, "conv2d input")?;
    let s = input.shape();
    if s[1] != spec.in_channels {
        return Err(Error::shape(format!(
            "conv2d: input has {} channels, spec expects {}",
            s[1], spec.in_channels
        )));
    }
    Ok((s[0], s[2], s[3]))
}

/// Scatters the receptive fields of one `[C,H,W]` sample into `[C*kh*kw, oh*ow]`.
fn im2col<T: Real>(x: &[T], h: usize, w: usize, spec: &ConvSpec, oh: usize, ow: usize, col: &mut [T]) {
    let (kh, kw, s, p) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.padding as isize);
    let plane = oh * ow;
    for c in 0..spec.in_channels {
        let src = &x[c * h * w..(c + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let row = &mut col[((c * kh + i) * kw + j) * plane..][..plane];
                for oy in 0..oh {
                    let iy = (oy * s + i) as isize - p;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s + j) as isize - p;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into a `[C,H,W]` gradient.
fn col2im<T: Real>(col: &[T], h: usize, w: usize, spec: &ConvSpec, oh: usize, ow: usize, dx: &mut [T]) {
    let (kh, kw, s, p) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.padding as isize);
    let plane = oh * ow;
    for c in 0..spec.in_channels {
        let dst = &mut dx[c * h * w..(c + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let row = &col[((c * kh + i) * kw + j) * plane..][..plane];
                for oy in 0..oh {
                    let iy = (oy * s + i) as isize - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * s + j) as isize - p;
                        if ix >= 0 && ix < w as isize {
                            dst[base + ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn use_parallel(n: usize) -> bool {
    n > 1 && rayon::current_num_threads() > 1
}

/// `out[n,f,y,x] = Σ_{c,i,j} in[n,c,y*s+i-p,x*s+j-p] * w[f,c,i,j]`, zero outside the image.
pub fn conv2d_forward<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let (n, h, w) = check_input(input, spec)?;
    weights.expect_shape(&spec.weight_shape(), "conv2d weights")?;
    let (oh, ow) = spec.output_hw(h, w)?;
    let ckk = spec.in_channels * spec.kernel_h * spec.kernel_w;
    let f = spec.out_channels;
    let plane = oh * ow;
    let mut out = Tensor::zeros(&[n, f, oh, ow]);

    let run = |x: &[T], y: &mut [T]| {
        let mut col = vec![T::zero(); ckk * plane];
        im2col(x, h, w, spec, oh, ow, &mut col);
        // SAFETY: w is [f, ckk], col is [ckk, plane], y is [f, plane], all row-major and in bounds.
        unsafe {
            T::gemm(
                f, ckk, plane, T::one(),
                weights.data().as_ptr(), ckk as isize, 1,
                col.as_ptr(), plane as isize, 1,
                T::zero(), y.as_mut_ptr(), plane as isize, 1,
            );
        }
    };
    let in_stride = spec.in_channels * h * w;
    let out_stride = f * plane;
    if use_parallel(n) {
        out.data_mut()
            .par_chunks_mut(out_stride)
            .zip(input.data().par_chunks(in_stride))
            .for_each(|(y, x)| run(x, y));
    } else {
        out.data_mut()
            .chunks_mut(out_stride)
            .zip(input.data().chunks(in_stride))
            .for_each(|(y, x)| run(x, y));
    }
    Ok(out)
}

/// Which gradients [`conv2d_backward`] should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGrads {
    pub input: bool,
    pub weights: bool,
}

impl ConvGrads {
    pub const BOTH: ConvGrads = ConvGrads {
        input: true,
        weights: true,
    };
}

/// Gradients of the forward contract w.r.t. input and weights.
///
/// Per-sample weight gradients are reduced in sample order, so the result is the
/// same whether or not the batch is processed in parallel.
pub fn conv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (gi, gw) = conv2d_backward_sel(grad_out, input, weights, spec, ConvGrads::BOTH)?;
    Ok((gi.expect("requested"), gw.expect("requested")))
}

pub fn conv2d_backward_sel<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
    want: ConvGrads,
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
    let (n, h, w) = check_input(input, spec)?;
    weights.expect_shape(&spec.weight_shape(), "conv2d weights")?;
    let (oh, ow) = spec.output_hw(h, w)?;
    let f = spec.out_channels;
    grad_out.expect_shape(&[n, f, oh, ow], "conv2d grad_out")?;
    let ckk = spec.in_channels * spec.kernel_h * spec.kernel_w;
    let plane = oh * ow;
    let in_stride = spec.in_channels * h * w;

    let per_sample = |idx: usize| -> (Option<Vec<T>>, Option<Vec<T>>) {
        let x = &input.data()[idx * in_stride..(idx + 1) * in_stride];
        let g = grad_out.outer(idx);
        let mut col = vec![T::zero(); ckk * plane];
        let mut gw = None;
        if want.weights {
            im2col(x, h, w, spec, oh, ow, &mut col);
            let mut part = vec![T::zero(); f * ckk];
            // SAFETY: g is [f, plane], col^T is [plane, ckk] via strides, part is [f, ckk].
            unsafe {
                T::gemm(
                    f, plane, ckk, T::one(),
                    g.as_ptr(), plane as isize, 1,
                    col.as_ptr(), 1, plane as isize,
                    T::zero(), part.as_mut_ptr(), ckk as isize, 1,
                );
            }
            gw = Some(part);
        }
        let mut gx = None;
        if want.input {
            // SAFETY: w^T is [ckk, f] via strides, g is [f, plane], col is [ckk, plane].
            unsafe {
                T::gemm(
                    ckk, f, plane, T::one(),
                    weights.data().as_ptr(), 1, ckk as isize,
                    g.as_ptr(), plane as isize, 1,
                    T::zero(), col.as_mut_ptr(), plane as isize, 1,
                );
            }
            let mut dx = vec![T::zero(); in_stride];
            col2im(&col, h, w, spec, oh, ow, &mut dx);
            gx = Some(dx);
        }
        (gx, gw)
    };

    let parts: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = if use_parallel(n) {
        (0..n).into_par_iter().map(per_sample).collect()
    } else {
        (0..n).map(per_sample).collect()
    };

    let mut grad_input = want.input.then(|| Tensor::zeros(input.shape()));
    let mut grad_weights = want.weights.then(|| Tensor::zeros(weights.shape()));
    for (idx, (gx, gw)) in parts.into_iter().enumerate() {
        if let (Some(dst), Some(src)) = (grad_input.as_mut(), gx) {
            dst.outer_mut(idx).copy_from_slice(&src);
        }
        if let (Some(dst), Some(src)) = (grad_weights.as_mut(), gw) {
            for (a, b) in dst.data_mut().iter_mut().zip(src) {
                *a += b;
            }
        }
    }
    Ok((grad_input, grad_weights))
}

/// Per-channel bias add on `[N,F,H,W]`.
pub fn add_bias<T: Real>(x: &mut Tensor<T>, bias: &[T]) {
    let s = x.shape().to_vec();
    let plane = s[2] * s[3];
    for (i, chunk) in x.data_mut().chunks_mut(plane).enumerate() {
        let b = bias[i % s[1]];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

/// Gradient of [`add_bias`] w.r.t. the bias.
pub fn bias_grad<T: Real>(grad_out: &Tensor<T>) -> Vec<T> {
    let s = grad_out.shape();
    let plane = s[2] * s[3];
    let mut g = vec![T::zero(); s[1]];
    for (i, chunk) in grad_out.data().chunks(plane).enumerate() {
        g[i % s[1]] += chunk.iter().copied().sum::<T>();
    }
    g
}
