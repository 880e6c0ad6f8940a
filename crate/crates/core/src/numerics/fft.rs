//! Square 2D DFT restricted to the non-redundant half-plane of a real input.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Integer frequency coordinates of a half-plane bin: `(row, col)`, with the row
/// frequency signed (`u > k/2` maps to `u - k`) and the column in `0..=k/2`.
pub type Bin = (i32, i32);

/// Cached forward and inverse transforms for one kernel size.
pub struct Rfft2Plan {
    k: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    bins: Vec<Bin>,
}

impl std::fmt::Debug for Rfft2Plan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Rfft2Plan").field("k", &self.k).finish()
    }
}

pub fn half_cols(k: usize) -> usize {
    k / 2 + 1
}

pub fn signed_freq(u: usize, k: usize) -> i32 {
    if u <= k / 2 {
        u as i32
    } else {
        u as i32 - k as i32
    }
}

impl Rfft2Plan {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::shape(format!("rfft2 needs k >= 2, got {k}")));
        }
        let mut planner = FftPlanner::<f64>::new();
        let hc = half_cols(k);
        let bins = (0..k)
            .flat_map(|u| (0..hc).map(move |v| (signed_freq(u, k), v as i32)))
            .collect();
        Ok(Rfft2Plan {
            k,
            fwd: planner.plan_fft_forward(k),
            inv: planner.plan_fft_inverse(k),
            bins,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Bin coordinates in row-major half-plane order (`k` rows by `k/2 + 1` columns).
    pub fn bins(&self) -> &[Bin] {
        &self.bins
    }

    fn transform2(&self, grid: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let k = self.k;
        for row in grid.chunks_mut(k) {
            fft.process(row);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); k];
        for x in 0..k {
            for y in 0..k {
                col[y] = grid[y * k + x];
            }
            fft.process(&mut col);
            for y in 0..k {
                grid[y * k + x] = col[y];
            }
        }
    }

    /// Half-plane spectrum `Ŵ[u,v] = Σ w[y,x] exp(-2πi(uy + vx)/k)` of a `k*k` row-major slice.
    pub fn forward(&self, w: &[f64]) -> Vec<Complex64> {
        let k = self.k;
        assert_eq!(w.len(), k * k);
        let mut grid: Vec<Complex64> = w.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform2(&mut grid, &self.fwd);
        let hc = half_cols(k);
        (0..k)
            .flat_map(|u| (0..hc).map(move |v| (u, v)))
            .map(|(u, v)| grid[u * k + v])
            .collect()
    }

    /// Adjoint of [`Rfft2Plan::forward`] followed by the real part:
    /// `g[y,x] = Re Σ_b c_b exp(+2πi(u_b y + v_b x)/k)`.
    pub fn adjoint_real(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let k = self.k;
        let hc = half_cols(k);
        assert_eq!(coeffs.len(), k * hc);
        let mut grid = vec![Complex64::new(0.0, 0.0); k * k];
        for u in 0..k {
            for v in 0..hc {
                grid[u * k + v] = coeffs[u * hc + v];
            }
        }
        self.transform2(&mut grid, &self.inv);
        grid.iter().map(|c| c.re).collect()
    }
}

/// Magnitudes over the half-plane grid plus the coordinate of every bin.
#[derive(Debug, Clone)]
pub struct HalfSpectrum<T: Real> {
    pub magnitudes: Tensor<T>,
    pub bins: Vec<Bin>,
}

/// `|DFT|` of a square `[k,k]` tensor over rows `0..k`, columns `0..=k/2`.
pub fn rfft2<T: Real>(input: &Tensor<T>) -> Result<HalfSpectrum<T>> {
    input.expect_ndim(2, "rfft2 input")?;
    let (h, w) = (input.shape()[0], input.shape()[1]);
    if h != w {
        return Err(Error::shape(format!("rfft2 needs a square input, got {h}x{w}")));
    }
    let plan = Rfft2Plan::new(h)?;
    let vals: Vec<f64> = input.data().iter().map(|&v| v.to_f64()).collect();
    let spec = plan.forward(&vals);
    let magnitudes = Tensor::from_vec(
        &[h, half_cols(h)],
        spec.iter().map(|c| T::from_f64(c.norm())).collect(),
    )?;
    Ok(HalfSpectrum {
        magnitudes,
        bins: plan.bins().to_vec(),
    })
}
