//! Complex Gabor kernels and the quadrature / perpendicular filter banks built from them.
//!
//! Pixel offsets are measured from the kernel center with `x` growing to the right
//! (column) and `y` growing upwards (`y = center - row`), so orientations are
//! counter-clockwise angles in the usual mathematical sense.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaborParams {
    /// Wavelength in pixels per cycle.
    pub lambda: f64,
    /// Orientation of the carrier in radians.
    pub theta: f64,
    /// Phase offset in radians.
    pub psi: f64,
    /// Standard deviation of the Gaussian envelope in pixels.
    pub sigma: f64,
    /// Spatial aspect ratio of the envelope.
    pub gamma: f64,
}

impl GaborParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [self.lambda, self.theta, self.psi, self.sigma, self.gamma];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::config(format!("non-finite gabor parameter in {self:?}")));
        }
        if self.lambda <= 0.0 || self.sigma <= 0.0 || self.gamma <= 0.0 {
            return Err(Error::config(format!(
                "lambda, sigma and gamma must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Paired real and imaginary spatial filters of odd size `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexKernel {
    pub real: Tensor<f64>,
    pub imag: Tensor<f64>,
    /// Non-fatal problems noticed while synthesizing (e.g. sub-Nyquist wavelength).
    pub warnings: Vec<String>,
}

impl ComplexKernel {
    pub fn size(&self) -> usize {
        self.real.shape()[0]
    }

    /// `sqrt(real^2 + imag^2)` per pixel.
    pub fn magnitude(&self) -> Tensor<f64> {
        self.real.zip_map(&self.imag, |a, b| a.hypot(b)).expect("same shape")
    }
}

/// Offset of pixel `(row, col)` from the kernel center, as `(x, y)` with `y` up.
pub fn pixel_offset(row: usize, col: usize, size: usize) -> (f64, f64) {
    let c = (size / 2) as f64;
    (col as f64 - c, c - row as f64)
}

/// Samples `exp(-(x'^2 + γ^2 y'^2) / 2σ^2) * exp(i(2π x'/λ + ψ))` on a `size x size` grid.
pub fn make_gabor(params: &GaborParams, size: usize) -> Result<ComplexKernel> {
    if size.is_multiple_of(2) || size == 0 {
        return Err(Error::config(format!("gabor kernel size must be odd, got {size}")));
    }
    params.validate()?;
    let mut warnings = Vec::new();
    if params.lambda < 2.0 {
        warnings.push(format!(
            "wavelength {:.3} px is below the Nyquist limit of 2 px",
            params.lambda
        ));
    }
    let (st, ct) = params.theta.sin_cos();
    let two_sigma2 = 2.0 * params.sigma * params.sigma;
    let g2 = params.gamma * params.gamma;
    let mut real = Tensor::zeros(&[size, size]);
    let mut imag = Tensor::zeros(&[size, size]);
    for row in 0..size {
        for col in 0..size {
            let (x, y) = pixel_offset(row, col, size);
            let xr = x * ct + y * st;
            let yr = -x * st + y * ct;
            let env = (-(xr * xr + g2 * yr * yr) / two_sigma2).exp();
            let arg = 2.0 * PI * xr / params.lambda + params.psi;
            real.set(&[row, col], env * arg.cos());
            imag.set(&[row, col], env * arg.sin());
        }
    }
    Ok(ComplexKernel { real, imag, warnings })
}

/// Counter-clockwise quarter turn: `out[y, x] = in[x, k - 1 - y]`.
pub fn rotate_quarter<T: Real>(kernel: &Tensor<T>) -> Result<Tensor<T>> {
    kernel.expect_ndim(2, "rotate_quarter")?;
    let (h, w) = (kernel.shape()[0], kernel.shape()[1]);
    if h != w {
        return Err(Error::shape(format!("rotate_quarter needs a square kernel, got {h}x{w}")));
    }
    let mut out = Tensor::zeros(&[h, w]);
    rotate_quarter_into(kernel.data(), h, out.data_mut());
    Ok(out)
}

/// Slice form of [`rotate_quarter`] for a row-major `k x k` block.
pub fn rotate_quarter_into<T: Copy>(src: &[T], k: usize, dst: &mut [T]) {
    for y in 0..k {
        for x in 0..k {
            dst[y * k + x] = src[x * k + (k - 1 - y)];
        }
    }
}

/// `n` values from `f_min` to `f_max` with a constant ratio between neighbours.
pub fn log_spaced(f_min: f64, f_max: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::config(format!("log_spaced needs n >= 2, got {n}")));
    }
    if !(f_min > 0.0 && f_max > f_min && f_max.is_finite()) {
        return Err(Error::config(format!(
            "log_spaced needs 0 < f_min < f_max, got {f_min}, {f_max}"
        )));
    }
    let ratio = f_max / f_min;
    Ok((0..n)
        .map(|i| {
            if i == n - 1 {
                f_max
            } else {
                f_min * ratio.powf(i as f64 / (n - 1) as f64)
            }
        })
        .collect())
}

/// `θ = π/n · {0, 1, .., n-1}`.
pub fn orientations(n: usize) -> Vec<f64> {
    (0..n).map(|i| PI * i as f64 / n as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BankMode {
    /// Real and imaginary parts form the cosine/sine pair.
    Quadrature,
    /// The real part is the imaginary part rotated by a quarter turn.
    Perpendicular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBankSpec {
    pub kernel_size: usize,
    /// Carrier frequencies in cycles per kernel window (`λ = kernel_size / f`).
    pub frequencies: Vec<f64>,
    pub orientations: Vec<f64>,
    pub mode: BankMode,
    #[serde(default)]
    pub psi: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// `σ = sigma_per_lambda * λ`; 0.56 gives roughly one octave of bandwidth.
    #[serde(default = "default_sigma_per_lambda")]
    pub sigma_per_lambda: f64,
    /// Scale each kernel so that `‖real‖² + ‖imag‖² = 1`.
    #[serde(default)]
    pub normalize: bool,
}

fn default_gamma() -> f64 {
    0.5
}

fn default_sigma_per_lambda() -> f64 {
    0.56
}

/// Kernel size that represents every frequency of the 12-frequency bank.
pub const WIDE_BANK_KERNEL: usize = 11;

impl FilterBankSpec {
    pub fn new(kernel_size: usize, frequencies: Vec<f64>, orientations: Vec<f64>, mode: BankMode) -> Self {
        FilterBankSpec {
            kernel_size,
            frequencies,
            orientations,
            mode,
            psi: 0.0,
            gamma: default_gamma(),
            sigma_per_lambda: default_sigma_per_lambda(),
            normalize: false,
        }
    }

    /// 12 log-spaced frequencies in [0.2, 5] cycles/window over 8 orientations (96 kernels).
    pub fn wide(mode: BankMode) -> Self {
        Self::new(
            WIDE_BANK_KERNEL,
            log_spaced(0.2, 5.0, 12).expect("valid"),
            orientations(8),
            mode,
        )
    }

    /// 3 frequencies over the same range and the same 8 orientations (24 kernels).
    pub fn small(mode: BankMode) -> Self {
        Self::new(
            WIDE_BANK_KERNEL,
            log_spaced(0.2, 5.0, 3).expect("valid"),
            orientations(8),
            mode,
        )
    }

    pub fn len(&self) -> usize {
        self.frequencies.len() * self.orientations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::config(format!(
                "bank kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.frequencies.is_empty() || self.orientations.is_empty() {
            return Err(Error::config("filter bank needs at least one frequency and one orientation"));
        }
        let nyq = self.kernel_size as f64 / 2.0;
        if let Some(f) = self.frequencies.iter().find(|&&f| !(f > 0.0 && f <= nyq)) {
            return Err(Error::config(format!(
                "frequency {f} outside (0, {nyq}] cycles per {}-pixel window",
                self.kernel_size
            )));
        }
        if self.sigma_per_lambda <= 0.0 || self.gamma <= 0.0 {
            return Err(Error::config("sigma_per_lambda and gamma must be positive"));
        }
        Ok(())
    }

    /// Parameters of every kernel, frequency-major.
    pub fn params(&self) -> Vec<GaborParams> {
        let mut out = Vec::with_capacity(self.len());
        for &f in &self.frequencies {
            let lambda = self.kernel_size as f64 / f;
            for &theta in &self.orientations {
                out.push(GaborParams {
                    lambda,
                    theta,
                    psi: self.psi,
                    sigma: self.sigma_per_lambda * lambda,
                    gamma: self.gamma,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexFilterBank {
    pub spec: FilterBankSpec,
    pub params: Vec<GaborParams>,
    pub kernels: Vec<ComplexKernel>,
}

impl ComplexFilterBank {
    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn kernel_size(&self) -> usize {
        self.spec.kernel_size
    }

    pub fn mode(&self) -> BankMode {
        self.spec.mode
    }

    /// Real and imaginary weights as `[F, channels, k, k]`, each kernel replicated
    /// across input channels.
    pub fn weights<T: Real>(&self, channels: usize) -> (Tensor<T>, Tensor<T>) {
        let k = self.kernel_size();
        let shape = [self.len(), channels, k, k];
        let pick = |part: fn(&ComplexKernel) -> &Tensor<f64>| {
            Tensor::from_fn(&shape, |i| {
                T::from_f64(part(&self.kernels[i[0]]).data()[i[2] * k + i[3]])
            })
        };
        (pick(|c| &c.real), pick(|c| &c.imag))
    }

    /// All kernels as one container: `real` and `imag` of shape `[F, k, k]`.
    pub fn to_container(&self) -> Result<crate::container::Container> {
        let (re, im) = self.weights::<f64>(1);
        let k = self.kernel_size();
        let mut c = crate::container::Container::new();
        c.push("real", &re.reshape(&[self.len(), k, k])?);
        c.push("imag", &im.reshape(&[self.len(), k, k])?);
        c.metadata = serde_json::json!({ "spec": self.spec });
        Ok(c)
    }

    /// JSON sidecar listing the parameters of every kernel in bank order.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "mode": self.spec.mode,
            "kernel_size": self.spec.kernel_size,
            "kernels": self.params,
        })
    }
}

pub fn make_bank(spec: &FilterBankSpec) -> Result<ComplexFilterBank> {
    spec.validate()?;
    let params = spec.params();
    let mut kernels = Vec::with_capacity(params.len());
    for p in &params {
        let mut kernel = make_gabor(p, spec.kernel_size)?;
        if spec.mode == BankMode::Perpendicular {
            kernel.real = rotate_quarter(&kernel.imag)?;
        }
        if spec.normalize {
            let energy: f64 = kernel
                .real
                .data()
                .iter()
                .chain(kernel.imag.data())
                .map(|v| v * v)
                .sum();
            if energy > 0.0 {
                let s = 1.0 / energy.sqrt();
                kernel.real.scale(s);
                kernel.imag.scale(s);
            }
        }
        kernels.push(kernel);
    }
    Ok(ComplexFilterBank {
        spec: spec.clone(),
        params,
        kernels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(theta: f64, psi: f64, gamma: f64) -> GaborParams {
        GaborParams {
            lambda: 4.0,
            theta,
            psi,
            sigma: 2.24,
            gamma,
        }
    }

    #[test]
    fn center_pixel_is_one_plus_zero_i() {
        let k = make_gabor(&params(0.3, 0.0, 0.5), 7).unwrap();
        assert_eq!(k.real.get(&[3, 3]), 1.0);
        assert_eq!(k.imag.get(&[3, 3]), 0.0);
    }

    #[test]
    fn quarter_wave_pixel() {
        let p = params(0.0, 0.0, 0.5);
        let k = make_gabor(&p, 7).unwrap();
        let env = (-1.0 / (2.0 * p.sigma * p.sigma)).exp();
        // x = 1, y = 0 is row 3, col 4.
        assert!(k.real.get(&[3, 4]).abs() < 1e-12);
        assert!((k.imag.get(&[3, 4]) - env).abs() < 1e-12);
    }

    #[test]
    fn even_size_is_rejected_and_aliasing_warned() {
        assert!(matches!(make_gabor(&params(0.0, 0.0, 1.0), 6), Err(Error::Config(_))));
        let mut p = params(0.0, 0.0, 1.0);
        p.lambda = 1.5;
        let k = make_gabor(&p, 7).unwrap();
        assert_eq!(k.warnings.len(), 1);
    }

    #[test]
    fn isotropic_envelope_magnitude_rotates_with_theta() {
        for &theta in &[0.0, 0.4, 1.1, 2.5] {
            let a = make_gabor(&params(theta, 0.0, 1.0), 9).unwrap().magnitude();
            let b = make_gabor(&params(0.0, 0.0, 1.0), 9).unwrap().magnitude();
            // |H| = envelope only, which is radially symmetric at γ = 1.
            assert!(a.max_abs_diff(&b) < 1e-12);
        }
    }

    #[test]
    fn quarter_turn_properties() {
        let t = Tensor::<f64>::from_fn(&[5, 5], |i| (i[0] * 5 + i[1]) as f64);
        let mut r = t.clone();
        for _ in 0..4 {
            r = rotate_quarter(&r).unwrap();
        }
        assert_eq!(r, t);

        let row0 = Tensor::<f64>::from_fn(&[5, 5], |i| if i[0] == 0 { 1.0 + i[1] as f64 } else { 0.0 });
        let rot = rotate_quarter(&row0).unwrap();
        let cols: std::collections::BTreeSet<usize> = (0..25)
            .filter(|&i| rot.data()[i] != 0.0)
            .map(|i| i % 5)
            .collect();
        assert_eq!(cols.len(), 1);
        assert!(rotate_quarter(&Tensor::<f64>::zeros(&[3, 4])).is_err());
    }

    #[test]
    fn quarter_turn_matches_rotated_orientation() {
        for i in 0..16 {
            let theta = i as f64 * PI / 8.0;
            let a = make_gabor(&params(theta, 0.0, 1.0), 9).unwrap();
            let b = make_gabor(&params(theta + PI / 2.0, 0.0, 1.0), 9).unwrap();
            let rot = rotate_quarter(&a.imag).unwrap();
            assert!(rot.max_abs_diff(&b.imag) < 1e-10, "theta {theta}");
        }
    }

    #[test]
    fn quadrature_offset_identity() {
        // sin(a + ψ) = cos(a + (ψ - π/2))
        for i in 0..12 {
            let psi = -PI + i as f64 * PI / 6.0;
            let k1 = make_gabor(&params(0.7, psi, 0.5), 7).unwrap();
            let k2 = make_gabor(&params(0.7, psi - PI / 2.0, 0.5), 7).unwrap();
            assert!(k1.imag.max_abs_diff(&k2.real) < 1e-12);
            let m1 = k1.magnitude();
            let m0 = make_gabor(&params(0.7, 0.0, 0.5), 7).unwrap().magnitude();
            assert!(m1.max_abs_diff(&m0) < 1e-12);
        }
    }

    #[test]
    fn log_spacing() {
        assert_eq!(log_spaced(0.2, 5.0, 2).unwrap(), vec![0.2, 5.0]);
        let v = log_spaced(1.0, 4.0, 3).unwrap();
        assert!((v[1] - 2.0).abs() < 1e-12 && v[2] == 4.0);
        let v = log_spaced(0.2, 5.0, 12).unwrap();
        assert_eq!(v.len(), 12);
        assert!((v[5] / v[4] - 25f64.powf(1.0 / 11.0)).abs() < 1e-9);
        assert!(log_spaced(0.2, 5.0, 1).is_err());
        assert!(log_spaced(0.0, 5.0, 3).is_err());
    }

    #[test]
    fn bank_sizes() {
        let wide = make_bank(&FilterBankSpec::wide(BankMode::Perpendicular)).unwrap();
        assert_eq!(wide.len(), 96);
        let f = &wide.spec.frequencies;
        assert_eq!(f[0], 0.2);
        assert_eq!(f[11], 5.0);
        let ratio = f[1] / f[0];
        assert!(f.windows(2).all(|w| (w[1] / w[0] - ratio).abs() < 1e-9));
        let small = make_bank(&FilterBankSpec::small(BankMode::Quadrature)).unwrap();
        assert_eq!(small.len(), 24);
    }

    #[test]
    fn perpendicular_bank_ties_real_to_rotated_imag() {
        let bank = make_bank(&FilterBankSpec::small(BankMode::Perpendicular)).unwrap();
        for k in &bank.kernels {
            assert_eq!(rotate_quarter(&k.imag).unwrap(), k.real);
        }
    }

    #[test]
    fn bank_validation() {
        let mut s = FilterBankSpec::small(BankMode::Quadrature);
        s.frequencies.clear();
        assert!(make_bank(&s).is_err());
        let s = FilterBankSpec::new(7, vec![5.0], orientations(8), BankMode::Quadrature);
        assert!(matches!(make_bank(&s), Err(Error::Config(_))));
    }

    #[test]
    fn bank_is_deterministic() {
        let a = make_bank(&FilterBankSpec::wide(BankMode::Quadrature)).unwrap();
        let b = make_bank(&FilterBankSpec::wide(BankMode::Quadrature)).unwrap();
        for (x, y) in a.kernels.iter().zip(&b.kernels) {
            assert!(x.real.data().iter().zip(y.real.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
            assert!(x.imag.data().iter().zip(y.imag.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn normalized_bank_has_unit_energy() {
        let mut s = FilterBankSpec::small(BankMode::Quadrature);
        s.normalize = true;
        let bank = make_bank(&s).unwrap();
        for k in &bank.kernels {
            let e: f64 = k.real.data().iter().chain(k.imag.data()).map(|v| v * v).sum();
            assert!((e - 1.0).abs() < 1e-12);
        }
    }
}
