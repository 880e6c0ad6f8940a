//! Trainable complex convolution with perpendicular weight tying, CReLU, arctangent
//! phase extraction and the spectral-concentration regularizer on the learned filters.
//!
//! The imaginary filters are `W_i = U ⊙ E` with `U` trainable and `E` a fixed Gaussian
//! envelope. The real filters are a quarter turn of the imaginary ones and are
//! recomputed after every update instead of being optimized.

use rand::Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::gabor::{rotate_quarter_into, ComplexFilterBank};
use crate::numerics::conv::{conv2d_backward_sel, conv2d_forward, ConvGrads, ConvSpec};
use crate::numerics::fft::Rfft2Plan;
use crate::numerics::layers::relu;
use crate::numerics::optim::Param;
use crate::tensor::{r, Real, Tensor};

pub const DEFAULT_PHASE_EPS: f64 = 1e-8;
pub const DEFAULT_REG_WEIGHT: f64 = 1e-3;

/// `E[x,y] = exp(-(x² + y²) / 2σ²)` over offsets from the center of a `k x k` grid.
pub fn make_envelope<T: Real>(k: usize, sigma_e: f64) -> Result<Tensor<T>> {
    if k.is_multiple_of(2) || k == 0 {
        return Err(Error::config(format!("envelope size must be odd, got {k}")));
    }
    if !(sigma_e > 0.0 && sigma_e.is_finite()) {
        return Err(Error::config(format!("envelope sigma must be positive, got {sigma_e}")));
    }
    let c = (k / 2) as f64;
    Ok(Tensor::from_fn(&[k, k], |i| {
        let (y, x) = (i[0] as f64 - c, i[1] as f64 - c);
        T::from_f64((-(x * x + y * y) / (2.0 * sigma_e * sigma_e)).exp())
    }))
}

pub fn default_envelope_sigma(k: usize) -> f64 {
    k as f64 / 4.0
}

/// How the real filters relate to the imaginary ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tying {
    /// `W_i = U ⊙ E`, `W_r = rotate_quarter(W_i)`.
    Perpendicular,
    /// Both parts were loaded from a fixed bank and never change.
    Fixed,
}

#[derive(Debug, Clone)]
pub struct ComplexConvLayer<T: Real> {
    pub free: Param<T>,
    envelope: Tensor<T>,
    imag: Tensor<T>,
    real: Tensor<T>,
    spec: ConvSpec,
    pub reg_weight: f64,
    tying: Tying,
}

impl<T: Real> ComplexConvLayer<T> {
    /// Random `U ~ Uniform[-a, a]` with `a = 1 / sqrt(C k²)`.
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        filters: usize,
        k: usize,
        sigma_e: f64,
        reg_weight: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let envelope = make_envelope(k, sigma_e)?;
        let a = 1.0 / ((in_channels * k * k) as f64).sqrt();
        let u = Tensor::from_fn(&[filters, in_channels, k, k], |_| T::from_f64(rng.gen_range(-a..=a)));
        Self::from_free(u, envelope, reg_weight)
    }

    /// Builds a tied layer from explicit free weights and envelope.
    pub fn from_free(free: Tensor<T>, envelope: Tensor<T>, reg_weight: f64) -> Result<Self> {
        free.expect_ndim(4, "complex layer weights")?;
        let s = free.shape().to_vec();
        if s[2] != s[3] {
            return Err(Error::config(format!("complex layer needs square kernels, got {s:?}")));
        }
        envelope.expect_shape(&[s[2], s[3]], "envelope")?;
        if envelope.data().iter().any(|&v| v <= T::zero()) {
            return Err(Error::config("envelope must be strictly positive"));
        }
        let spec = ConvSpec::same(s[1], s[0], s[2]);
        let mut layer = ComplexConvLayer {
            imag: Tensor::zeros(&s),
            real: Tensor::zeros(&s),
            free: Param::new(free),
            envelope,
            spec,
            reg_weight,
            tying: Tying::Perpendicular,
        };
        layer.sync_tied_weights();
        Ok(layer)
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    pub fn filters(&self) -> usize {
        self.spec.out_channels
    }

    pub fn kernel_size(&self) -> usize {
        self.spec.kernel_h
    }

    pub fn envelope(&self) -> &Tensor<T> {
        &self.envelope
    }

    pub fn imag_weights(&self) -> &Tensor<T> {
        &self.imag
    }

    pub fn real_weights(&self) -> &Tensor<T> {
        &self.real
    }

    pub fn tying(&self) -> Tying {
        self.tying
    }

    pub fn is_trainable(&self) -> bool {
        self.tying == Tying::Perpendicular && self.free.trainable
    }

    /// Recomputes `W_i = U ⊙ E` and `W_r = rotate_quarter(W_i)` per filter slice.
    pub fn sync_tied_weights(&mut self) {
        if self.tying == Tying::Fixed {
            return;
        }
        let k = self.kernel_size();
        let kk = k * k;
        let env = self.envelope.data();
        for ((wi, u), wr) in self
            .imag
            .data_mut()
            .chunks_mut(kk)
            .zip(self.free.value.data().chunks(kk))
            .zip(self.real.data_mut().chunks_mut(kk))
        {
            for ((a, &b), &e) in wi.iter_mut().zip(u).zip(env) {
                *a = b * e;
            }
            rotate_quarter_into(wi, k, wr);
        }
    }

    /// Recomputes only `W_i = U ⊙ E`, leaving `W_r` as it is. Perturbing `U` this way
    /// isolates the trainable path, since `W_r` receives no gradient.
    pub fn refresh_imag(&mut self) {
        if self.tying == Tying::Fixed {
            return;
        }
        let env = self.envelope.data();
        let kk = env.len();
        for (wi, u) in self.imag.data_mut().chunks_mut(kk).zip(self.free.value.data().chunks(kk)) {
            for ((a, &b), &e) in wi.iter_mut().zip(u).zip(env) {
                *a = b * e;
            }
        }
    }

    /// Replaces both parts with a fixed bank and stops all updates to this layer.
    pub fn freeze_to_bank(&mut self, bank: &ComplexFilterBank) -> Result<()> {
        if bank.len() != self.filters() || bank.kernel_size() != self.kernel_size() {
            return Err(Error::config(format!(
                "bank of {} {}x{} kernels does not fit a layer of {} {}x{} filters",
                bank.len(),
                bank.kernel_size(),
                bank.kernel_size(),
                self.filters(),
                self.kernel_size(),
                self.kernel_size()
            )));
        }
        let (re, im) = bank.weights::<T>(self.spec.in_channels);
        self.real = re;
        self.imag = im;
        self.free.trainable = false;
        self.tying = Tying::Fixed;
        Ok(())
    }

    /// Installs explicit fixed filters (used when restoring a frozen layer).
    pub fn set_fixed(&mut self, real: Tensor<T>, imag: Tensor<T>) -> Result<()> {
        real.expect_shape(self.free.value.shape(), "fixed real filters")?;
        imag.expect_shape(self.free.value.shape(), "fixed imaginary filters")?;
        self.real = real;
        self.imag = imag;
        self.free.trainable = false;
        self.tying = Tying::Fixed;
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.push("free", &self.free.value.cast::<f64>());
        c.push("envelope", &self.envelope.cast::<f64>());
        if self.tying == Tying::Fixed {
            c.push("real", &self.real.cast::<f64>());
            c.push("imag", &self.imag.cast::<f64>());
        }
        c.metadata = serde_json::json!({
            "reg_weight": self.reg_weight,
            "spec": self.spec,
            "tying": self.tying,
            "trainable": self.free.trainable,
        });
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let free = c.require::<T>("free")?;
        let envelope = c.require::<T>("envelope")?;
        let reg_weight = c.metadata["reg_weight"].as_f64().unwrap_or(DEFAULT_REG_WEIGHT);
        let mut layer = Self::from_free(free, envelope, reg_weight)?;
        let tying: Tying = serde_json::from_value(c.metadata["tying"].clone())
            .map_err(|e| Error::Format(format!("tying: {e}")))?;
        if tying == Tying::Fixed {
            layer.real = c.require::<T>("real")?;
            layer.imag = c.require::<T>("imag")?;
            layer.tying = Tying::Fixed;
        }
        layer.free.trainable = c.metadata["trainable"].as_bool().unwrap_or(true);
        Ok(layer)
    }
}

/// Real and imaginary filter responses.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexResponse<T: Real> {
    pub real: Tensor<T>,
    pub imag: Tensor<T>,
}

/// Filter responses together with the extracted phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseResponse<T: Real> {
    pub real_resp: Tensor<T>,
    pub imag_resp: Tensor<T>,
    pub phase: Tensor<T>,
}

impl<T: Real> PhaseResponse<T> {
    pub fn from_parts(real_resp: Tensor<T>, imag_resp: Tensor<T>, eps: f64) -> Result<Self> {
        let phase = extract_phase(&real_resp, &imag_resp, eps)?;
        Ok(PhaseResponse {
            real_resp,
            imag_resp,
            phase,
        })
    }
}

/// `real = conv(x, W_r)`, `imag = conv(x, W_i)`.
pub fn complex_conv_forward<T: Real>(input: &Tensor<T>, layer: &ComplexConvLayer<T>) -> Result<ComplexResponse<T>> {
    Ok(ComplexResponse {
        real: conv2d_forward(input, &layer.real, &layer.spec)?,
        imag: conv2d_forward(input, &layer.imag, &layer.spec)?,
    })
}

/// Gradient of the loss w.r.t. the free weights `U` through the imaginary path,
/// plus the input gradient when requested. The real filters are frozen, so no
/// gradient is formed for them.
pub fn complex_conv_backward<T: Real>(
    grad: &ComplexResponse<T>,
    input: &Tensor<T>,
    layer: &ComplexConvLayer<T>,
    want_input: bool,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    let (gx_imag, gw_imag) = conv2d_backward_sel(
        &grad.imag,
        input,
        &layer.imag,
        &layer.spec,
        ConvGrads {
            input: want_input,
            weights: true,
        },
    )?;
    let mut gu = gw_imag.expect("requested");
    let kk = layer.kernel_size() * layer.kernel_size();
    for chunk in gu.data_mut().chunks_mut(kk) {
        for (g, &e) in chunk.iter_mut().zip(layer.envelope.data()) {
            *g *= e;
        }
    }
    let gx = if want_input {
        let (gx_real, _) = conv2d_backward_sel(
            &grad.real,
            input,
            &layer.real,
            &layer.spec,
            ConvGrads {
                input: true,
                weights: false,
            },
        )?;
        let mut gx = gx_imag.expect("requested");
        gx.axpy(T::one(), &gx_real.expect("requested"))?;
        Some(gx)
    } else {
        None
    };
    Ok((gu, gx))
}

/// ReLU applied to the real and imaginary maps independently.
pub fn crelu<T: Real>(real: &Tensor<T>, imag: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    real.expect_shape(imag.shape(), "crelu")?;
    Ok((relu(real), relu(imag)))
}

pub fn crelu_backward<T: Real>(
    grad_real: &Tensor<T>,
    grad_imag: &Tensor<T>,
    real: &Tensor<T>,
    imag: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    use crate::numerics::layers::relu_backward;
    Ok((relu_backward(grad_real, real)?, relu_backward(grad_imag, imag)?))
}

#[inline]
fn stabilized<T: Real>(re: T, eps: T) -> T {
    if re >= T::zero() {
        re + eps
    } else {
        re - eps
    }
}

/// `atan(imag / (real + eps·sign⁺(real)))`, with `sign⁺(0) = +1`. Values lie in
/// `(-π/2, π/2)` and are finite everywhere.
pub fn extract_phase<T: Real>(real: &Tensor<T>, imag: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    if !(eps > 0.0) {
        return Err(Error::config(format!("phase epsilon must be positive, got {eps}")));
    }
    let e: T = r(eps);
    real.zip_map(imag, |re, im| (im / stabilized(re, e)).atan())
}

/// Returns `(∂L/∂real, ∂L/∂imag)` given `∂L/∂phase`.
pub fn extract_phase_backward<T: Real>(
    grad: &Tensor<T>,
    real: &Tensor<T>,
    imag: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    real.expect_shape(imag.shape(), "extract_phase_backward")?;
    grad.expect_shape(real.shape(), "extract_phase_backward")?;
    let e: T = r(eps);
    let mut gr = Tensor::zeros(real.shape());
    let mut gi = Tensor::zeros(real.shape());
    for (((g, (&re, &im)), a), b) in grad
        .data()
        .iter()
        .zip(real.data().iter().zip(imag.data()))
        .zip(gr.data_mut())
        .zip(gi.data_mut())
    {
        let d = stabilized(re, e);
        let denom = d * d + im * im;
        *a = -*g * im / denom;
        *b = *g * d / denom;
    }
    Ok((gr, gi))
}

/// Spectral spread of one `k x k` filter: magnitude-weighted mean distance of the
/// half-plane spectrum from its center of mass. Also returns the quantities the
/// gradient needs.
struct Spread {
    value: f64,
    spectrum: Vec<Complex64>,
    mags: Vec<f64>,
    /// ∂value/∂m_b
    dmag: Vec<f64>,
}

fn spectral_spread_full(w: &[f64], plan: &Rfft2Plan) -> Spread {
    let spectrum = plan.forward(w);
    let mags: Vec<f64> = spectrum.iter().map(|c| c.norm()).collect();
    let mass: f64 = mags.iter().sum();
    let nb = mags.len();
    if mass <= f64::MIN_POSITIVE {
        return Spread {
            value: 0.0,
            spectrum,
            mags,
            dmag: vec![0.0; nb],
        };
    }
    let bins = plan.bins();
    let (mut cy, mut cx) = (0.0, 0.0);
    for (&m, &(u, v)) in mags.iter().zip(bins) {
        cy += m * u as f64;
        cx += m * v as f64;
    }
    cy /= mass;
    cx /= mass;
    let dist: Vec<f64> = bins
        .iter()
        .map(|&(u, v)| (u as f64 - cy).hypot(v as f64 - cx))
        .collect();
    let weighted: f64 = mags.iter().zip(&dist).map(|(m, d)| m * d).sum();
    let value = weighted / mass;

    // G = Σ_j m_j (p_j - c) / d_j
    let (mut gy, mut gx) = (0.0, 0.0);
    for ((&m, &d), &(u, v)) in mags.iter().zip(&dist).zip(bins) {
        if d > 0.0 {
            gy += m * (u as f64 - cy) / d;
            gx += m * (v as f64 - cx) / d;
        }
    }
    let dmag = dist
        .iter()
        .zip(bins)
        .map(|(&d, &(u, v))| {
            let dweighted = d - (gy * (u as f64 - cy) + gx * (v as f64 - cx)) / mass;
            dweighted / mass - weighted / (mass * mass)
        })
        .collect();
    Spread {
        value,
        spectrum,
        mags,
        dmag,
    }
}

/// Spread of a single square filter slice (row-major `k x k`).
pub fn spectral_spread(w: &[f64], k: usize) -> Result<f64> {
    if w.len() != k * k {
        return Err(Error::shape(format!("slice of {} values is not {k}x{k}", w.len())));
    }
    Ok(spectral_spread_full(w, &Rfft2Plan::new(k)?).value)
}

fn check_reg_shapes<T: Real>(free: &Tensor<T>, envelope: &Tensor<T>) -> Result<usize> {
    free.expect_ndim(4, "regularizer weights")?;
    let s = free.shape();
    if s[2] != s[3] {
        return Err(Error::shape(format!("regularizer needs square slices, got {s:?}")));
    }
    envelope.expect_shape(&[s[2], s[3]], "regularizer envelope")?;
    Ok(s[2])
}

/// Mean spectral spread over every `(filter, channel)` slice of `U ⊙ E`.
pub fn gabor_regularizer<T: Real>(free: &Tensor<T>, envelope: &Tensor<T>) -> Result<T> {
    let k = check_reg_shapes(free, envelope)?;
    let plan = Rfft2Plan::new(k)?;
    let kk = k * k;
    let slices = free.len() / kk;
    let mut total = 0.0;
    let mut w = vec![0.0; kk];
    for u in free.data().chunks(kk) {
        for ((dst, &a), &e) in w.iter_mut().zip(u).zip(envelope.data()) {
            *dst = a.to_f64() * e.to_f64();
        }
        total += spectral_spread_full(&w, &plan).value;
    }
    Ok(T::from_f64(total / slices as f64))
}

/// Exact gradient of [`gabor_regularizer`] w.r.t. `U`.
///
/// Chains through the envelope product, the DFT magnitudes, the mass normalization
/// and the center of mass. Bins with zero magnitude take a zero subgradient.
pub fn regularizer_gradient<T: Real>(free: &Tensor<T>, envelope: &Tensor<T>) -> Result<Tensor<T>> {
    let k = check_reg_shapes(free, envelope)?;
    let plan = Rfft2Plan::new(k)?;
    let kk = k * k;
    let slices = free.len() / kk;
    let mut grad = Tensor::zeros(free.shape());
    let mut w = vec![0.0; kk];
    for (u, g) in free.data().chunks(kk).zip(grad.data_mut().chunks_mut(kk)) {
        for ((dst, &a), &e) in w.iter_mut().zip(u).zip(envelope.data()) {
            *dst = a.to_f64() * e.to_f64();
        }
        let s = spectral_spread_full(&w, &plan);
        // ∂m_b/∂w = Re(Ŵ_b e^{+iω_b·x}) / m_b
        let coeffs: Vec<Complex64> = s
            .spectrum
            .iter()
            .zip(&s.mags)
            .zip(&s.dmag)
            .map(|((&c, &m), &a)| if m > 0.0 { c * (a / m) } else { Complex64::new(0.0, 0.0) })
            .collect();
        let gw = plan.adjoint_real(&coeffs);
        for ((dst, gv), &e) in g.iter_mut().zip(gw).zip(envelope.data()) {
            *dst = T::from_f64(gv * e.to_f64() / slices as f64);
        }
    }
    Ok(grad)
}

/// Share of spectral energy (`Σ m²`) held by the strongest half-plane bins.
pub fn top_bin_energy_fraction(w: &[f64], k: usize, top: usize) -> Result<f64> {
    let plan = Rfft2Plan::new(k)?;
    if w.len() != k * k {
        return Err(Error::shape("slice size mismatch"));
    }
    let mut energy: Vec<f64> = plan.forward(w).iter().map(|c| c.norm_sqr()).collect();
    let total: f64 = energy.iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    energy.sort_by(|a, b| b.total_cmp(a));
    Ok(energy.iter().take(top).sum::<f64>() / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn envelope_shape_and_values() {
        let e = make_envelope::<f64>(7, default_envelope_sigma(7)).unwrap();
        assert_eq!(e.get(&[3, 3]), 1.0);
        for y in 0..7 {
            for x in 0..7 {
                assert_eq!(e.get(&[y, x]), e.get(&[6 - y, 6 - x]));
                assert_eq!(e.get(&[y, x]), e.get(&[x, y]));
            }
        }
        let corner = (-9.0f64 * 16.0 / 49.0).exp();
        assert!((e.get(&[0, 0]) - corner).abs() < 1e-15);
        assert!((corner - 0.0529).abs() < 1e-4);
        assert!(make_envelope::<f64>(6, 1.0).is_err());
        assert!(make_envelope::<f64>(7, 0.0).is_err());
    }

    #[test]
    fn phase_examples() {
        let p = |re: f64, im: f64| {
            extract_phase(
                &Tensor::from_vec(&[1], vec![re]).unwrap(),
                &Tensor::from_vec(&[1], vec![im]).unwrap(),
                DEFAULT_PHASE_EPS,
            )
            .unwrap()
            .data()[0]
        };
        assert_eq!(p(1.0, 0.0), 0.0);
        assert!((p(1.0, 1.0) - PI / 4.0).abs() < 1e-7);
        let v = p(0.0, 1.0);
        assert!(v < PI / 2.0 && PI / 2.0 - v < 1e-7);
        assert_eq!(p(0.0, 0.0), 0.0);
        assert!(p(-1e-30, 0.0).is_finite());
    }

    #[test]
    fn crelu_examples() {
        let re = Tensor::<f64>::from_vec(&[2], vec![-1.0, 3.0]).unwrap();
        let im = Tensor::<f64>::from_vec(&[2], vec![2.0, 4.0]).unwrap();
        let (a, b) = crelu(&re, &im).unwrap();
        assert_eq!(a.data(), &[0.0, 3.0]);
        assert_eq!(b.data(), &[2.0, 4.0]);
    }

    #[test]
    fn single_tone_has_zero_spread() {
        let k = 7;
        let w: Vec<f64> = (0..k * k)
            .map(|i| {
                let (y, x) = ((i / k) as f64, (i % k) as f64);
                (2.0 * PI * (x * 2.0 + y * 1.0) / k as f64).sin()
            })
            .collect();
        assert!(spectral_spread(&w, k).unwrap().abs() < 1e-9);
    }

    #[test]
    fn two_equal_bins_spread_is_half_distance() {
        // cos tones at (0, 1) and (2, 3) with equal amplitude.
        let k = 8;
        let w: Vec<f64> = (0..k * k)
            .map(|i| {
                let (y, x) = ((i / k) as f64, (i % k) as f64);
                let t = 2.0 * PI / k as f64;
                (t * x).cos() + (t * (2.0 * y + 3.0 * x)).cos()
            })
            .collect();
        let expect = (4.0f64 + 4.0).sqrt() / 2.0;
        assert!((spectral_spread(&w, k).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn zero_weights_have_zero_regularizer_and_gradient() {
        let u = Tensor::<f64>::zeros(&[2, 1, 7, 7]);
        let e = make_envelope(7, 1.75).unwrap();
        assert_eq!(gabor_regularizer(&u, &e).unwrap(), 0.0);
        assert_eq!(regularizer_gradient(&u, &e).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn gradient_is_odd_in_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = Tensor::<f64>::from_fn(&[2, 2, 7, 7], |_| rng.gen_range(-1.0..1.0));
        let e = make_envelope(7, 1.75).unwrap();
        let g = regularizer_gradient(&u, &e).unwrap();
        let gn = regularizer_gradient(&u.map(|v| -v), &e).unwrap();
        assert!(g.zip_map(&gn, |a, b| a + b).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn spread_is_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = 7;
        let w: Vec<f64> = (0..k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base = spectral_spread(&w, k).unwrap();
        for (dy, dx) in [(1, 0), (0, 3), (5, 2)] {
            let shifted: Vec<f64> = (0..k * k)
                .map(|i| {
                    let (y, x) = (i / k, i % k);
                    w[((y + k - dy) % k) * k + (x + k - dx) % k]
                })
                .collect();
            assert!((spectral_spread(&shifted, k).unwrap() - base).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_sync_is_exact_and_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = ComplexConvLayer::<f32>::new(2, 4, 7, 1.75, 1e-3, &mut rng).unwrap();
        for (i, v) in layer.free.value.data_mut().iter_mut().enumerate() {
            *v += i as f32 * 1e-3;
        }
        layer.sync_tied_weights();
        let snapshot = (layer.real.clone(), layer.imag.clone());
        layer.sync_tied_weights();
        assert_eq!((layer.real.clone(), layer.imag.clone()), snapshot);
        let mut rot = vec![0.0f32; 49];
        for (wi, wr) in layer.imag.data().chunks(49).zip(layer.real.data().chunks(49)) {
            rotate_quarter_into(wi, 7, &mut rot);
            assert!(rot.iter().zip(wr).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn zero_input_gives_zero_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = ComplexConvLayer::<f64>::new(1, 3, 5, 1.25, 0.0, &mut rng).unwrap();
        let out = complex_conv_forward(&Tensor::zeros(&[2, 1, 9, 9]), &layer).unwrap();
        assert_eq!(out.real.max_abs(), 0.0);
        assert_eq!(out.imag.max_abs(), 0.0);
    }

    #[test]
    fn delta_input_reproduces_flipped_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layer = ComplexConvLayer::<f64>::new(1, 2, 5, 1.25, 0.0, &mut rng).unwrap();
        let mut x = Tensor::zeros(&[1, 1, 9, 9]);
        x.set(&[0, 0, 4, 4], 1.0);
        let out = complex_conv_forward(&x, &layer).unwrap();
        for f in 0..2 {
            for i in 0..5 {
                for j in 0..5 {
                    // Cross-correlation: output at center - offset sees the kernel at offset.
                    let resp = out.imag.get(&[0, f, 4 + 2 - i, 4 + 2 - j]);
                    assert_eq!(resp, layer.imag_weights().get(&[f, 0, i, j]));
                }
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = ComplexConvLayer::<f32>::new(1, 3, 7, 1.75, 0.01, &mut rng).unwrap();
        let c = Container::from_bytes(&layer.to_container().to_bytes().unwrap()).unwrap();
        let back = ComplexConvLayer::<f32>::from_container(&c).unwrap();
        assert_eq!(back.free.value, layer.free.value);
        assert_eq!(back.real_weights(), layer.real_weights());
        assert_eq!(back.reg_weight, 0.01);
    }
}
