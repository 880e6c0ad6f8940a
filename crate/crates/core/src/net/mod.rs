//! The phase-stream classifier: a complex (or plain) convolutional front-end followed
//! by a small convolutional trunk, with hand-chained backward passes.

mod data;
mod train;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::gabor::ComplexFilterBank;
use crate::numerics::conv::{add_bias, bias_grad, conv2d_backward_sel, conv2d_forward, ConvGrads, ConvSpec};
use crate::numerics::layers::{
    dropout, fully_connected, fully_connected_backward, max_pool, max_pool_backward, relu, relu_backward, BatchNorm,
    BnCache,
};
use crate::numerics::optim::{Param, SgdMomentumState};
use crate::phase::{
    complex_conv_backward, complex_conv_forward, crelu, crelu_backward, default_envelope_sigma, extract_phase,
    extract_phase_backward, gabor_regularizer, regularizer_gradient, ComplexConvLayer, ComplexResponse,
    Tying, DEFAULT_PHASE_EPS, DEFAULT_REG_WEIGHT,
};
use crate::tensor::{r, Real, Tensor};

pub use data::{Batch, BatchSource, ClipMaps, InputKind, MotionDataset};
pub use train::{
    evaluate, train, train_step, ClassAccuracy, METRICS_HEADER, EvalReport, StepMetrics, TrainConfig, TrainReport,
};

/// Initial batch-norm shift of the real responses. Keeping the arctangent's
/// denominator away from zero at the start avoids sign-flip discontinuities in the
/// phase map; the shift is trainable afterwards.
pub const REAL_SHIFT_INIT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrontEndKind {
    Complex,
    Plain,
}

fn default_reg() -> f64 {
    DEFAULT_REG_WEIGHT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontEndSpec {
    pub filters: usize,
    pub kernel: usize,
    /// Envelope standard deviation in pixels; `k / 4` when absent.
    #[serde(default)]
    pub envelope_sigma: Option<f64>,
    #[serde(default = "default_reg")]
    pub reg_weight: f64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        /// Defaults to `kernel / 2`.
        #[serde(default)]
        padding: Option<usize>,
    },
    Relu,
    #[serde(rename = "maxpool")]
    MaxPool { size: usize },
    Fc { units: usize },
    Dropout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub front_end: FrontEndKind,
    /// Channels of one motion map (1 for dGray/dPhase, 3 for dRGB).
    pub input_channels: usize,
    pub stack_depth: usize,
    /// Side of the square network input (the crop size).
    pub input_size: usize,
    pub front: FrontEndSpec,
    /// Layers between the front-end and the final classifier.
    pub trunk: Vec<LayerSpec>,
    pub n_classes: usize,
}

impl NetworkConfig {
    /// Desk-scale default: 96 complex filters and a two-conv trunk on 64x64 inputs.
    pub fn desk(n_classes: usize) -> Self {
        NetworkConfig {
            front_end: FrontEndKind::Complex,
            input_channels: 1,
            stack_depth: 1,
            input_size: 64,
            front: FrontEndSpec {
                filters: 96,
                kernel: 7,
                envelope_sigma: None,
                reg_weight: DEFAULT_REG_WEIGHT,
            },
            trunk: vec![
                LayerSpec::Conv {
                    filters: 64,
                    kernel: 5,
                    stride: 2,
                    padding: None,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Conv {
                    filters: 128,
                    kernel: 3,
                    stride: 1,
                    padding: None,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Fc { units: 256 },
                LayerSpec::Relu,
                LayerSpec::Dropout,
            ],
            n_classes,
        }
    }

    /// Small network for single-core runs on 16x16 crops.
    pub fn mini(n_classes: usize) -> Self {
        NetworkConfig {
            input_size: 16,
            front: FrontEndSpec {
                filters: 8,
                kernel: 7,
                envelope_sigma: None,
                reg_weight: DEFAULT_REG_WEIGHT,
            },
            trunk: vec![
                LayerSpec::Conv {
                    filters: 16,
                    kernel: 3,
                    stride: 1,
                    padding: None,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Conv {
                    filters: 32,
                    kernel: 3,
                    stride: 1,
                    padding: None,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Fc { units: 64 },
                LayerSpec::Relu,
                LayerSpec::Dropout,
            ],
            ..Self::desk(n_classes)
        }
    }

    /// The VGG-M temporal-stream layer list with a complex first layer. Expressible,
    /// not exercised at scale.
    pub fn vgg_m(n_classes: usize) -> Self {
        let conv = |filters, kernel, stride| LayerSpec::Conv {
            filters,
            kernel,
            stride,
            padding: None,
        };
        NetworkConfig {
            input_size: 224,
            front: FrontEndSpec {
                filters: 96,
                kernel: 7,
                envelope_sigma: None,
                reg_weight: DEFAULT_REG_WEIGHT,
            },
            trunk: vec![
                LayerSpec::MaxPool { size: 2 },
                conv(256, 5, 2),
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                conv(512, 3, 1),
                LayerSpec::Relu,
                conv(512, 3, 1),
                LayerSpec::Relu,
                conv(512, 3, 1),
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Fc { units: 4096 },
                LayerSpec::Relu,
                LayerSpec::Dropout,
                LayerSpec::Fc { units: 2048 },
                LayerSpec::Relu,
                LayerSpec::Dropout,
            ],
            ..Self::desk(n_classes)
        }
    }

    pub fn in_channels(&self) -> usize {
        self.input_channels * self.stack_depth
    }

    /// Walks the layer list and returns the shape after each layer, starting with the
    /// front-end output; errors on inconsistent plumbing.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_channels == 0 || self.stack_depth == 0 || self.input_size == 0 || self.n_classes == 0 {
            return Err(Error::config("channels, stack depth, input size and classes must be positive"));
        }
        if self.front.filters == 0 || self.front.kernel == 0 {
            return Err(Error::config("front-end needs at least one filter"));
        }
        if self.front_end == FrontEndKind::Complex && self.front.kernel.is_multiple_of(2) {
            return Err(Error::config("complex front-end needs an odd square kernel"));
        }
        if self.front.reg_weight < 0.0 {
            return Err(Error::config("regularizer weight must be non-negative"));
        }
        let mut shapes = vec![vec![self.front.filters, self.input_size, self.input_size]];
        let mut cur = shapes[0].clone();
        for (i, l) in self.trunk.iter().enumerate() {
            cur = match (l, cur.len()) {
                (LayerSpec::Conv { filters, kernel, stride, padding }, 3) => {
                    let spec = ConvSpec::same(cur[0], *filters, *kernel)
                        .with_stride(*stride)
                        .with_padding(padding.unwrap_or(kernel / 2));
                    let (h, w) = spec
                        .output_hw(cur[1], cur[2])
                        .map_err(|e| Error::config(format!("trunk layer {i}: {e}")))?;
                    vec![*filters, h, w]
                }
                (LayerSpec::Conv { .. }, _) => {
                    return Err(Error::config(format!("trunk layer {i}: convolution after a dense layer")))
                }
                (LayerSpec::MaxPool { size }, 3) => {
                    if *size == 0 || cur[1] < *size || cur[2] < *size {
                        return Err(Error::config(format!(
                            "trunk layer {i}: pool {size} on {}x{}",
                            cur[1], cur[2]
                        )));
                    }
                    vec![cur[0], cur[1] / size, cur[2] / size]
                }
                (LayerSpec::MaxPool { .. }, _) => {
                    return Err(Error::config(format!("trunk layer {i}: pooling after a dense layer")))
                }
                (LayerSpec::Fc { units }, _) if *units > 0 => vec![*units],
                (LayerSpec::Fc { .. }, _) => return Err(Error::config(format!("trunk layer {i}: empty dense layer"))),
                (LayerSpec::Relu | LayerSpec::Dropout, _) => cur.clone(),
            };
            shapes.push(cur.clone());
        }
        shapes.push(vec![self.n_classes]);
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.layer_shapes().map(|_| ())
    }
}

/// Batch norm with trainable scale and shift.
#[derive(Debug, Clone)]
pub struct BnLayer<T: Real> {
    pub state: BatchNorm<T>,
    pub gamma: Param<T>,
    pub beta: Param<T>,
}

impl<T: Real> BnLayer<T> {
    fn new(channels: usize) -> Self {
        BnLayer {
            state: BatchNorm::new(channels),
            gamma: Param::new(Tensor::full(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
        }
    }

    fn forward(&mut self, x: &Tensor<T>, training: bool) -> Result<(Tensor<T>, Option<BnCache<T>>)> {
        self.state.gamma.copy_from_slice(self.gamma.value.data());
        self.state.beta.copy_from_slice(self.beta.value.data());
        self.state.forward(x, training)
    }

    fn backward(&mut self, grad: &Tensor<T>, cache: &BnCache<T>) -> Result<Tensor<T>> {
        let (dx, dg, db) = self.state.backward(grad, cache)?;
        for (a, b) in self.gamma.grad.data_mut().iter_mut().zip(dg) {
            *a += b;
        }
        for (a, b) in self.beta.grad.data_mut().iter_mut().zip(db) {
            *a += b;
        }
        Ok(dx)
    }
}

#[derive(Debug, Clone)]
pub enum FrontEnd<T: Real> {
    Complex {
        layer: ComplexConvLayer<T>,
        bn_real: BnLayer<T>,
        bn_imag: BnLayer<T>,
    },
    Plain {
        weights: Param<T>,
        spec: ConvSpec,
        bn: BnLayer<T>,
    },
}

#[derive(Debug, Clone)]
pub enum Layer<T: Real> {
    Conv {
        spec: ConvSpec,
        weights: Param<T>,
        bias: Param<T>,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    Fc {
        weights: Param<T>,
        bias: Param<T>,
    },
    Dropout,
}

impl<T: Real> Layer<T> {
    fn name(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::Fc { .. } => "fc",
            Layer::Dropout => "dropout",
        }
    }
}

/// Values saved by a training-mode forward pass for the backward pass.
pub(crate) enum FrontCache<T: Real> {
    Complex {
        input: Tensor<T>,
        pre: ComplexResponse<T>,
        bn_real: BnCache<T>,
        bn_imag: BnCache<T>,
        normed: ComplexResponse<T>,
    },
    Plain {
        input: Tensor<T>,
        pre: Tensor<T>,
        bn: BnCache<T>,
    },
}

pub(crate) enum LayerCache<T: Real> {
    Conv { input: Tensor<T> },
    Relu { input: Tensor<T> },
    MaxPool { argmax: Vec<usize>, shape: Vec<usize> },
    Fc { input: Tensor<T>, shape: Vec<usize> },
    Dropout { mask: Option<Tensor<T>> },
}

pub(crate) struct Tape<T: Real> {
    front: FrontCache<T>,
    layers: Vec<LayerCache<T>>,
}

/// How a forward pass treats batch norm and dropout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Train { dropout: f64 },
    Eval,
}

#[derive(Debug, Clone)]
pub struct Model<T: Real = f32> {
    pub config: NetworkConfig,
    pub front: FrontEnd<T>,
    pub trunk: Vec<Layer<T>>,
    pub classifier: Layer<T>,
    pub iteration: u64,
    /// Momentum buffers, created on the first training step.
    pub optimizer: Option<SgdMomentumState<T>>,
}

fn he_init<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| r(std * rng.sample::<f64, _>(StandardNormal)))
}

/// Builds a model from a validated configuration with weights drawn from `seed`.
pub fn build_model<T: Real>(config: &NetworkConfig, seed: u64) -> Result<Model<T>> {
    let shapes = config.layer_shapes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = config.in_channels();
    let k = config.front.kernel;
    let f = config.front.filters;
    let front = match config.front_end {
        FrontEndKind::Complex => {
            let sigma = config.front.envelope_sigma.unwrap_or_else(|| default_envelope_sigma(k));
            let mut bn_real = BnLayer::new(f);
            bn_real.beta.value.fill(r(REAL_SHIFT_INIT));
            FrontEnd::Complex {
                layer: ComplexConvLayer::new(c, f, k, sigma, config.front.reg_weight, &mut rng)?,
                bn_real,
                bn_imag: BnLayer::new(f),
            }
        }
        FrontEndKind::Plain => {
            let spec = ConvSpec::same(c, f, k).with_padding(k / 2);
            FrontEnd::Plain {
                weights: Param::new(he_init(&spec.weight_shape(), c * k * k, &mut rng)),
                spec,
                bn: BnLayer::new(f),
            }
        }
    };
    let mut trunk = Vec::with_capacity(config.trunk.len());
    for (spec, input) in config.trunk.iter().zip(&shapes) {
        trunk.push(match spec {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let cs = ConvSpec::same(input[0], *filters, *kernel)
                    .with_stride(*stride)
                    .with_padding(padding.unwrap_or(kernel / 2));
                Layer::Conv {
                    weights: Param::new(he_init(&cs.weight_shape(), input[0] * kernel * kernel, &mut rng)),
                    bias: Param::new(Tensor::zeros(&[*filters])),
                    spec: cs,
                }
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool { size } => Layer::MaxPool { size: *size },
            LayerSpec::Fc { units } => {
                let din: usize = input.iter().product();
                Layer::Fc {
                    weights: Param::new(he_init(&[*units, din], din, &mut rng)),
                    bias: Param::new(Tensor::zeros(&[*units])),
                }
            }
            LayerSpec::Dropout => Layer::Dropout,
        });
    }
    let din: usize = shapes[shapes.len() - 2].iter().product();
    let classifier = Layer::Fc {
        weights: Param::new(he_init(&[config.n_classes, din], din, &mut rng)),
        bias: Param::new(Tensor::zeros(&[config.n_classes])),
    };
    Ok(Model {
        config: config.clone(),
        front,
        trunk,
        classifier,
        iteration: 0,
        optimizer: None,
    })
}

fn layer_forward<T: Real, R: Rng + ?Sized>(
    layer: &Layer<T>,
    x: Tensor<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<LayerCache<T>>)> {
    let keep = matches!(mode, Mode::Train { .. });
    Ok(match layer {
        Layer::Conv { spec, weights, bias } => {
            let mut y = conv2d_forward(&x, &weights.value, spec)?;
            add_bias(&mut y, bias.value.data());
            (y, keep.then_some(LayerCache::Conv { input: x }))
        }
        Layer::Relu => (relu(&x), keep.then_some(LayerCache::Relu { input: x })),
        Layer::MaxPool { size } => {
            let shape = x.shape().to_vec();
            let (y, argmax) = max_pool(&x, *size)?;
            (y, keep.then_some(LayerCache::MaxPool { argmax, shape }))
        }
        Layer::Fc { weights, bias } => {
            let shape = x.shape().to_vec();
            let n = shape[0];
            let flat = x.reshape(&[n, shape[1..].iter().product()])?;
            let y = fully_connected(&flat, &weights.value, bias.value.data())?;
            (y, keep.then_some(LayerCache::Fc { input: flat, shape }))
        }
        Layer::Dropout => match mode {
            Mode::Train { dropout: rate } => {
                let (y, mask) = dropout(&x, rate, rng, true)?;
                (y, Some(LayerCache::Dropout { mask }))
            }
            Mode::Eval => (x, None),
        },
    })
}

fn layer_backward<T: Real>(layer: &mut Layer<T>, grad: Tensor<T>, cache: LayerCache<T>) -> Result<Tensor<T>> {
    Ok(match (layer, cache) {
        (Layer::Conv { spec, weights, bias }, LayerCache::Conv { input }) => {
            let (gx, gw) = conv2d_backward_sel(&grad, &input, &weights.value, spec, ConvGrads::BOTH)?;
            weights.grad.axpy(T::one(), &gw.expect("requested"))?;
            for (a, b) in bias.grad.data_mut().iter_mut().zip(bias_grad(&grad)) {
                *a += b;
            }
            gx.expect("requested")
        }
        (Layer::Relu, LayerCache::Relu { input }) => relu_backward(&grad, &input)?,
        (Layer::MaxPool { .. }, LayerCache::MaxPool { argmax, shape }) => max_pool_backward(&grad, &argmax, &shape),
        (Layer::Fc { weights, bias }, LayerCache::Fc { input, shape }) => {
            let (gx, gw, gb) = fully_connected_backward(&grad, &input, &weights.value)?;
            weights.grad.axpy(T::one(), &gw)?;
            for (a, b) in bias.grad.data_mut().iter_mut().zip(gb) {
                *a += b;
            }
            gx.reshape(&shape)?
        }
        (Layer::Dropout, LayerCache::Dropout { mask }) => match mask {
            Some(m) => grad.zip_map(&m, |g, k| g * k)?,
            None => grad,
        },
        (l, _) => return Err(Error::shape(format!("cache does not match layer {}", l.name()))),
    })
}

impl<T: Real> Model<T> {
    /// Number of stored parameters (derived real/imaginary filters are not counted).
    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Every parameter in a fixed order, frozen ones included.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = Vec::new();
        match &self.front {
            FrontEnd::Complex { layer, bn_real, bn_imag } => {
                v.extend([&layer.free, &bn_real.gamma, &bn_real.beta, &bn_imag.gamma, &bn_imag.beta]);
            }
            FrontEnd::Plain { weights, bn, .. } => v.extend([weights, &bn.gamma, &bn.beta]),
        }
        for l in self.trunk.iter().chain(std::iter::once(&self.classifier)) {
            if let Layer::Conv { weights, bias, .. } | Layer::Fc { weights, bias } = l {
                v.extend([weights, bias]);
            }
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = Vec::new();
        match &mut self.front {
            FrontEnd::Complex { layer, bn_real, bn_imag } => {
                v.push(&mut layer.free);
                v.extend([&mut bn_real.gamma, &mut bn_real.beta, &mut bn_imag.gamma, &mut bn_imag.beta]);
            }
            FrontEnd::Plain { weights, bn, .. } => v.extend([weights, &mut bn.gamma, &mut bn.beta]),
        }
        for l in self.trunk.iter_mut().chain(std::iter::once(&mut self.classifier)) {
            if let Layer::Conv { weights, bias, .. } | Layer::Fc { weights, bias } = l {
                v.extend([weights, bias]);
            }
        }
        v
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn complex_layer(&self) -> Option<&ComplexConvLayer<T>> {
        match &self.front {
            FrontEnd::Complex { layer, .. } => Some(layer),
            FrontEnd::Plain { .. } => None,
        }
    }

    /// Current value of the spectral regularizer, when the front-end is a learned
    /// complex layer.
    pub fn regularizer(&self) -> Result<Option<T>> {
        match self.complex_layer() {
            Some(l) if l.tying() == Tying::Perpendicular => Ok(Some(gabor_regularizer(&l.free.value, l.envelope())?)),
            _ => Ok(None),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        x.expect_ndim(4, "network input")?;
        let s = x.shape();
        let c = &self.config;
        if s[1] != c.in_channels() || s[2] != c.input_size || s[3] != c.input_size {
            return Err(Error::shape(format!(
                "network expects [N, {}, {}, {}], got {s:?}",
                c.in_channels(),
                c.input_size,
                c.input_size
            )));
        }
        Ok(())
    }

    pub(crate) fn forward_tape<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, Option<Tape<T>>)> {
        self.check_input(x)?;
        let training = matches!(mode, Mode::Train { .. });
        let (mut h, front_cache) = match &mut self.front {
            FrontEnd::Complex { layer, bn_real, bn_imag } => {
                let pre = complex_conv_forward(x, layer)?;
                let (cr, ci) = crelu(&pre.real, &pre.imag)?;
                let (nr, cache_r) = bn_real.forward(&cr, training)?;
                let (ni, cache_i) = bn_imag.forward(&ci, training)?;
                let phase = extract_phase(&nr, &ni, DEFAULT_PHASE_EPS)?;
                let cache = match (cache_r, cache_i) {
                    (Some(bn_real), Some(bn_imag)) => Some(FrontCache::Complex {
                        input: x.clone(),
                        pre,
                        bn_real,
                        bn_imag,
                        normed: ComplexResponse { real: nr, imag: ni },
                    }),
                    _ => None,
                };
                (phase, cache)
            }
            FrontEnd::Plain { weights, spec, bn } => {
                let pre = conv2d_forward(x, &weights.value, spec)?;
                let (y, cache) = bn.forward(&relu(&pre), training)?;
                (
                    y,
                    cache.map(|bn| FrontCache::Plain {
                        input: x.clone(),
                        pre,
                        bn,
                    }),
                )
            }
        };
        let mut caches = Vec::with_capacity(self.trunk.len() + 1);
        for layer in self.trunk.iter().chain(std::iter::once(&self.classifier)) {
            let (y, cache) = layer_forward(layer, h, mode, rng)?;
            h = y;
            caches.extend(cache);
        }
        let tape = front_cache.map(|front| Tape { front, layers: caches });
        Ok((h, tape))
    }

    /// Inference-mode logits `[N, n_classes]`.
    pub fn predict(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward_tape(x, Mode::Eval, &mut rng)?.0)
    }

    /// Accumulates parameter gradients given `∂L/∂logits`.
    pub(crate) fn backward(&mut self, grad_logits: Tensor<T>, tape: Tape<T>) -> Result<()> {
        let mut g = grad_logits;
        let mut caches = tape.layers;
        let mut layers: Vec<&mut Layer<T>> = self.trunk.iter_mut().collect();
        layers.push(&mut self.classifier);
        while let Some(layer) = layers.pop() {
            let cache = caches
                .pop()
                .ok_or_else(|| Error::shape("tape shorter than layer list"))?;
            g = layer_backward(layer, g, cache)?;
        }
        match (&mut self.front, tape.front) {
            (
                FrontEnd::Complex { layer, bn_real, bn_imag },
                FrontCache::Complex {
                    input,
                    pre,
                    bn_real: cr,
                    bn_imag: ci,
                    normed,
                },
            ) => {
                let (gr, gi) = extract_phase_backward(&g, &normed.real, &normed.imag, DEFAULT_PHASE_EPS)?;
                let gr = bn_real.backward(&gr, &cr)?;
                let gi = bn_imag.backward(&gi, &ci)?;
                let (gr, gi) = crelu_backward(&gr, &gi, &pre.real, &pre.imag)?;
                if layer.is_trainable() {
                    let grad = ComplexResponse { real: gr, imag: gi };
                    let (gu, _) = complex_conv_backward(&grad, &input, layer, false)?;
                    layer.free.grad.axpy(T::one(), &gu)?;
                }
            }
            (FrontEnd::Plain { weights, spec, bn }, FrontCache::Plain { input, pre, bn: cache }) => {
                let g = bn.backward(&g, &cache)?;
                let g = relu_backward(&g, &pre)?;
                if weights.trainable {
                    let (_, gw) = conv2d_backward_sel(
                        &g,
                        &input,
                        &weights.value,
                        spec,
                        ConvGrads {
                            input: false,
                            weights: true,
                        },
                    )?;
                    weights.grad.axpy(T::one(), &gw.expect("requested"))?;
                }
            }
            _ => return Err(Error::shape("front-end cache does not match the model")),
        }
        Ok(())
    }

    /// Adds `λ ∂R/∂U` to the free-weight gradient and returns `R`.
    pub(crate) fn add_regularizer_grad(&mut self) -> Result<Option<T>> {
        if let FrontEnd::Complex { layer, .. } = &mut self.front {
            if layer.is_trainable() {
                let value = gabor_regularizer(&layer.free.value, layer.envelope())?;
                if layer.reg_weight > 0.0 {
                    let g = regularizer_gradient(&layer.free.value, layer.envelope())?;
                    layer.free.grad.axpy(r(layer.reg_weight), &g)?;
                }
                return Ok(Some(value));
            }
        }
        Ok(None)
    }

    /// Names each stage of a forward pass, for divergence diagnostics.
    pub fn layer_names(&self) -> Vec<String> {
        let mut v = match self.front {
            FrontEnd::Complex { .. } => vec!["front.complex_conv".to_string()],
            FrontEnd::Plain { .. } => vec!["front.conv".to_string()],
        };
        for (i, l) in self.trunk.iter().enumerate() {
            v.push(format!("trunk.{i}.{}", l.name()));
        }
        v.push("classifier".to_string());
        v
    }

    /// First stage whose activations or parameters are non-finite on `x`.
    pub fn locate_non_finite(&mut self, x: &Tensor<T>) -> String {
        let names = self.layer_names();
        for (p, name) in self.params().iter().zip(self.param_names()) {
            if p.value.first_non_finite().is_some() {
                return format!("{name} (parameter)");
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut h = match self.forward_front(x) {
            Ok(h) => h,
            Err(_) => return names[0].clone(),
        };
        if h.first_non_finite().is_some() {
            return names[0].clone();
        }
        for (i, layer) in self.trunk.iter().chain(std::iter::once(&self.classifier)).enumerate() {
            match layer_forward(layer, h, Mode::Eval, &mut rng) {
                Ok((y, _)) if y.first_non_finite().is_none() => h = y,
                _ => return names[i + 1].clone(),
            }
        }
        "loss".to_string()
    }

    fn forward_front(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let saved = self.trunk.clone();
        let classifier = self.classifier.clone();
        self.trunk.clear();
        self.classifier = Layer::Relu;
        let out = self.forward_tape(x, Mode::Eval, &mut rng).map(|o| o.0);
        self.trunk = saved;
        self.classifier = classifier;
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut v: Vec<String> = match &self.front {
            FrontEnd::Complex { .. } => ["front.free", "front.bn_real.gamma", "front.bn_real.beta", "front.bn_imag.gamma", "front.bn_imag.beta"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            FrontEnd::Plain { .. } => ["front.weights", "front.bn.gamma", "front.bn.beta"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        };
        for (i, l) in self.trunk.iter().enumerate() {
            if matches!(l, Layer::Conv { .. } | Layer::Fc { .. }) {
                v.push(format!("trunk.{i}.weights"));
                v.push(format!("trunk.{i}.bias"));
            }
        }
        v.push("classifier.weights".into());
        v.push("classifier.bias".into());
        v
    }

    fn bn_layers(&self) -> Vec<(&'static str, &BnLayer<T>)> {
        match &self.front {
            FrontEnd::Complex { bn_real, bn_imag, .. } => vec![("front.bn_real", bn_real), ("front.bn_imag", bn_imag)],
            FrontEnd::Plain { bn, .. } => vec![("front.bn", bn)],
        }
    }

    /// All parameters, running statistics and the fixed front-end filters.
    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        for (name, p) in self.param_names().iter().zip(self.params()) {
            c.push(name, &p.value);
        }
        for (name, bn) in self.bn_layers() {
            let ch = bn.state.channels();
            c.push(&format!("{name}.running_mean"), &Tensor::from_vec(&[ch], bn.state.running_mean.clone()).expect("len"));
            c.push(&format!("{name}.running_var"), &Tensor::from_vec(&[ch], bn.state.running_var.clone()).expect("len"));
        }
        let mut frozen = false;
        if let Some(l) = self.complex_layer() {
            c.push("front.envelope", l.envelope());
            if l.tying() == Tying::Fixed {
                c.push("front.real", l.real_weights());
                c.push("front.imag", l.imag_weights());
                frozen = true;
            }
        }
        c.metadata = serde_json::json!({
            "config": self.config,
            "iteration": self.iteration,
            "front_frozen": frozen,
        });
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let config: NetworkConfig = serde_json::from_value(c.metadata["config"].clone())?;
        let mut model = build_model::<T>(&config, 0)?;
        model.iteration = c.metadata["iteration"].as_u64().unwrap_or(0);
        let names = model.param_names();
        for (name, p) in names.iter().zip(model.params_mut()) {
            let t = c.require::<T>(name)?;
            t.expect_shape(p.value.shape(), name)?;
            p.value = t;
        }
        let frozen = c.metadata["front_frozen"].as_bool().unwrap_or(false);
        let mut stats = Vec::new();
        for (name, _) in model.bn_layers() {
            stats.push((
                c.require::<T>(&format!("{name}.running_mean"))?,
                c.require::<T>(&format!("{name}.running_var"))?,
            ));
        }
        let bns: Vec<&mut BnLayer<T>> = match &mut model.front {
            FrontEnd::Complex { bn_real, bn_imag, .. } => vec![bn_real, bn_imag],
            FrontEnd::Plain { bn, .. } => vec![bn],
        };
        for (bn, (m, v)) in bns.into_iter().zip(stats) {
            bn.state.running_mean = m.into_vec();
            bn.state.running_var = v.into_vec();
        }
        if let FrontEnd::Complex { layer, .. } = &mut model.front {
            let envelope = c.require::<T>("front.envelope")?;
            let free = layer.free.value.clone();
            *layer = ComplexConvLayer::from_free(free, envelope, config.front.reg_weight)?;
            if frozen {
                let re = c.require::<T>("front.real")?;
                let im = c.require::<T>("front.imag")?;
                layer.set_fixed(re, im)?;
            }
        }
        Ok(model)
    }

    /// Writes the container and a JSON sidecar with the network configuration.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_container().save(path)?;
        let sidecar = path.with_extension("json");
        std::fs::write(sidecar, serde_json::to_string_pretty(&self.config)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

/// Loads a fixed bank into the complex front-end and excludes it from optimization.
pub fn freeze_front_end<T: Real>(mut model: Model<T>, bank: &ComplexFilterBank) -> Result<Model<T>> {
    match &mut model.front {
        FrontEnd::Complex { layer, .. } => layer.freeze_to_bank(bank)?,
        FrontEnd::Plain { .. } => return Err(Error::config("only a complex front-end can hold a filter bank")),
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gabor::{make_bank, BankMode, FilterBankSpec};

    fn tiny_batch(model_input: usize, n: usize) -> Batch<f64> {
        Batch {
            inputs: Tensor::from_fn(&[n, 1, model_input, model_input], |i| {
                ((i[0] * 7 + i[2] * 3 + i[3] * 5) % 11) as f64 / 5.0 - 1.0
            }),
            labels: (0..n).map(|i| i % 4).collect(),
        }
    }

    #[test]
    fn parameter_count_matches_layer_list() {
        let model = build_model::<f32>(&NetworkConfig::mini(4), 0).unwrap();
        let front = 8 * 7 * 7 + 4 * 8;
        let conv1 = 16 * 8 * 9 + 16;
        let conv2 = 32 * 16 * 9 + 32;
        let fc = 64 * 32 * 4 * 4 + 64;
        let cls = 4 * 64 + 4;
        assert_eq!(model.parameter_count(), front + conv1 + conv2 + fc + cls);
        assert_eq!(model.param_names().len(), model.params().len());
    }

    #[test]
    fn zero_input_gives_uniform_logits() {
        for kind in [FrontEndKind::Complex, FrontEndKind::Plain] {
            let mut cfg = NetworkConfig::mini(4);
            cfg.front_end = kind;
            let mut model = build_model::<f64>(&cfg, 1).unwrap();
            let logits = model.predict(&Tensor::zeros(&[2, 1, 16, 16])).unwrap();
            assert!(logits.data().iter().all(|&v| v == 0.0), "{kind:?}");
            let batch = Batch {
                inputs: Tensor::zeros(&[2, 1, 16, 16]),
                labels: vec![0, 3],
            };
            let l = model.loss(&batch, 0.0, 0).unwrap();
            let expected = (4f64).ln() + model.weighted_regularizer().unwrap();
            assert!((l - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut model = build_model::<f64>(&NetworkConfig::mini(4), 2).unwrap();
        let before: Vec<Tensor<f64>> = model.params().iter().map(|p| p.value.clone()).collect();
        let tc = TrainConfig {
            base_lr: 0.0,
            ..TrainConfig::scaled(10)
        };
        train_step(&mut model, &tiny_batch(16, 4), &tc).unwrap();
        for (p, b) in model.params().iter().zip(&before) {
            assert_eq!(&p.value, b);
        }
    }

    #[test]
    fn frozen_front_end_is_bit_identical_after_training() {
        let bank = make_bank(&FilterBankSpec::small(BankMode::Quadrature)).unwrap();
        let mut cfg = NetworkConfig::mini(4);
        cfg.front.filters = bank.len();
        cfg.front.kernel = bank.kernel_size();
        let mut model = freeze_front_end(build_model::<f32>(&cfg, 3).unwrap(), &bank).unwrap();
        let (re, im) = {
            let l = model.complex_layer().unwrap();
            (l.real_weights().clone(), l.imag_weights().clone())
        };
        let tc = TrainConfig::scaled(10);
        let batch = Batch {
            inputs: tiny_batch(16, 4).inputs.cast(),
            labels: vec![0, 1, 2, 3],
        };
        for _ in 0..3 {
            train_step(&mut model, &batch, &tc).unwrap();
        }
        let l = model.complex_layer().unwrap();
        assert_eq!(l.real_weights(), &re);
        assert_eq!(l.imag_weights(), &im);
        assert!(model.regularizer().unwrap().is_none());
    }

    #[test]
    fn plain_front_end_cannot_be_frozen_to_a_bank() {
        let bank = make_bank(&FilterBankSpec::small(BankMode::Quadrature)).unwrap();
        let mut cfg = NetworkConfig::mini(4);
        cfg.front_end = FrontEndKind::Plain;
        assert!(matches!(
            freeze_front_end(build_model::<f32>(&cfg, 0).unwrap(), &bank),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn bad_plumbing_is_a_config_error() {
        let mut cfg = NetworkConfig::mini(4);
        cfg.input_size = 3;
        assert!(matches!(build_model::<f32>(&cfg, 0), Err(Error::Config(_))));
    }
}
