//! Dense numeric building blocks: convolution, layers, FFT and the optimizer.

pub mod conv;
pub mod fft;
pub mod layers;
pub mod optim;

pub use conv::{conv2d_backward, conv2d_forward, ConvSpec};
pub use fft::{rfft2, HalfSpectrum, Rfft2Plan};
pub use layers::{
    batch_norm_forward, dropout, fully_connected, fully_connected_backward, max_pool, relu, relu_backward,
    softmax_cross_entropy, BatchNorm,
};
pub use optim::{sgd_momentum_step, LrSchedule, Param, SgdMomentumState};
