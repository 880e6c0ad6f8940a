//! Learned Eulerian phase-based motion representations.
//!
//! A complex convolution layer whose real filters are quarter-turn rotations of its
//! trainable imaginary filters, followed by CReLU, batch normalization and an
//! arctangent, extracts phase from temporal image derivatives. The crate provides the
//! numeric substrate (convolution, FFT, layers, optimizer), Gabor filter banks, the
//! phase layer and its spectral regularizer, video/derivative input pipelines, a small
//! classifier with hand-chained gradients, desk-scale experiments and slow reference
//! oracles for verification.

pub mod container;
pub mod error;
pub mod experiments;
pub mod gabor;
pub mod motion;
pub mod net;
pub mod numerics;
pub mod oracle;
pub mod phase;
pub mod render;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
