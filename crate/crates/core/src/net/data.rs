//! Turning clips into network batches: per-clip motion maps, temporal sampling,
//! stacking, crops and flips.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gabor::ComplexFilterBank;
use crate::motion::{
    augment, center_crop, stack, temporal_derivative, temporal_phase_derivative, AugmentConfig, DerivativeKind,
    MotionInput, VideoClip,
};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Dgray,
    Drgb,
    Dphase,
    Dgray5,
    Dphase5,
}

impl InputKind {
    pub const ALL: [InputKind; 5] = [
        InputKind::Dgray,
        InputKind::Drgb,
        InputKind::Dphase,
        InputKind::Dgray5,
        InputKind::Dphase5,
    ];

    pub fn stack_depth(self) -> usize {
        match self {
            InputKind::Dgray5 | InputKind::Dphase5 => 5,
            _ => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            InputKind::Dgray => "dGray",
            InputKind::Drgb => "dRGB",
            InputKind::Dphase => "dPhase",
            InputKind::Dgray5 => "5xdGray",
            InputKind::Dphase5 => "5xdPhase",
        }
    }

    pub fn needs_bank(self) -> bool {
        matches!(self, InputKind::Dphase | InputKind::Dphase5)
    }

    /// Channels of one map for clips with `clip_channels` color channels.
    pub fn map_channels(self, clip_channels: usize) -> usize {
        match self {
            InputKind::Drgb => clip_channels,
            _ => 1,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
            .map_err(|_| Error::config(format!("unknown input kind '{s}'")))
    }
}

/// Every temporal map of one clip, full frame size.
#[derive(Debug, Clone)]
pub struct ClipMaps<T: Real> {
    pub maps: Vec<MotionInput<T>>,
    pub label: usize,
}

impl<T: Real> ClipMaps<T> {
    pub fn from_clip(clip: &VideoClip<f32>, kind: InputKind, bank: Option<&ComplexFilterBank>) -> Result<Self> {
        let label = clip
            .label
            .ok_or_else(|| Error::shape("training clips need a label"))?;
        let clip = clip.cast::<T>();
        let maps = match kind {
            InputKind::Dgray | InputKind::Dgray5 => temporal_derivative(&clip, DerivativeKind::Gray)?,
            InputKind::Drgb => temporal_derivative(&clip, DerivativeKind::Rgb)?,
            InputKind::Dphase | InputKind::Dphase5 => {
                let bank = bank.ok_or_else(|| Error::config("phase inputs need a filter bank"))?;
                temporal_phase_derivative(&clip, bank, true)?
            }
        };
        if maps.len() < kind.stack_depth() {
            return Err(Error::shape(format!(
                "clip yields {} maps, stacking needs {}",
                maps.len(),
                kind.stack_depth()
            )));
        }
        Ok(ClipMaps { maps, label })
    }

    /// Valid centre indices for a stack of `depth` maps.
    fn centers(&self, depth: usize) -> (usize, usize) {
        let lo = depth / 2;
        (lo, self.maps.len() - depth + lo)
    }
}

/// A labelled set of clips ready for sampling.
#[derive(Debug, Clone)]
pub struct MotionDataset<T: Real> {
    pub clips: Vec<ClipMaps<T>>,
    pub kind: InputKind,
    pub crop: usize,
    pub n_classes: usize,
    /// Label under a horizontal flip; `None` disables flipping for that class.
    pub mirror: Vec<Option<usize>>,
    pub flip_probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T: Real> {
    pub inputs: Tensor<T>,
    pub labels: Vec<usize>,
}

/// Produces the training batch for an iteration; a pure function of its arguments.
pub trait BatchSource<T: Real>: Sync {
    fn batch(&self, iteration: u64, size: usize, seed: u64) -> Result<Batch<T>>;
}

impl<T: Real> MotionDataset<T> {
    pub fn build(
        clips: &[VideoClip<f32>],
        kind: InputKind,
        bank: Option<&ComplexFilterBank>,
        crop: usize,
        n_classes: usize,
        mirror: Vec<Option<usize>>,
    ) -> Result<Self> {
        let clips: Vec<ClipMaps<T>> = clips
            .iter()
            .map(|c| ClipMaps::from_clip(c, kind, bank))
            .collect::<Result<_>>()?;
        if let Some(c) = clips.iter().find(|c| c.label >= n_classes) {
            return Err(Error::shape(format!("label {} out of range for {n_classes} classes", c.label)));
        }
        if mirror.len() != n_classes {
            return Err(Error::config("mirror map must have one entry per class"));
        }
        Ok(MotionDataset {
            clips,
            kind,
            crop,
            n_classes,
            mirror,
            flip_probability: 0.5,
        })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Random clip, random time index, random crop and flip.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Tensor<T>, usize)> {
        if self.clips.is_empty() {
            return Err(Error::shape("cannot sample an empty dataset"));
        }
        let clip = &self.clips[rng.gen_range(0..self.clips.len())];
        let depth = self.kind.stack_depth();
        let (lo, hi) = clip.centers(depth);
        let t = rng.gen_range(lo..=hi);
        let stacked = stack(&clip.maps, t, depth)?;
        let flip_allowed = self.mirror[clip.label].is_some();
        let cfg = AugmentConfig {
            crop: self.crop,
            flip_probability: if flip_allowed { self.flip_probability } else { 0.0 },
        };
        let (m, flipped) = augment(&stacked, &cfg, rng)?;
        let label = if flipped {
            self.mirror[clip.label].expect("flip only when mirrored label exists")
        } else {
            clip.label
        };
        Ok((m.data, label))
    }

    /// Centre time index and centre crop of clip `i`.
    pub fn eval_sample(&self, i: usize) -> Result<(Tensor<T>, usize)> {
        let clip = self
            .clips
            .get(i)
            .ok_or_else(|| Error::shape(format!("sample {i} out of range")))?;
        let depth = self.kind.stack_depth();
        let (lo, hi) = clip.centers(depth);
        let t = ((clip.maps.len() - 1) / 2).clamp(lo, hi);
        let m = center_crop(&stack(&clip.maps, t, depth)?, self.crop)?;
        Ok((m.data, clip.label))
    }

    /// Evaluation batches over every clip in order.
    pub fn eval_batch(&self, start: usize, size: usize) -> Result<Batch<T>> {
        let end = (start + size).min(self.clips.len());
        let mut inputs = Vec::with_capacity(end - start);
        let mut labels = Vec::with_capacity(end - start);
        for i in start..end {
            let (x, l) = self.eval_sample(i)?;
            inputs.push(x);
            labels.push(l);
        }
        Ok(Batch {
            inputs: Tensor::stack(&inputs)?,
            labels,
        })
    }
}

impl<T: Real> BatchSource<T> for MotionDataset<T> {
    fn batch(&self, iteration: u64, size: usize, seed: u64) -> Result<Batch<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(iteration);
        let mut inputs = Vec::with_capacity(size);
        let mut labels = Vec::with_capacity(size);
        for _ in 0..size {
            let (x, l) = self.sample(&mut rng)?;
            inputs.push(x);
            labels.push(l);
        }
        Ok(Batch {
            inputs: Tensor::stack(&inputs)?,
            labels,
        })
    }
}

/// A fixed batch served at every iteration (memorization runs and gradient checks).
impl<T: Real> BatchSource<T> for Batch<T> {
    fn batch(&self, _iteration: u64, _size: usize, _seed: u64) -> Result<Batch<T>> {
        Ok(self.clone())
    }
}
