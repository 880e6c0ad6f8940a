//! Frame ingestion and Eulerian input construction: grayscale conversion, temporal
//! differences of intensity and phase, stacking, augmentation and frame shuffling.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage, GenericImageView, GrayImage, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gabor::{BankMode, ComplexFilterBank};
use crate::numerics::conv::{conv2d_forward, ConvSpec};
use crate::phase::{extract_phase, DEFAULT_PHASE_EPS};
use crate::tensor::{r, Real, Tensor};

/// Ordered frames, each `[C, H, W]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip<T: Real = f32> {
    pub frames: Vec<Tensor<T>>,
    pub frame_rate: f64,
    pub label: Option<usize>,
}

impl<T: Real> VideoClip<T> {
    pub fn new(frames: Vec<Tensor<T>>, label: Option<usize>) -> Result<Self> {
        let clip = VideoClip {
            frames,
            frame_rate: 25.0,
            label,
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .frames
            .first()
            .ok_or_else(|| Error::shape("clip has no frames"))?;
        first.expect_ndim(3, "frame")?;
        for (i, f) in self.frames.iter().enumerate() {
            if f.shape() != first.shape() {
                return Err(Error::shape(format!(
                    "frame {i} has shape {:?}, frame 0 has {:?}",
                    f.shape(),
                    first.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(channels, height, width)` of every frame.
    pub fn frame_shape(&self) -> (usize, usize, usize) {
        let s = self.frames[0].shape();
        (s[0], s[1], s[2])
    }

    pub fn cast<U: Real>(&self) -> VideoClip<U> {
        VideoClip {
            frames: self.frames.iter().map(|f| f.cast()).collect(),
            frame_rate: self.frame_rate,
            label: self.label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionKind {
    Rgb,
    Dgray,
    Drgb,
    Dphase,
    /// Several maps of one kind concatenated along channels.
    Stack,
}

/// One network input sample `[D, H, W]` with `D = channels * stack_depth`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionInput<T: Real = f32> {
    pub data: Tensor<T>,
    pub kind: MotionKind,
    pub stack_depth: usize,
}

impl<T: Real> MotionInput<T> {
    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.data.shape()[1], self.data.shape()[2])
    }
}

/// Frame list and label stored next to a frame directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipManifest {
    #[serde(default)]
    pub label: Option<usize>,
    #[serde(default)]
    pub class_name: Option<String>,
    pub frames: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn is_frame_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("pgm" | "ppm" | "png" | "pnm")
    )
}

fn frame_from_image(img: &DynamicImage) -> (usize, Vec<f32>) {
    let (w, h) = img.dimensions();
    let gray = matches!(
        img.color(),
        ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16
    );
    if gray {
        let g = img.to_luma8();
        (1, g.as_raw().iter().map(|&v| v as f32 / 255.0).collect())
    } else {
        let rgb = img.to_rgb8();
        let plane = (w * h) as usize;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in rgb.pixels().enumerate() {
            for c in 0..3 {
                data[c * plane + i] = px.0[c] as f32 / 255.0;
            }
        }
        (3, data)
    }
}

/// Reads a directory of 8-bit PGM/PPM/PNG frames, in manifest order when a
/// `manifest.json` is present and lexicographic file order otherwise.
pub fn load_frames(dir: impl AsRef<Path>) -> Result<VideoClip<f32>> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let (paths, label): (Vec<PathBuf>, Option<usize>) = if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::from(e).with_path(&manifest_path))?;
        let m: ClipManifest = serde_json::from_str(&text).map_err(|e| Error::Ingestion {
            path: manifest_path.clone(),
            reason: e.to_string(),
        })?;
        (m.frames.iter().map(|f| dir.join(f)).collect(), m.label)
    } else {
        let mut v: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::from(e).with_path(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| is_frame_file(p))
            .collect();
        v.sort();
        (v, None)
    };
    if paths.is_empty() {
        return Err(Error::Ingestion {
            path: dir.to_path_buf(),
            reason: "no frame files found".into(),
        });
    }
    let mut frames = Vec::with_capacity(paths.len());
    let mut first_shape: Option<Vec<usize>> = None;
    for p in &paths {
        let img = image::open(p).map_err(|e| Error::from(e).with_path(p))?;
        let (c, data) = frame_from_image(&img);
        let (w, h) = img.dimensions();
        let shape = vec![c, h as usize, w as usize];
        if let Some(fs) = &first_shape {
            if *fs != shape {
                return Err(Error::Ingestion {
                    path: p.clone(),
                    reason: format!("frame shape {shape:?} differs from first frame {fs:?}"),
                });
            }
        } else {
            first_shape = Some(shape.clone());
        }
        frames.push(Tensor::from_vec(&shape, data)?);
    }
    VideoClip::new(frames, label)
}

fn quantize<T: Real>(v: T) -> u8 {
    (v.to_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes each frame as 8-bit PGM (1 channel) or PPM (3 channels) plus a manifest.
pub fn save_frames<T: Real>(clip: &VideoClip<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let (c, h, w) = clip.frame_shape();
    let ext = match c {
        1 => "pgm",
        3 => "ppm",
        _ => return Err(Error::shape(format!("cannot save {c}-channel frames"))),
    };
    let mut names = Vec::with_capacity(clip.len());
    for (i, f) in clip.frames.iter().enumerate() {
        let name = format!("frame_{i:05}.{ext}");
        let path = dir.join(&name);
        let d = f.data();
        if c == 1 {
            let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
                image::Luma([quantize(d[y as usize * w + x as usize])])
            });
            img.save(&path).map_err(|e| Error::from(e).with_path(&path))?;
        } else {
            let plane = h * w;
            let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let o = y as usize * w + x as usize;
                image::Rgb([quantize(d[o]), quantize(d[plane + o]), quantize(d[2 * plane + o])])
            });
            img.save(&path).map_err(|e| Error::from(e).with_path(&path))?;
        }
        names.push(name);
    }
    let manifest = ClipManifest {
        label: clip.label,
        class_name: None,
        frames: names,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// `[3,H,W] -> [1,H,W]` luma; single-channel frames pass through.
pub fn frame_to_gray<T: Real>(frame: &Tensor<T>) -> Result<Tensor<T>> {
    frame.expect_ndim(3, "frame")?;
    let (c, h, w) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
    match c {
        1 => Ok(frame.clone()),
        3 => {
            let plane = h * w;
            let d = frame.data();
            let (kr, kg, kb) = (r::<T>(LUMA[0]), r::<T>(LUMA[1]), r::<T>(LUMA[2]));
            let data = (0..plane)
                .map(|i| kr * d[i] + kg * d[plane + i] + kb * d[2 * plane + i])
                .collect();
            Tensor::from_vec(&[1, h, w], data)
        }
        _ => Err(Error::shape(format!("cannot convert {c}-channel frame to gray"))),
    }
}

pub fn to_gray<T: Real>(clip: &VideoClip<T>) -> Result<VideoClip<T>> {
    Ok(VideoClip {
        frames: clip.frames.iter().map(frame_to_gray).collect::<Result<_>>()?,
        frame_rate: clip.frame_rate,
        label: clip.label,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivativeKind {
    Gray,
    Rgb,
}

/// Forward differences `frame[t+1] - frame[t]`, one map per consecutive pair.
pub fn temporal_derivative<T: Real>(clip: &VideoClip<T>, kind: DerivativeKind) -> Result<Vec<MotionInput<T>>> {
    if clip.len() < 2 {
        return Err(Error::shape(format!(
            "temporal derivative needs at least 2 frames, got {}",
            clip.len()
        )));
    }
    let (src, mk) = match kind {
        DerivativeKind::Gray => (to_gray(clip)?, MotionKind::Dgray),
        DerivativeKind::Rgb => (clip.clone(), MotionKind::Drgb),
    };
    src.frames
        .windows(2)
        .map(|p| {
            Ok(MotionInput {
                data: p[1].zip_map(&p[0], |a, b| a - b)?,
                kind: mk,
                stack_depth: 1,
            })
        })
        .collect()
}

/// Per-filter phase of a grayscale frame under a fixed filter bank: `[F, H, W]`.
pub fn phase_image<T: Real>(frame: &Tensor<T>, bank: &ComplexFilterBank) -> Result<Tensor<T>> {
    let gray = frame_to_gray(frame)?;
    let (h, w) = (gray.shape()[1], gray.shape()[2]);
    let x = gray.reshape(&[1, 1, h, w])?;
    let (re, im) = bank.weights::<T>(1);
    let spec = ConvSpec::same(1, bank.len(), bank.kernel_size());
    let real = conv2d_forward(&x, &re, &spec)?;
    let imag = conv2d_forward(&x, &im, &spec)?;
    extract_phase(&real, &imag, DEFAULT_PHASE_EPS)?.reshape(&[bank.len(), h, w])
}

/// Wraps a phase difference into `(-π/2, π/2]`, the period of the arctangent phase.
pub fn wrap_phase<T: Real>(d: T) -> T {
    let pi = T::PI();
    let half = pi / r(2.0);
    let mut v = d - pi * (d / pi).round();
    if v <= -half {
        v += pi;
    }
    if v > half {
        v -= pi;
    }
    v
}

/// Wrapped temporal differences of per-frame phase images. With `average` the filter
/// channels are averaged into a single map, otherwise all `F` channels are kept.
pub fn temporal_phase_derivative<T: Real>(
    clip: &VideoClip<T>,
    bank: &ComplexFilterBank,
    average: bool,
) -> Result<Vec<MotionInput<T>>> {
    if clip.len() < 2 {
        return Err(Error::shape(format!(
            "phase derivative needs at least 2 frames, got {}",
            clip.len()
        )));
    }
    if bank.mode() != BankMode::Quadrature {
        return Err(Error::config("phase images need a quadrature bank"));
    }
    let phases: Vec<Tensor<T>> = clip
        .frames
        .iter()
        .map(|f| phase_image(f, bank))
        .collect::<Result<_>>()?;
    phases
        .windows(2)
        .map(|p| {
            let d = p[1].zip_map(&p[0], |a, b| wrap_phase(a - b))?;
            let data = if average {
                let (f, h, w) = (d.shape()[0], d.shape()[1], d.shape()[2]);
                let plane = h * w;
                let mut m = vec![T::zero(); plane];
                for ch in d.data().chunks(plane) {
                    for (a, &b) in m.iter_mut().zip(ch) {
                        *a += b;
                    }
                }
                let inv: T = r(1.0 / f as f64);
                m.iter_mut().for_each(|v| *v *= inv);
                Tensor::from_vec(&[1, h, w], m)?
            } else {
                d
            };
            Ok(MotionInput {
                data,
                kind: MotionKind::Dphase,
                stack_depth: 1,
            })
        })
        .collect()
}

/// Channel-concatenates `depth` consecutive maps centered on `center`
/// (window `center - depth/2 ..`).
pub fn stack<T: Real>(inputs: &[MotionInput<T>], center: usize, depth: usize) -> Result<MotionInput<T>> {
    if depth == 0 {
        return Err(Error::config("stack depth must be positive"));
    }
    let start = center
        .checked_sub(depth / 2)
        .filter(|&s| s + depth <= inputs.len())
        .ok_or_else(|| {
            Error::shape(format!(
                "cannot stack {depth} maps around index {center} of {}",
                inputs.len()
            ))
        })?;
    let window = &inputs[start..start + depth];
    let data = Tensor::concat(&window.iter().map(|m| m.data.clone()).collect::<Vec<_>>())?;
    Ok(MotionInput {
        data,
        kind: if depth > 1 { MotionKind::Stack } else { window[0].kind },
        stack_depth: depth * window[0].stack_depth,
    })
}

/// Uniformly random permutation of the frame order, deterministic per seed.
pub fn shuffle_frames<T: Real>(clip: &VideoClip<T>, seed: u64) -> VideoClip<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = clip.frames.clone();
    frames.shuffle(&mut rng);
    VideoClip {
        frames,
        frame_rate: clip.frame_rate,
        label: clip.label,
    }
}

/// Mirror every channel left-to-right.
pub fn flip_horizontal<T: Real>(input: &MotionInput<T>) -> MotionInput<T> {
    let (h, w) = input.hw();
    let mut out = input.clone();
    for (dst, src) in out.data.data_mut().chunks_mut(w).zip(input.data.data().chunks(w)) {
        for x in 0..w {
            dst[x] = src[w - 1 - x];
        }
    }
    let _ = h;
    out
}

pub fn crop<T: Real>(input: &MotionInput<T>, top: usize, left: usize, h: usize, w: usize) -> Result<MotionInput<T>> {
    let (ih, iw) = input.hw();
    if top + h > ih || left + w > iw || h == 0 || w == 0 {
        return Err(Error::config(format!(
            "crop {h}x{w} at ({top},{left}) does not fit {ih}x{iw}"
        )));
    }
    let d = input.channels();
    let data = Tensor::from_fn(&[d, h, w], |i| input.data.get(&[i[0], top + i[1], left + i[2]]));
    Ok(MotionInput {
        data,
        kind: input.kind,
        stack_depth: input.stack_depth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub crop: usize,
    pub flip_probability: f64,
}

/// Random crop plus a horizontal flip with the configured probability, applied
/// identically to every stacked channel. Returns whether the sample was flipped.
pub fn augment<T: Real, R: Rng + ?Sized>(
    input: &MotionInput<T>,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<(MotionInput<T>, bool)> {
    let (h, w) = input.hw();
    if config.crop > h || config.crop > w || config.crop == 0 {
        return Err(Error::config(format!("crop {} larger than frame {h}x{w}", config.crop)));
    }
    let top = rng.gen_range(0..=h - config.crop);
    let left = rng.gen_range(0..=w - config.crop);
    let out = crop(input, top, left, config.crop, config.crop)?;
    let flip = rng.gen::<f64>() < config.flip_probability;
    Ok(if flip { (flip_horizontal(&out), true) } else { (out, false) })
}

/// Deterministic center crop used at evaluation time.
pub fn center_crop<T: Real>(input: &MotionInput<T>, size: usize) -> Result<MotionInput<T>> {
    let (h, w) = input.hw();
    if size > h || size > w {
        return Err(Error::config(format!("crop {size} larger than frame {h}x{w}")));
    }
    crop(input, (h - size) / 2, (w - size) / 2, size, size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gabor::{make_bank, FilterBankSpec};

    fn ramp_clip(n: usize, c: f64) -> VideoClip<f64> {
        VideoClip::new(
            (0..n).map(|t| Tensor::full(&[1, 4, 5], t as f64 * c)).collect(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn gray_conversion() {
        let white = Tensor::<f64>::full(&[3, 2, 2], 1.0);
        assert!(frame_to_gray(&white).unwrap().data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let mut red = Tensor::<f64>::zeros(&[3, 1, 1]);
        red.set(&[0, 0, 0], 1.0);
        assert!((frame_to_gray(&red).unwrap().data()[0] - 0.299).abs() < 1e-12);
    }

    #[test]
    fn derivative_contracts() {
        let d = temporal_derivative(&ramp_clip(6, 0.1), DerivativeKind::Gray).unwrap();
        assert_eq!(d.len(), 5);
        assert!(d.iter().all(|m| m.data.data().iter().all(|&v| (v - 0.1).abs() < 1e-12)));
        let single = ramp_clip(1, 0.1);
        assert!(matches!(
            temporal_derivative(&single, DerivativeKind::Gray),
            Err(Error::RejectedInput(_))
        ));
        let stat = ramp_clip(4, 0.0);
        assert!(temporal_derivative(&stat, DerivativeKind::Rgb)
            .unwrap()
            .iter()
            .all(|m| m.data.max_abs() == 0.0));
    }

    #[test]
    fn step_edge_shift_gives_single_band() {
        let edge = |pos: usize| Tensor::<f64>::from_fn(&[1, 3, 8], |i| if i[2] < pos { 1.0 } else { 0.0 });
        let clip = VideoClip::new(vec![edge(3), edge(4)], None).unwrap();
        let d = &temporal_derivative(&clip, DerivativeKind::Gray).unwrap()[0];
        for y in 0..3 {
            for x in 0..8 {
                let expect = if x == 3 { 1.0 } else { 0.0 };
                assert_eq!(d.data.get(&[0, y, x]), expect);
            }
        }
    }

    #[test]
    fn wrap_contract() {
        let v = wrap_phase(std::f64::consts::FRAC_PI_2 + 0.1);
        assert!(v <= std::f64::consts::FRAC_PI_2 && v > -std::f64::consts::FRAC_PI_2);
        assert!((v - (0.1 - std::f64::consts::FRAC_PI_2)).abs() < 1e-12);
        assert_eq!(wrap_phase(0.3f64), 0.3);
    }

    #[test]
    fn static_clip_has_zero_phase_derivative() {
        let bank = make_bank(&FilterBankSpec::small(BankMode::Quadrature)).unwrap();
        let frame = Tensor::<f64>::from_fn(&[1, 12, 12], |i| ((i[1] * 3 + i[2] * 5) % 7) as f64 / 7.0);
        let clip = VideoClip::new(vec![frame.clone(), frame.clone(), frame], None).unwrap();
        let d = temporal_phase_derivative(&clip, &bank, false).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].channels(), 24);
        assert!(d.iter().all(|m| m.data.max_abs() == 0.0));
        let avg = temporal_phase_derivative(&clip, &bank, true).unwrap();
        assert_eq!(avg[0].channels(), 1);
    }

    #[test]
    fn zero_frame_phase_is_zero() {
        let bank = make_bank(&FilterBankSpec::small(BankMode::Quadrature)).unwrap();
        let p = phase_image(&Tensor::<f64>::zeros(&[1, 9, 9]), &bank).unwrap();
        assert_eq!(p.shape(), &[24, 9, 9]);
        assert_eq!(p.max_abs(), 0.0);
    }

    #[test]
    fn stacking() {
        let maps: Vec<MotionInput<f64>> = (0..7)
            .map(|t| MotionInput {
                data: Tensor::full(&[1, 2, 2], t as f64),
                kind: MotionKind::Dgray,
                stack_depth: 1,
            })
            .collect();
        assert_eq!(stack(&maps, 3, 1).unwrap(), maps[3]);
        let s = stack(&maps, 3, 5).unwrap();
        assert_eq!(s.channels(), 5);
        assert_eq!(s.stack_depth, 5);
        assert_eq!(s.data.select(2), maps[3].data.select(0).reshape(&[2, 2]).unwrap());
        assert!(stack(&maps, 1, 5).is_err());
        assert!(stack(&maps, 5, 5).is_err());
    }

    #[test]
    fn shuffle_is_seeded() {
        let clip = VideoClip::new(
            (0..6).map(|t| Tensor::<f64>::full(&[1, 1, 1], t as f64)).collect(),
            None,
        )
        .unwrap();
        assert_eq!(shuffle_frames(&clip, 3), shuffle_frames(&clip, 3));
        let one = VideoClip::new(vec![Tensor::<f64>::full(&[1, 1, 1], 1.0)], None).unwrap();
        assert_eq!(shuffle_frames(&one, 9), one);
    }

    #[test]
    fn crop_and_flip_identities() {
        let m = MotionInput {
            data: Tensor::<f64>::from_fn(&[2, 4, 5], |i| (i[0] * 100 + i[1] * 10 + i[2]) as f64),
            kind: MotionKind::Dgray,
            stack_depth: 2,
        };
        assert_eq!(flip_horizontal(&flip_horizontal(&m)), m);
        assert_eq!(crop(&m, 0, 0, 4, 5).unwrap(), m);
        let cfg = AugmentConfig {
            crop: 6,
            flip_probability: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(augment(&m, &cfg, &mut rng), Err(Error::Config(_))));
    }
}
