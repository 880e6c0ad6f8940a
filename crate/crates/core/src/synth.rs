//! Procedural motion datasets: bright textures on a dark background that translate,
//! expand, contract or stay still. Every clip is a pure function of the seed, its split,
//! its class and its index, so train and test never share a clip.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::motion::{load_frames, save_frames, VideoClip};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum MotionPattern {
    /// Rigid translation; 0 degrees is rightward, 90 is upward.
    Translate { angle_deg: f64 },
    Expand,
    Contract,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Texture {
    /// Isotropic Gaussian spots.
    Dots,
    /// Elongated Gaussian bars at random orientations.
    Bars,
    /// Concentric rings around a point near the frame center.
    Rings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthClass {
    pub name: String,
    pub motion: MotionPattern,
    pub texture: Texture,
}

impl SynthClass {
    pub fn new(name: &str, motion: MotionPattern, texture: Texture) -> Self {
        SynthClass {
            name: name.to_string(),
            motion,
            texture,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: Vec<SynthClass>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub frames: usize,
    pub size: usize,
    /// 1 for grayscale frames, 3 for tinted RGB frames.
    pub channels: usize,
    /// Pixels per frame.
    pub speed: f64,
    /// Relative speed jitter; each clip draws from `speed * [1 - j, 1 + j]`.
    pub speed_jitter: f64,
    /// Number of texture elements per clip.
    pub elements: usize,
    pub element_sigma: f64,
    pub noise: f64,
    pub seed: u64,
}

fn translate(name: &str, angle_deg: f64, texture: Texture) -> SynthClass {
    SynthClass::new(name, MotionPattern::Translate { angle_deg }, texture)
}

impl SynthConfig {
    fn base(classes: Vec<SynthClass>) -> Self {
        SynthConfig {
            classes,
            train_per_class: 64,
            test_per_class: 32,
            frames: 8,
            size: 24,
            channels: 1,
            speed: 1.0,
            speed_jitter: 0.25,
            elements: 10,
            element_sigma: 1.0,
            noise: 0.0,
            seed: 0,
        }
    }

    /// Right, left, up and down translation of dot textures.
    pub fn directions() -> Self {
        Self::base(vec![
            translate("right", 0.0, Texture::Dots),
            translate("left", 180.0, Texture::Dots),
            translate("up", 90.0, Texture::Dots),
            translate("down", 270.0, Texture::Dots),
        ])
    }

    /// Expanding versus contracting rings: identical appearance, opposite frame order.
    pub fn order_sensitive() -> Self {
        Self::base(vec![
            SynthClass::new("expanding", MotionPattern::Expand, Texture::Rings),
            SynthClass::new("contracting", MotionPattern::Contract, Texture::Rings),
        ])
    }

    /// Eight translation directions of oriented bars.
    pub fn orientation_rich() -> Self {
        let names = ["e", "ne", "n", "nw", "w", "sw", "s", "se"];
        Self::base(
            names
                .iter()
                .enumerate()
                .map(|(i, n)| translate(n, 45.0 * i as f64, Texture::Bars))
                .collect(),
        )
    }

    /// Directions, expansion/contraction and two static distractor textures.
    pub fn mixed() -> Self {
        let mut c = Self::directions().classes;
        c.extend(Self::order_sensitive().classes);
        c.push(SynthClass::new("static_dots", MotionPattern::Static, Texture::Dots));
        c.push(SynthClass::new("static_bars", MotionPattern::Static, Texture::Bars));
        Self::base(c)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "directions" => Ok(Self::directions()),
            "order" | "order_sensitive" => Ok(Self::order_sensitive()),
            "orientation" | "orientation_rich" => Ok(Self::orientation_rich()),
            "mixed" => Ok(Self::mixed()),
            _ => Err(Error::config(format!("unknown dataset preset '{name}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::config("dataset needs at least one class"));
        }
        if self.frames < 2 || self.size < 4 {
            return Err(Error::config("dataset needs at least 2 frames of 4x4 pixels"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::config("channels must be 1 or 3"));
        }
        if !(0.0..1.0).contains(&self.speed_jitter) || self.speed < 0.0 || self.element_sigma <= 0.0 {
            return Err(Error::config("invalid speed or element size"));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    /// Label each class maps to under a horizontal flip, or `None` when the mirrored
    /// motion is not one of the classes.
    pub fn mirror_map(&self) -> Vec<Option<usize>> {
        self.classes
            .iter()
            .map(|c| match c.motion {
                MotionPattern::Translate { angle_deg } => {
                    let m = (180.0 - angle_deg).rem_euclid(360.0);
                    self.classes.iter().position(|o| {
                        o.texture == c.texture
                            && matches!(o.motion, MotionPattern::Translate { angle_deg: a }
                                if ((a.rem_euclid(360.0) - m).abs() < 1e-9))
                    })
                }
                _ => self.classes.iter().position(|o| o == c),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub train: Vec<VideoClip<f32>>,
    pub test: Vec<VideoClip<f32>>,
}

impl SynthDataset {
    pub fn class_names(&self) -> Vec<String> {
        self.config.class_names()
    }

    pub fn num_classes(&self) -> usize {
        self.config.classes.len()
    }
}

struct Element {
    row: f64,
    col: f64,
    brightness: f64,
    tint: [f64; 3],
    // Unit vector along the long axis (rows, cols); unused for dots.
    axis: (f64, f64),
}

fn clip_rng(seed: u64, split: Split, class: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = match split {
        Split::Train => 0u64,
        Split::Test => 1u64,
    };
    rng.set_stream((s << 62) | ((class as u64) << 32) | index as u64);
    rng
}

fn wrapped(d: f64, period: f64) -> f64 {
    d - period * (d / period).round()
}

/// Renders one clip of the given class.
pub fn render_clip(config: &SynthConfig, class: usize, split: Split, index: usize) -> Result<VideoClip<f32>> {
    config.validate()?;
    let spec = config
        .classes
        .get(class)
        .ok_or_else(|| Error::config(format!("class {class} out of range")))?;
    let mut rng = clip_rng(config.seed, split, class, index);
    let n = config.size;
    let nf = n as f64;
    let speed = config.speed * (1.0 + config.speed_jitter * (2.0 * rng.gen::<f64>() - 1.0));
    let elements: Vec<Element> = (0..config.elements)
        .map(|_| {
            let a: f64 = rng.gen::<f64>() * std::f64::consts::PI;
            let tint = if config.channels == 3 {
                [rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0)]
            } else {
                [1.0; 3]
            };
            Element {
                row: rng.gen::<f64>() * nf,
                col: rng.gen::<f64>() * nf,
                brightness: rng.gen_range(0.6..1.0),
                tint,
                axis: (a.sin(), a.cos()),
            }
        })
        .collect();
    // Ring centre and spacing.
    let center = (
        (nf - 1.0) / 2.0 + rng.gen_range(-1.5..1.5),
        (nf - 1.0) / 2.0 + rng.gen_range(-1.5..1.5),
    );
    let spacing = rng.gen_range(5.0..7.0);
    let phase0 = rng.gen::<f64>() * spacing;
    let ring_tint = if config.channels == 3 {
        [rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0)]
    } else {
        [1.0; 3]
    };
    let sigma = config.element_sigma;
    let (vr, vc) = match spec.motion {
        MotionPattern::Translate { angle_deg } => {
            let a = angle_deg.to_radians();
            (-speed * a.sin(), speed * a.cos())
        }
        _ => (0.0, 0.0),
    };
    let radial = match spec.motion {
        MotionPattern::Expand => speed,
        MotionPattern::Contract => -speed,
        _ => 0.0,
    };

    let mut frames = Vec::with_capacity(config.frames);
    for t in 0..config.frames {
        let tf = t as f64;
        let mut frame = vec![0.0f32; config.channels * n * n];
        for row in 0..n {
            for col in 0..n {
                let mut v = [0.0f64; 3];
                match spec.texture {
                    Texture::Rings => {
                        let rho = ((row as f64 - center.0).powi(2) + (col as f64 - center.1).powi(2)).sqrt();
                        let d = wrapped(rho - phase0 - radial * tf, spacing);
                        let g = (-d * d / (2.0 * sigma * sigma)).exp();
                        for c in 0..3 {
                            v[c] = g * ring_tint[c];
                        }
                    }
                    Texture::Dots | Texture::Bars => {
                        for e in &elements {
                            let dr = wrapped(row as f64 - (e.row + vr * tf), nf);
                            let dc = wrapped(col as f64 - (e.col + vc * tf), nf);
                            let q = if spec.texture == Texture::Dots {
                                (dr * dr + dc * dc) / (sigma * sigma)
                            } else {
                                let along = dr * e.axis.0 + dc * e.axis.1;
                                let across = -dr * e.axis.1 + dc * e.axis.0;
                                along * along / (9.0 * sigma * sigma) + across * across / (0.64 * sigma * sigma)
                            };
                            if q < 40.0 {
                                let g = e.brightness * (-0.5 * q).exp();
                                for c in 0..3 {
                                    v[c] += g * e.tint[c];
                                }
                            }
                        }
                    }
                }
                for c in 0..config.channels {
                    let noise = if config.noise > 0.0 {
                        config.noise * (2.0 * rng.gen::<f64>() - 1.0)
                    } else {
                        0.0
                    };
                    frame[c * n * n + row * n + col] = (v[c] + noise).clamp(0.0, 1.0) as f32;
                }
            }
        }
        frames.push(Tensor::from_vec(&[config.channels, n, n], frame)?);
    }
    VideoClip::new(frames, Some(class))
}

/// Generates the full train/test split for a configuration.
pub fn synth_dataset(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let mut train = Vec::with_capacity(config.classes.len() * config.train_per_class);
    let mut test = Vec::with_capacity(config.classes.len() * config.test_per_class);
    for class in 0..config.classes.len() {
        for i in 0..config.train_per_class {
            train.push(render_clip(config, class, Split::Train, i)?);
        }
        for i in 0..config.test_per_class {
            test.push(render_clip(config, class, Split::Test, i)?);
        }
    }
    Ok(SynthDataset {
        config: config.clone(),
        train,
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: SynthConfig,
    pub classes: Vec<String>,
    pub train: Vec<String>,
    pub test: Vec<String>,
    /// SHA-256 over every frame's quantized bytes in manifest order.
    pub sha256: String,
}

pub const DATASET_MANIFEST: &str = "dataset.json";

/// Hash of a clip list after 8-bit quantization, matching what `save_dataset` writes.
pub fn dataset_hash(train: &[VideoClip<f32>], test: &[VideoClip<f32>]) -> String {
    let mut h = Sha256::new();
    for clip in train.iter().chain(test) {
        h.update((clip.label.unwrap_or(usize::MAX) as u64).to_le_bytes());
        for f in &clip.frames {
            let bytes: Vec<u8> = f
                .data()
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect();
            h.update(&bytes);
        }
    }
    hex::encode(h.finalize())
}

/// Writes every clip as a frame directory and returns the dataset hash.
pub fn save_dataset(ds: &SynthDataset, dir: impl AsRef<Path>) -> Result<String> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let names = ds.class_names();
    let write = |split: &str, clips: &[VideoClip<f32>]| -> Result<Vec<String>> {
        let mut out = Vec::with_capacity(clips.len());
        for (i, c) in clips.iter().enumerate() {
            let label = c.label.unwrap_or(0);
            let rel = format!("{split}/{}_{i:05}", names[label]);
            save_frames(c, dir.join(&rel))?;
            out.push(rel);
        }
        Ok(out)
    };
    let train = write("train", &ds.train)?;
    let test = write("test", &ds.test)?;
    let sha256 = dataset_hash(&ds.train, &ds.test);
    let manifest = DatasetManifest {
        config: ds.config.clone(),
        classes: names,
        train,
        test,
        sha256: sha256.clone(),
    };
    fs::write(dir.join(DATASET_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(sha256)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<SynthDataset> {
    let dir = dir.as_ref();
    let path = dir.join(DATASET_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::from(e).with_path(&path))?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    let load = |v: &[String]| -> Result<Vec<VideoClip<f32>>> { v.iter().map(|p| load_frames(dir.join(p))).collect() };
    Ok(SynthDataset {
        config: m.config,
        train: load(&m.train)?,
        test: load(&m.test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mut c: SynthConfig) -> SynthConfig {
        c.train_per_class = 2;
        c.test_per_class = 1;
        c.size = 16;
        c
    }

    #[test]
    fn deterministic_and_disjoint() {
        let c = small(SynthConfig::mixed());
        let a = synth_dataset(&c).unwrap();
        let b = synth_dataset(&c).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        for t in &a.test {
            assert!(a.train.iter().all(|x| x != t));
        }
        let mut c2 = c.clone();
        c2.seed = 1;
        assert_ne!(synth_dataset(&c2).unwrap().train, a.train);
    }

    #[test]
    fn labels_and_shapes() {
        let c = small(SynthConfig::directions());
        let d = synth_dataset(&c).unwrap();
        assert_eq!(d.train.len(), 8);
        assert_eq!(d.train[0].frame_shape(), (1, 16, 16));
        assert_eq!(d.train[0].len(), c.frames);
        assert_eq!(d.train[3].label, Some(1));
    }

    #[test]
    fn static_classes_do_not_change() {
        let c = small(SynthConfig::mixed());
        let clip = render_clip(&c, 6, Split::Train, 0).unwrap();
        assert!(clip.frames.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn mirror_pairs() {
        let c = SynthConfig::mixed();
        let m = c.mirror_map();
        assert_eq!(m[0], Some(1));
        assert_eq!(m[1], Some(0));
        assert_eq!(m[2], Some(2));
        assert_eq!(m[4], Some(4));
        let o = SynthConfig::orientation_rich().mirror_map();
        assert_eq!(o[1], Some(3));
        assert_eq!(o[7], Some(5));
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(SynthConfig::preset("nope"), Err(Error::Config(_))));
    }
}
