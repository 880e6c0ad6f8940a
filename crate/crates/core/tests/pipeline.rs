//! Data pipeline contracts, determinism and the command-line surface.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use phasestream::container::Container;
use phasestream::experiments::ExperimentConfig;
use phasestream::motion::{flip_horizontal, save_frames, shuffle_frames, temporal_derivative, DerivativeKind, VideoClip};
use phasestream::net::{build_model, train, InputKind, MotionDataset, NetworkConfig, TrainConfig};
use phasestream::synth::{load_dataset, render_clip, save_dataset, synth_dataset, Split, SynthConfig};
use phasestream::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn roll_cols(img: &Tensor<f32>, shift: isize) -> Tensor<f32> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    Tensor::from_fn(&[1, h, w], |i| {
        let src = (i[2] as isize - shift).rem_euclid(w as isize) as usize;
        img.get(&[0, i[1], src])
    })
}

#[test]
fn flipped_rightward_derivative_equals_leftward_mirror() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = Tensor::from_fn(&[1, 6, 9], |_| rng.gen_range(0.0f32..1.0));
    let mirrored = Tensor::from_fn(&[1, 6, 9], |i| base.get(&[0, i[1], 8 - i[2]]));
    let right = VideoClip::new((0..4).map(|t| roll_cols(&base, t)).collect(), None).unwrap();
    let left = VideoClip::new((0..4).map(|t| roll_cols(&mirrored, -t)).collect(), None).unwrap();
    let dr = temporal_derivative(&right, DerivativeKind::Gray).unwrap();
    let dl = temporal_derivative(&left, DerivativeKind::Gray).unwrap();
    for (a, b) in dr.iter().zip(&dl) {
        assert_eq!(flip_horizontal(a).data, b.data);
    }
}

#[test]
fn shuffle_permutations_are_uniform() {
    let frames: Vec<Tensor<f32>> = (0..4).map(|i| Tensor::full(&[1, 1, 1], i as f32)).collect();
    let clip = VideoClip::new(frames, None).unwrap();
    let n = 10_000;
    let mut counts: HashMap<Vec<u32>, usize> = HashMap::new();
    for seed in 0..n as u64 {
        let s = shuffle_frames(&clip, seed);
        *counts.entry(s.frames.iter().map(|f| f.data()[0] as u32).collect()).or_default() += 1;
    }
    assert_eq!(counts.len(), 24);
    let p = 1.0 / 24.0;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    let mut chi2 = 0.0;
    for &c in counts.values() {
        let e = n as f64 * p;
        assert!((c as f64 - e).abs() <= 3.0 * sigma, "count {c} vs {e}");
        chi2 += (c as f64 - e).powi(2) / e;
    }
    // 23 degrees of freedom; 0.999 quantile is about 49.7.
    assert!(chi2 < 49.7, "chi-square {chi2}");
}

fn small_directions() -> SynthConfig {
    let mut c = SynthConfig::directions();
    c.train_per_class = 4;
    c.test_per_class = 2;
    c.size = 16;
    c
}

#[test]
fn dataset_round_trip_and_reproducibility() {
    let cfg = small_directions();
    let a = synth_dataset(&cfg).unwrap();
    let b = synth_dataset(&cfg).unwrap();
    assert_eq!(a.train, b.train);
    let dir = tempfile::tempdir().unwrap();
    let sha = save_dataset(&a, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.train.len(), a.train.len());
    assert_eq!(back.test.len(), a.test.len());
    // Frames are stored at 8 bits.
    for (x, y) in back.train.iter().zip(&a.train) {
        assert_eq!(x.label, y.label);
        for (f, g) in x.frames.iter().zip(&y.frames) {
            assert!(f.max_abs_diff(g) <= 0.5 / 255.0 + 1e-6);
        }
    }
    let dir2 = tempfile::tempdir().unwrap();
    assert_eq!(save_dataset(&back, dir2.path()).unwrap(), sha);
}

#[test]
fn direction_labels_match_gradient_correlation() {
    // Brightness constancy: dI/dt ≈ -(v · ∇I), so the correlation of dGray with the
    // spatial gradient along the motion axis is negative.
    let cfg = small_directions();
    for (class, (axis, sign)) in [(0, (1, 1.0)), (1, (1, -1.0)), (2, (0, 1.0)), (3, (0, -1.0))] {
        for i in 0..3 {
            let clip = render_clip(&cfg, class, Split::Train, i).unwrap();
            let d = temporal_derivative(&clip, DerivativeKind::Gray).unwrap();
            let f = &clip.frames[0];
            let (h, w) = (f.shape()[1], f.shape()[2]);
            let mut corr = 0.0f64;
            for y in 0..h {
                for x in 0..w {
                    // Central differences with wrap-around; +y is up.
                    let g = if axis == 1 {
                        f.get(&[0, y, (x + 1) % w]) - f.get(&[0, y, (x + w - 1) % w])
                    } else {
                        f.get(&[0, (y + h - 1) % h, x]) - f.get(&[0, (y + 1) % h, x])
                    };
                    corr += (g * d[0].data.get(&[0, y, x])) as f64;
                }
            }
            assert!(corr * sign < 0.0, "class {class} clip {i}: correlation {corr}");
        }
    }
}

#[test]
fn static_classes_have_zero_dgray() {
    let cfg = SynthConfig::mixed();
    let names = cfg.class_names();
    for (c, name) in names.iter().enumerate().filter(|(_, n)| n.starts_with("static")) {
        let clip = render_clip(&cfg, c, Split::Test, 0).unwrap();
        for m in temporal_derivative(&clip, DerivativeKind::Gray).unwrap() {
            assert!(m.data.data().iter().all(|&v| v == 0.0), "{name}");
        }
    }
}

fn metrics_bytes(seed: u64) -> Vec<u8> {
    let mut sc = small_directions();
    sc.seed = seed;
    let ds = synth_dataset(&sc).unwrap();
    let data = MotionDataset::<f32>::build(&ds.train, InputKind::Dgray, None, 16, 4, sc.mirror_map()).unwrap();
    let mut model = build_model::<f32>(&NetworkConfig::mini(4), seed).unwrap();
    let mut tc = TrainConfig::scaled(30);
    tc.batch_size = 8;
    tc.log_every = 1;
    tc.seed = seed;
    let mut out = Vec::new();
    train(&mut model, &tc, &data, Some(&mut out)).unwrap();
    out
}

#[test]
fn training_metrics_are_reproducible() {
    let a = metrics_bytes(5);
    assert_eq!(a, metrics_bytes(5));
    assert_ne!(a, metrics_bytes(6));
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 31);
}

fn cli(args: &[&str], out: &Path) -> String {
    let o = Command::new(env!("CARGO_BIN_EXE_phasestream"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn write_clip(dir: &Path, frames: Vec<Tensor<f32>>) {
    save_frames(&VideoClip::new(frames, Some(0)).unwrap(), dir).unwrap();
}

#[test]
fn cli_gen_filters_writes_both_bank_sizes() {
    let out = tempfile::tempdir().unwrap();
    cli(&["gen-filters", "--bank", "quadrature24", "--bank", "perpendicular96"], out.path());
    let q = Container::load(out.path().join("quadrature24.bin")).unwrap();
    let p = Container::load(out.path().join("perpendicular96.bin")).unwrap();
    assert_eq!(q.require::<f64>("real").unwrap().shape()[0], 24);
    assert_eq!(p.require::<f64>("imag").unwrap().shape()[0], 96);
    let grid = image::open(out.path().join("perpendicular96_imag.png")).unwrap();
    assert_eq!((grid.width(), grid.height()), (8 * (11 * 4 + 1) + 1, 12 * (11 * 4 + 1) + 1));
    assert!(out.path().join("manifest.json").exists());
}

#[test]
fn cli_preprocess_and_extract_phase() {
    let clip_dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    write_clip(clip_dir.path(), (0..10).map(|_| Tensor::from_fn(&[1, 8, 8], |_| rng.gen_range(0.0f32..1.0))).collect());
    let out = tempfile::tempdir().unwrap();
    let msg = cli(&["preprocess", "--clip", clip_dir.path().to_str().unwrap(), "--mode", "dgray"], out.path());
    assert!(msg.contains("9 maps"));
    let c = Container::load(out.path().join("maps.bin")).unwrap();
    assert_eq!(c.metadata["count"], 9);

    let zero_dir = tempfile::tempdir().unwrap();
    write_clip(zero_dir.path(), vec![Tensor::zeros(&[1, 8, 8]); 3]);
    let out = tempfile::tempdir().unwrap();
    cli(&["extract-phase", "--clip", zero_dir.path().to_str().unwrap()], out.path());
    let p = Container::load(out.path().join("phase.bin")).unwrap().require::<f32>("phase").unwrap();
    assert_eq!(p.shape()[0], 3);
    assert!(p.data().iter().all(|&v| v == 0.0));
}

#[test]
fn cli_rejects_missing_data_dir() {
    let out = tempfile::tempdir().unwrap();
    let cfg_path = out.path().join("cfg.json");
    let cfg = ExperimentConfig {
        data_dir: Some(out.path().join("nowhere")),
        ..ExperimentConfig::default()
    };
    fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_phasestream"))
        .args(["exp1a-filters", "--config", cfg_path.to_str().unwrap(), "--out"])
        .arg(out.path())
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("ingestion error"));
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = ExperimentConfig::default();
    let mut ds = SynthConfig::orientation_rich();
    ds.train_per_class = 3;
    ds.test_per_class = 2;
    ds.size = 16;
    cfg.dataset = Some(ds);
    cfg.train = TrainConfig::scaled(6);
    cfg.train.batch_size = 4;
    cfg.train.log_every = 1;
    let p = dir.join("tiny.json");
    fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

#[test]
fn cli_exp1a_table_shape_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        cli(&["exp1a-filters", "--config", cfg.to_str().unwrap(), "--seed", "3"], out);
    }
    let ta = fs::read_to_string(a.join("exp1a.csv")).unwrap();
    assert_eq!(ta, fs::read_to_string(b.join("exp1a.csv")).unwrap());
    let mut rdr = csv::Reader::from_reader(ta.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    assert!(headers.iter().any(|h| h == "train_acc") && headers.iter().any(|h| h == "test_acc"));
    assert_eq!(rdr.records().count(), 4);
}

#[test]
fn cli_train_then_visualize() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    let mut ds = small_directions();
    ds.train_per_class = 2;
    cfg.dataset = Some(ds);
    cfg.train = TrainConfig::scaled(4);
    cfg.train.batch_size = 4;
    let p = dir.path().join("cfg.json");
    fs::write(&p, serde_json::to_string(&cfg).unwrap()).unwrap();
    let run = dir.path().join("run");
    cli(&["train", "--config", p.to_str().unwrap()], &run);
    for f in ["model.bin", "model.json", "metrics.csv", "eval.csv", "manifest.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let vis = dir.path().join("vis");
    let ckpt = run.join("model.bin");
    cli(&["visualize", "--checkpoint", ckpt.to_str().unwrap()], &vis);
    for f in ["dgray.png", "dphase.png", "bank_perpendicular96.png", "learned_filters.png"] {
        assert!(vis.join(f).exists(), "{f}");
    }
}

#[test]
fn cli_synth_data_prints_dataset_hash() {
    let out = tempfile::tempdir().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.dataset = Some(small_directions());
    let p = dir.path().join("cfg.json");
    fs::write(&p, serde_json::to_string(&cfg).unwrap()).unwrap();
    let sha = cli(&["synth-data", "--config", p.to_str().unwrap()], out.path());
    let ds = load_dataset(out.path()).unwrap();
    assert_eq!(ds.train.len(), 16);
    assert_eq!(sha.trim().len(), 64);
}
