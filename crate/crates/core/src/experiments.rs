//! Desk-scale experiment drivers and the file-producing commands behind the CLI.
//!
//! Every command writes a `manifest.json` holding the SHA-256 of its configuration,
//! and every CSV row carries that hash.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::gabor::{make_bank, BankMode, ComplexFilterBank, FilterBankSpec};
use crate::motion::{
    load_frames, phase_image, shuffle_frames, stack, temporal_derivative, temporal_phase_derivative, DerivativeKind,
    MotionInput, VideoClip,
};
use crate::net::{
    build_model, evaluate, freeze_front_end, train, EvalReport, FrontEndKind, InputKind, Model, MotionDataset,
    NetworkConfig, TrainConfig,
};
use crate::render::{grid_dims, render_signed, tile_grid};
use crate::synth::{load_dataset, save_dataset, synth_dataset, MotionPattern, SynthConfig, SynthDataset};
use crate::tensor::{DType, Tensor};

/// Everything an experiment needs besides the seed and output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Synthetic dataset; each command picks its own preset when absent.
    pub dataset: Option<SynthConfig>,
    /// Load a saved dataset instead of generating one.
    pub data_dir: Option<PathBuf>,
    /// Network template; front-end kind, filters, channels and classes are set per row.
    pub network: NetworkConfig,
    pub train: TrainConfig,
    /// Quadrature bank used to build phase inputs.
    pub phase_bank: FilterBankSpec,
    /// Input kinds for the input comparison and shuffle ablation.
    pub inputs: Vec<InputKind>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut train = TrainConfig::scaled(600);
        train.batch_size = 16;
        ExperimentConfig {
            dataset: None,
            data_dir: None,
            network: NetworkConfig::mini(4),
            train,
            phase_bank: FilterBankSpec::small(BankMode::Quadrature),
            inputs: InputKind::ALL.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).with_path(path))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Same configuration with every seed replaced.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.train.seed = seed;
        if let Some(d) = c.dataset.as_mut() {
            d.seed = seed;
        }
        c
    }

    /// SHA-256 over the command name and canonical JSON of the configuration.
    pub fn hash(&self, command: &str) -> Result<String> {
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update(serde_json::to_vec(self)?);
        Ok(hex::encode(h.finalize()))
    }

    fn dataset_or(&self, preset: SynthConfig) -> Result<SynthDataset> {
        if let Some(dir) = &self.data_dir {
            if !dir.join(crate::synth::DATASET_MANIFEST).exists() {
                return Err(Error::Ingestion {
                    path: dir.clone(),
                    reason: "no dataset manifest found".into(),
                });
            }
            return load_dataset(dir);
        }
        let mut cfg = self.dataset.clone().unwrap_or(preset);
        cfg.seed = self.train.seed;
        synth_dataset(&cfg)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub version: String,
    pub threads: usize,
    pub outputs: Vec<String>,
}

pub fn write_manifest(out: &Path, command: &str, seed: u64, hash: &str, outputs: Vec<String>) -> Result<()> {
    let m = Manifest {
        command: command.to_string(),
        seed,
        config_sha256: hash.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        threads: rayon::current_num_threads(),
        outputs,
    };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
    Ok(())
}

/// One configuration trained and evaluated.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub name: String,
    pub train: EvalReport,
    pub test: EvalReport,
    pub model: Model<f32>,
}

/// Which front-end a trial uses.
#[derive(Debug, Clone, PartialEq)]
pub enum FrontChoice {
    Learned { filters: usize, kernel: usize },
    Fixed(FilterBankSpec),
    Plain { filters: usize, kernel: usize },
}

/// Input maps for one kind, computed once and shared between trials.
pub struct PreparedInputs {
    pub kind: InputKind,
    pub train: MotionDataset<f32>,
    pub test: MotionDataset<f32>,
    pub channels: usize,
}

pub fn prepare_inputs(
    cfg: &ExperimentConfig,
    ds: &SynthDataset,
    kind: InputKind,
    test_clips: Option<&[VideoClip<f32>]>,
) -> Result<PreparedInputs> {
    let bank = if kind.needs_bank() { Some(make_bank(&cfg.phase_bank)?) } else { None };
    let n = ds.num_classes();
    let mirror = ds.config.mirror_map();
    let crop = cfg.network.input_size;
    let train = MotionDataset::build(&ds.train, kind, bank.as_ref(), crop, n, mirror.clone())?;
    let test = MotionDataset::build(test_clips.unwrap_or(&ds.test), kind, bank.as_ref(), crop, n, mirror)?;
    let clip_channels = ds.train.first().map(|c| c.frame_shape().0).unwrap_or(1);
    Ok(PreparedInputs {
        kind,
        train,
        test,
        channels: kind.map_channels(clip_channels),
    })
}

/// Trains one configuration; `metrics` receives the per-iteration CSV.
pub fn run_trial(
    cfg: &ExperimentConfig,
    name: &str,
    inputs: &PreparedInputs,
    front: &FrontChoice,
    n_classes: usize,
    metrics: Option<&Path>,
) -> Result<TrialResult> {
    let mut net = cfg.network.clone();
    net.n_classes = n_classes;
    net.input_channels = inputs.channels;
    net.stack_depth = inputs.kind.stack_depth();
    let bank = match front {
        FrontChoice::Learned { filters, kernel } => {
            net.front_end = FrontEndKind::Complex;
            net.front.filters = *filters;
            net.front.kernel = *kernel;
            None
        }
        FrontChoice::Fixed(spec) => {
            net.front_end = FrontEndKind::Complex;
            net.front.filters = spec.len();
            net.front.kernel = spec.kernel_size;
            Some(make_bank(spec)?)
        }
        FrontChoice::Plain { filters, kernel } => {
            net.front_end = FrontEndKind::Plain;
            net.front.filters = *filters;
            net.front.kernel = *kernel;
            None
        }
    };
    let mut model = build_model::<f32>(&net, cfg.train.seed)?;
    if let Some(b) = &bank {
        model = freeze_front_end(model, b)?;
    }
    match metrics {
        Some(path) => {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            let mut f = std::io::BufWriter::new(fs::File::create(path)?);
            train(&mut model, &cfg.train, &inputs.train, Some(&mut f))?;
        }
        None => {
            train(&mut model, &cfg.train, &inputs.train, None)?;
        }
    }
    let train_eval = evaluate(&mut model, &inputs.train)?;
    let test_eval = evaluate(&mut model, &inputs.test)?;
    Ok(TrialResult {
        name: name.to_string(),
        train: train_eval,
        test: test_eval,
        model,
    })
}

fn check_precision(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.train.precision != DType::F32 {
        return Err(Error::config("experiments train in f32; f64 is reserved for gradient checks"));
    }
    Ok(())
}

fn metrics_path(out: Option<&Path>, name: &str) -> Option<PathBuf> {
    out.map(|o| o.join("metrics").join(format!("{name}.csv")))
}

fn write_csv<S: AsRef<str>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|s| s.as_ref()))?;
    }
    w.flush()?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exp1aRow {
    pub name: String,
    pub train_acc: f64,
    pub test_acc: f64,
}

/// Front-end rows of the filter comparison.
pub fn exp1a_rows() -> Vec<(String, FrontChoice)> {
    vec![
        ("fixed_quadrature_24".into(), FrontChoice::Fixed(FilterBankSpec::small(BankMode::Quadrature))),
        ("fixed_perpendicular_24".into(), FrontChoice::Fixed(FilterBankSpec::small(BankMode::Perpendicular))),
        ("fixed_perpendicular_96".into(), FrontChoice::Fixed(FilterBankSpec::wide(BankMode::Perpendicular))),
        (
            "learned_perpendicular_96".into(),
            FrontChoice::Learned {
                filters: 96,
                kernel: crate::gabor::WIDE_BANK_KERNEL,
            },
        ),
    ]
}

/// Fixed and learned front-ends on dGray inputs of the orientation-rich set.
pub fn cmd_exp1a(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<Exp1aRow>> {
    check_precision(cfg)?;
    let ds = cfg.dataset_or(SynthConfig::orientation_rich())?;
    let inputs = prepare_inputs(cfg, &ds, InputKind::Dgray, None)?;
    let mut rows = Vec::new();
    for (name, front) in exp1a_rows() {
        let t = run_trial(cfg, &name, &inputs, &front, ds.num_classes(), metrics_path(out, &name).as_deref())?;
        rows.push(Exp1aRow {
            name,
            train_acc: t.train.accuracy,
            test_acc: t.test.accuracy,
        });
    }
    if let Some(out) = out {
        let hash = cfg.hash("exp1a-filters")?;
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|r| vec![r.name.clone(), fmt(r.train_acc), fmt(r.test_acc), hash.clone()])
            .collect();
        write_csv(&out.join("exp1a.csv"), &["front_end", "train_acc", "test_acc", "config_hash"], &table)?;
        write_manifest(out, "exp1a-filters", cfg.train.seed, &hash, vec!["exp1a.csv".into(), "metrics/".into()])?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exp1bCell {
    pub input: InputKind,
    pub architecture: String,
    pub test_acc: f64,
    pub per_class: Vec<f64>,
}

/// Every input kind against the plain baseline and the phase front-end.
pub fn cmd_exp1b(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<Exp1bCell>> {
    check_precision(cfg)?;
    let ds = cfg.dataset_or(SynthConfig::mixed())?;
    let names = ds.class_names();
    let f = cfg.network.front.filters;
    let k = cfg.network.front.kernel;
    let mut cells = Vec::new();
    for &kind in &cfg.inputs {
        let inputs = prepare_inputs(cfg, &ds, kind, None)?;
        for (arch, front) in [
            ("plain", FrontChoice::Plain { filters: f, kernel: k }),
            ("phasestream", FrontChoice::Learned { filters: f, kernel: k }),
        ] {
            let name = format!("{}_{arch}", kind.label());
            let t = run_trial(cfg, &name, &inputs, &front, ds.num_classes(), metrics_path(out, &name).as_deref())?;
            cells.push(Exp1bCell {
                input: kind,
                architecture: arch.to_string(),
                test_acc: t.test.accuracy,
                per_class: t.test.per_class.iter().map(|c| c.accuracy).collect(),
            });
        }
    }
    if let Some(out) = out {
        let hash = cfg.hash("exp1b-inputs")?;
        let matrix: Vec<Vec<String>> = cfg
            .inputs
            .iter()
            .map(|&kind| {
                let acc = |arch: &str| {
                    cells
                        .iter()
                        .find(|c| c.input == kind && c.architecture == arch)
                        .map(|c| fmt(c.test_acc))
                        .unwrap_or_default()
                };
                vec![kind.label().to_string(), acc("plain"), acc("phasestream"), hash.clone()]
            })
            .collect();
        write_csv(&out.join("exp1b.csv"), &["input", "plain_test_acc", "phasestream_test_acc", "config_hash"], &matrix)?;
        let mut per_class = Vec::new();
        for c in &cells {
            for (i, acc) in c.per_class.iter().enumerate() {
                per_class.push(vec![
                    c.input.label().to_string(),
                    c.architecture.clone(),
                    names[i].clone(),
                    fmt(*acc),
                    hash.clone(),
                ]);
            }
        }
        write_csv(
            &out.join("exp1b_per_class.csv"),
            &["input", "architecture", "class", "test_acc", "config_hash"],
            &per_class,
        )?;
        write_manifest(
            out,
            "exp1b-inputs",
            cfg.train.seed,
            &hash,
            vec!["exp1b.csv".into(), "exp1b_per_class.csv".into(), "metrics/".into()],
        )?;
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exp1cRow {
    pub input: InputKind,
    pub scope: String,
    pub standard_acc: f64,
    pub shuffled_acc: f64,
    pub relative_change: f64,
}

/// `(standard - shuffled) / standard`, zero when the standard accuracy is zero.
pub fn relative_change(standard: f64, shuffled: f64) -> f64 {
    if standard == 0.0 {
        0.0
    } else {
        (standard - shuffled) / standard
    }
}

fn scope_accuracy(report: &EvalReport, classes: &[usize]) -> f64 {
    let (c, t) = classes.iter().fold((0, 0), |(c, t), &i| {
        (c + report.per_class[i].correct, t + report.per_class[i].total)
    });
    if t == 0 {
        0.0
    } else {
        c as f64 / t as f64
    }
}

/// Class groups reported by the shuffle ablation.
pub fn class_scopes(cfg: &SynthConfig) -> Vec<(String, Vec<usize>)> {
    let all: Vec<usize> = (0..cfg.classes.len()).collect();
    let pick = |f: fn(&MotionPattern) -> bool| -> Vec<usize> {
        cfg.classes
            .iter()
            .enumerate()
            .filter(|(_, c)| f(&c.motion))
            .map(|(i, _)| i)
            .collect()
    };
    let mut scopes = vec![("all".to_string(), all)];
    for (name, idx) in [
        ("directions", pick(|m| matches!(m, MotionPattern::Translate { .. }))),
        ("order_sensitive", pick(|m| matches!(m, MotionPattern::Expand | MotionPattern::Contract))),
        ("static", pick(|m| matches!(m, MotionPattern::Static))),
    ] {
        if !idx.is_empty() {
            scopes.push((name.to_string(), idx));
        }
    }
    scopes
}

/// Trains on ordered clips and evaluates on ordered and frame-shuffled test clips.
pub fn cmd_exp1c(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<Exp1cRow>> {
    check_precision(cfg)?;
    let ds = cfg.dataset_or(SynthConfig::mixed())?;
    let shuffled: Vec<VideoClip<f32>> = ds
        .test
        .iter()
        .enumerate()
        .map(|(i, c)| shuffle_frames(c, cfg.train.seed.wrapping_add(1 + i as u64)))
        .collect();
    let f = cfg.network.front.filters;
    let k = cfg.network.front.kernel;
    let scopes = class_scopes(&ds.config);
    let mut rows = Vec::new();
    for &kind in cfg.inputs.iter().filter(|k| k.stack_depth() == 1) {
        let inputs = prepare_inputs(cfg, &ds, kind, None)?;
        let name = format!("{}_phasestream", kind.label());
        let mut t = run_trial(
            cfg,
            &name,
            &inputs,
            &FrontChoice::Learned { filters: f, kernel: k },
            ds.num_classes(),
            metrics_path(out, &name).as_deref(),
        )?;
        let shuf_inputs = prepare_inputs(cfg, &ds, kind, Some(&shuffled))?;
        let shuf = evaluate(&mut t.model, &shuf_inputs.test)?;
        for (scope, classes) in &scopes {
            let s = scope_accuracy(&t.test, classes);
            let h = scope_accuracy(&shuf, classes);
            rows.push(Exp1cRow {
                input: kind,
                scope: scope.clone(),
                standard_acc: s,
                shuffled_acc: h,
                relative_change: relative_change(s, h),
            });
        }
    }
    if let Some(out) = out {
        let hash = cfg.hash("exp1c-shuffle")?;
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.input.label().to_string(),
                    r.scope.clone(),
                    fmt(r.standard_acc),
                    fmt(r.shuffled_acc),
                    format!("{:.9}", r.relative_change),
                    hash.clone(),
                ]
            })
            .collect();
        write_csv(
            &out.join("exp1c.csv"),
            &["input", "scope", "standard_acc", "shuffled_acc", "relative_change", "config_hash"],
            &table,
        )?;
        write_manifest(out, "exp1c-shuffle", cfg.train.seed, &hash, vec!["exp1c.csv".into(), "metrics/".into()])?;
    }
    Ok(rows)
}

/// Trains one learned phase-stream model on dGray and saves checkpoint and metrics.
pub fn cmd_train(cfg: &ExperimentConfig, input: InputKind, out: &Path) -> Result<TrialResult> {
    check_precision(cfg)?;
    fs::create_dir_all(out)?;
    let ds = cfg.dataset_or(SynthConfig::directions())?;
    let inputs = prepare_inputs(cfg, &ds, input, None)?;
    let front = match cfg.network.front_end {
        FrontEndKind::Complex => FrontChoice::Learned {
            filters: cfg.network.front.filters,
            kernel: cfg.network.front.kernel,
        },
        FrontEndKind::Plain => FrontChoice::Plain {
            filters: cfg.network.front.filters,
            kernel: cfg.network.front.kernel,
        },
    };
    let t = run_trial(cfg, "train", &inputs, &front, ds.num_classes(), Some(&out.join("metrics.csv")))?;
    t.model.save(out.join("model.bin"))?;
    let hash = cfg.hash("train")?;
    let names = ds.class_names();
    let rows: Vec<Vec<String>> = t
        .test
        .per_class
        .iter()
        .map(|c| {
            vec![
                names[c.class].clone(),
                c.correct.to_string(),
                c.total.to_string(),
                fmt(c.accuracy),
                hash.clone(),
            ]
        })
        .collect();
    write_csv(&out.join("eval.csv"), &["class", "correct", "total", "test_acc", "config_hash"], &rows)?;
    write_manifest(
        out,
        "train",
        cfg.train.seed,
        &hash,
        vec!["model.bin".into(), "model.json".into(), "metrics.csv".into(), "eval.csv".into()],
    )?;
    Ok(t)
}

/// Named bank presets accepted by the filter commands.
pub fn bank_preset(name: &str) -> Result<FilterBankSpec> {
    match name {
        "quadrature24" => Ok(FilterBankSpec::small(BankMode::Quadrature)),
        "perpendicular24" => Ok(FilterBankSpec::small(BankMode::Perpendicular)),
        "quadrature96" => Ok(FilterBankSpec::wide(BankMode::Quadrature)),
        "perpendicular96" => Ok(FilterBankSpec::wide(BankMode::Perpendicular)),
        _ => Err(Error::config(format!("unknown bank '{name}'"))),
    }
}

pub const BANK_PRESETS: [&str; 4] = ["quadrature24", "perpendicular24", "quadrature96", "perpendicular96"];

fn bank_grid(bank: &ComplexFilterBank, imag: bool) -> Result<image::RgbImage> {
    let kernels: Vec<Tensor<f64>> = bank
        .kernels
        .iter()
        .map(|k| if imag { k.imag.clone() } else { k.real.clone() })
        .collect();
    let (rows, cols) = grid_dims(kernels.len(), bank.spec.orientations.len());
    tile_grid(&kernels, rows, cols, 4)
}

/// Writes each named bank as a container, a JSON sidecar and real/imaginary grids.
pub fn cmd_gen_filters(names: &[String], out: &Path) -> Result<Vec<ComplexFilterBank>> {
    fs::create_dir_all(out)?;
    let mut banks = Vec::new();
    let mut outputs = Vec::new();
    for name in names {
        let bank = make_bank(&bank_preset(name)?)?;
        bank.to_container()?.save(out.join(format!("{name}.bin")))?;
        fs::write(out.join(format!("{name}.json")), serde_json::to_string_pretty(&bank.sidecar())?)?;
        bank_grid(&bank, false)?.save(out.join(format!("{name}_real.png")))?;
        bank_grid(&bank, true)?.save(out.join(format!("{name}_imag.png")))?;
        outputs.extend([
            format!("{name}.bin"),
            format!("{name}.json"),
            format!("{name}_real.png"),
            format!("{name}_imag.png"),
        ]);
        banks.push(bank);
    }
    let hash = hex::encode(Sha256::digest(serde_json::to_vec(names)?));
    write_manifest(out, "gen-filters", 0, &hash, outputs)?;
    Ok(banks)
}

fn clip_hash(clip: &VideoClip<f32>, extra: &str) -> String {
    let mut h = Sha256::new();
    h.update(extra.as_bytes());
    for f in &clip.frames {
        for v in f.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Per-frame phase images `[T, F, H, W]` under the phase bank.
pub fn cmd_extract_phase(cfg: &ExperimentConfig, clip_dir: &Path, out: &Path) -> Result<Tensor<f32>> {
    let clip = load_frames(clip_dir)?;
    let bank = make_bank(&cfg.phase_bank)?;
    let phases: Vec<Tensor<f32>> = clip.frames.iter().map(|f| phase_image(f, &bank)).collect::<Result<_>>()?;
    let all = Tensor::stack(&phases)?;
    fs::create_dir_all(out)?;
    let mut c = Container::single("phase", &all);
    c.metadata = serde_json::json!({ "bank": cfg.phase_bank });
    c.save(out.join("phase.bin"))?;
    let hash = clip_hash(&clip, &serde_json::to_string(&cfg.phase_bank)?);
    write_manifest(out, "extract-phase", 0, &hash, vec!["phase.bin".into()])?;
    Ok(all)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreprocessMode {
    Dgray,
    Drgb,
    Dphase,
}

/// Temporal maps of one clip, optionally stacked, saved as one container.
pub fn cmd_preprocess(
    cfg: &ExperimentConfig,
    clip_dir: &Path,
    mode: PreprocessMode,
    stack_depth: usize,
    out: &Path,
) -> Result<Vec<MotionInput<f32>>> {
    let clip = load_frames(clip_dir)?;
    let maps = match mode {
        PreprocessMode::Dgray => temporal_derivative(&clip, DerivativeKind::Gray)?,
        PreprocessMode::Drgb => temporal_derivative(&clip, DerivativeKind::Rgb)?,
        PreprocessMode::Dphase => temporal_phase_derivative(&clip, &make_bank(&cfg.phase_bank)?, true)?,
    };
    let maps = if stack_depth > 1 {
        let lo = stack_depth / 2;
        if maps.len() < stack_depth {
            return Err(Error::shape(format!(
                "clip yields {} maps, stacking needs {stack_depth}",
                maps.len()
            )));
        }
        (lo..=maps.len() - stack_depth + lo)
            .map(|t| stack(&maps, t, stack_depth))
            .collect::<Result<_>>()?
    } else {
        maps
    };
    fs::create_dir_all(out)?;
    let mut c = Container::new();
    for (i, m) in maps.iter().enumerate() {
        c.push(&format!("map_{i:05}"), &m.data);
    }
    c.metadata = serde_json::json!({ "mode": mode, "stack_depth": stack_depth, "count": maps.len() });
    c.save(out.join("maps.bin"))?;
    let hash = clip_hash(&clip, &format!("{mode:?}{stack_depth}"));
    write_manifest(out, "preprocess", 0, &hash, vec!["maps.bin".into()])?;
    Ok(maps)
}

/// Generates and saves a synthetic dataset; returns its content hash.
pub fn cmd_synth_data(cfg: &ExperimentConfig, preset: &str, out: &Path) -> Result<String> {
    let mut sc = cfg.dataset.clone().map(Ok).unwrap_or_else(|| SynthConfig::preset(preset))?;
    sc.seed = cfg.train.seed;
    let ds = synth_dataset(&sc)?;
    let sha = save_dataset(&ds, out)?;
    write_manifest(out, "synth-data", sc.seed, &sha, vec![crate::synth::DATASET_MANIFEST.into()])?;
    Ok(sha)
}

/// Renders dGray and dPhase maps of a clip, the perpendicular and quadrature banks,
/// and the learned filters of a checkpoint when given.
pub fn cmd_visualize(
    cfg: &ExperimentConfig,
    clip_dir: Option<&Path>,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<Vec<String>> {
    fs::create_dir_all(out)?;
    let clip = match clip_dir {
        Some(d) => load_frames(d)?,
        None => {
            let mut sc = SynthConfig::directions();
            sc.seed = cfg.train.seed;
            crate::synth::render_clip(&sc, 0, crate::synth::Split::Test, 0)?
        }
    };
    let mut outputs = Vec::new();
    let mid = |n: usize| (n - 1) / 2;
    let dg = temporal_derivative(&clip, DerivativeKind::Gray)?;
    let m = &dg[mid(dg.len())].data;
    let (h, w) = (m.shape()[1], m.shape()[2]);
    render_signed(&m.clone().reshape(&[h, w])?, 8)?.save(out.join("dgray.png"))?;
    outputs.push("dgray.png".to_string());
    let bank = make_bank(&cfg.phase_bank)?;
    let dp = temporal_phase_derivative(&clip, &bank, true)?;
    render_signed(&dp[mid(dp.len())].data.clone().reshape(&[h, w])?, 8)?.save(out.join("dphase.png"))?;
    outputs.push("dphase.png".to_string());
    for name in ["perpendicular96", "quadrature24"] {
        let b = make_bank(&bank_preset(name)?)?;
        bank_grid(&b, true)?.save(out.join(format!("bank_{name}.png")))?;
        outputs.push(format!("bank_{name}.png"));
    }
    if let Some(path) = checkpoint {
        let model = Model::<f32>::load(path)?;
        let layer = model
            .complex_layer()
            .ok_or_else(|| Error::config("checkpoint has no complex front-end"))?;
        let k = layer.kernel_size();
        let w = layer.imag_weights();
        // Channel 0 of each filter.
        let kernels: Vec<Tensor<f32>> = (0..layer.filters())
            .map(|f| Tensor::from_fn(&[k, k], |i| w.get(&[f, 0, i[0], i[1]])))
            .collect();
        let (rows, cols) = grid_dims(kernels.len(), 8);
        tile_grid(&kernels, rows, cols, 4)?.save(out.join("learned_filters.png"))?;
        outputs.push("learned_filters.png".to_string());
    }
    let hash = clip_hash(&clip, &serde_json::to_string(cfg)?);
    write_manifest(out, "visualize", cfg.train.seed, &hash, outputs.clone())?;
    Ok(outputs)
}
