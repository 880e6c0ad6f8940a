use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use phasestream::experiments::{
    cmd_exp1a, cmd_exp1b, cmd_exp1c, cmd_extract_phase, cmd_gen_filters, cmd_preprocess, cmd_synth_data, cmd_train,
    cmd_visualize, ExperimentConfig, PreprocessMode, BANK_PRESETS,
};
use phasestream::net::InputKind;
use phasestream::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "phasestream", version, about = "Phase-based motion representations and desk-scale experiments")]
struct Cli {
    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for data generation, initialization and sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fixed quadrature/perpendicular banks vs a learned front-end (exp1a.csv).
    #[command(name = "exp1a-filters")]
    Exp1aFilters,
    /// Input modalities x {plain, phase} architectures (exp1b.csv, exp1b_per_class.csv).
    #[command(name = "exp1b-inputs")]
    Exp1bInputs,
    /// Standard vs temporally shuffled evaluation (exp1c.csv).
    #[command(name = "exp1c-shuffle")]
    Exp1cShuffle,
    /// Train one model and save its checkpoint, metrics and evaluation.
    Train {
        /// dgray, drgb, dphase, dgray5 or dphase5.
        #[arg(long, default_value = "dgray")]
        input: String,
    },
    /// Render dGray/dPhase maps, bank grids and learned filters.
    Visualize {
        /// Frame directory; a synthetic clip is used when omitted.
        #[arg(long)]
        clip: Option<PathBuf>,
        /// Checkpoint whose learned filters are rendered.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Generate and save a synthetic dataset.
    #[command(name = "synth-data")]
    SynthData {
        /// directions, order_sensitive, orientation_rich or mixed.
        #[arg(long, default_value = "directions")]
        preset: String,
    },
    /// Write Gabor bank presets as containers, sidecars and grids.
    #[command(name = "gen-filters")]
    GenFilters {
        /// Bank preset; repeatable. All presets when omitted.
        #[arg(long = "bank")]
        banks: Vec<String>,
    },
    /// Per-frame phase maps of a clip under the configured phase bank.
    #[command(name = "extract-phase")]
    ExtractPhase {
        #[arg(long)]
        clip: PathBuf,
    },
    /// Temporal derivative maps of a clip, optionally stacked.
    Preprocess {
        #[arg(long)]
        clip: PathBuf,
        #[arg(long, value_enum, default_value = "dgray")]
        mode: Mode,
        #[arg(long, default_value_t = 1)]
        stack: usize,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Mode {
    Dgray,
    Drgb,
    Dphase,
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Exp1aFilters => {
            for r in cmd_exp1a(&cfg, Some(out))? {
                println!("{:<28} train {:.3} test {:.3}", r.name, r.train_acc, r.test_acc);
            }
        }
        Command::Exp1bInputs => {
            for c in cmd_exp1b(&cfg, Some(out))? {
                println!("{:<10} {:<8} test {:.3}", c.input.label(), c.architecture, c.test_acc);
            }
        }
        Command::Exp1cShuffle => {
            for r in cmd_exp1c(&cfg, Some(out))? {
                println!(
                    "{:<10} {:<16} standard {:.3} shuffled {:.3} change {:.3}",
                    r.input.label(), r.scope, r.standard_acc, r.shuffled_acc, r.relative_change
                );
            }
        }
        Command::Train { input } => {
            let t = cmd_train(&cfg, InputKind::parse(&input)?, out)?;
            println!("train {:.3} test {:.3}", t.train.accuracy, t.test.accuracy);
        }
        Command::Visualize { clip, checkpoint } => {
            for f in cmd_visualize(&cfg, clip.as_deref(), checkpoint.as_deref(), out)? {
                println!("{}", out.join(f).display());
            }
        }
        Command::SynthData { preset } => {
            println!("{}", cmd_synth_data(&cfg, &preset, out)?);
        }
        Command::GenFilters { banks } => {
            let names = if banks.is_empty() {
                BANK_PRESETS.iter().map(|s| s.to_string()).collect()
            } else {
                banks
            };
            for (name, b) in names.iter().zip(cmd_gen_filters(&names, out)?) {
                println!("{name}: {} kernels", b.kernels.len());
            }
        }
        Command::ExtractPhase { clip } => {
            let p = cmd_extract_phase(&cfg, &clip, out)?;
            println!("phase maps {:?}", p.shape());
        }
        Command::Preprocess { clip, mode, stack } => {
            let mode = match mode {
                Mode::Dgray => PreprocessMode::Dgray,
                Mode::Drgb => PreprocessMode::Drgb,
                Mode::Dphase => PreprocessMode::Dphase,
            };
            let maps = cmd_preprocess(&cfg, &clip, mode, stack, out)?;
            println!("{} maps", maps.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
