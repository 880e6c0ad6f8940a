//! Loss, optimization steps, the batch pipeline and evaluation.

use std::io::Write;
use std::sync::mpsc::sync_channel;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Batch, BatchSource, MotionDataset};
use super::{Mode, Model};
use crate::error::{Error, Result};
use crate::numerics::layers::softmax_cross_entropy;
use crate::numerics::optim::{LrSchedule, SgdMomentumState};
use crate::phase::Tying;
use crate::tensor::{r, DType, Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub base_lr: f64,
    pub decay_steps: Vec<u64>,
    pub decay_factor: f64,
    pub dropout: f64,
    pub max_iterations: u64,
    pub seed: u64,
    /// Write a metrics row every this many iterations (and after the last one).
    pub log_every: u64,
    pub precision: DType,
}

impl TrainConfig {
    /// Batch 32, 2000 iterations, decay at 900 and 1500, dropout 0.5.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 32,
            momentum: 0.9,
            base_lr: 0.01,
            decay_steps: vec![900, 1500],
            decay_factor: 0.1,
            dropout: 0.5,
            max_iterations: 2000,
            seed: 0,
            log_every: 10,
            precision: DType::F32,
        }
    }

    /// Batch 256, 100k iterations, decay at 45k and 75k, dropout 0.9.
    pub fn full_scale() -> Self {
        TrainConfig {
            batch_size: 256,
            decay_steps: vec![45_000, 75_000],
            dropout: 0.9,
            max_iterations: 100_000,
            log_every: 100,
            ..Self::desk()
        }
    }

    /// Shortened schedule keeping the decay points at 45% and 75% of the run.
    pub fn scaled(iterations: u64) -> Self {
        TrainConfig {
            max_iterations: iterations,
            decay_steps: vec![iterations * 45 / 100, iterations * 75 / 100],
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_iterations == 0 {
            return Err(Error::config("batch size and iteration count must be positive"));
        }
        if self.decay_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("decay steps must be strictly increasing"));
        }
        if self.decay_steps.last().is_some_and(|&s| s >= self.max_iterations) {
            return Err(Error::config("decay steps must precede the final iteration"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.base_lr < 0.0 || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("learning rate must be >= 0 and momentum in [0, 1)"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base_lr: self.base_lr,
            decay_steps: self.decay_steps.clone(),
            decay_factor: self.decay_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub iteration: u64,
    pub loss: f64,
    pub accuracy: f64,
    /// Regularizer value, for learned complex front-ends.
    pub regularizer: Option<f64>,
    pub lr: f64,
}

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn predictions<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits.data().chunks(k).map(argmax).collect()
}

impl<T: Real> Model<T> {
    /// Cross-entropy plus the weighted regularizer on a training-mode forward pass.
    /// The dropout mask comes from `dropout_seed`.
    pub fn loss(&mut self, batch: &Batch<T>, dropout: f64, dropout_seed: u64) -> Result<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let (logits, _) = self.forward_tape(&batch.inputs, Mode::Train { dropout }, &mut rng)?;
        let (ce, _) = softmax_cross_entropy(&logits, &batch.labels)?;
        Ok(ce + self.weighted_regularizer()?)
    }

    pub(crate) fn weighted_regularizer(&self) -> Result<T> {
        match self.complex_layer() {
            Some(l) if l.tying() == Tying::Perpendicular && l.reg_weight > 0.0 => {
                Ok(r::<T>(l.reg_weight) * self.regularizer()?.unwrap_or_else(T::zero))
            }
            _ => Ok(T::zero()),
        }
    }

    /// Computes the loss and fills every parameter gradient, without stepping.
    pub fn loss_and_grad(&mut self, batch: &Batch<T>, dropout: f64, dropout_seed: u64) -> Result<(T, Vec<usize>)> {
        self.zero_grad();
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let (logits, tape) = self.forward_tape(&batch.inputs, Mode::Train { dropout }, &mut rng)?;
        let (ce, grad) = softmax_cross_entropy(&logits, &batch.labels)?;
        if !ce.is_finite() {
            let layer = self.locate_non_finite(&batch.inputs);
            return Err(Error::Training {
                iteration: self.iteration,
                layer,
                reason: format!("loss is {ce}"),
            });
        }
        self.backward(grad, tape.expect("training mode records a tape"))?;
        self.add_regularizer_grad()?;
        Ok((ce + self.weighted_regularizer()?, predictions(&logits)))
    }
}

/// One forward/backward/update with momentum SGD, followed by re-tying the complex
/// front-end. The dropout mask is drawn from `(config.seed, iteration)`.
pub fn train_step<T: Real>(model: &mut Model<T>, batch: &Batch<T>, config: &TrainConfig) -> Result<StepMetrics> {
    let iteration = model.iteration;
    let dropout_seed = config.seed ^ iteration.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let (loss, preds) = model.loss_and_grad(batch, config.dropout, dropout_seed)?;
    for (name, p) in model.param_names().iter().zip(model.params()) {
        if p.trainable && p.grad.first_non_finite().is_some() {
            return Err(Error::Training {
                iteration,
                layer: name.clone(),
                reason: "non-finite gradient".into(),
            });
        }
    }
    let regularizer = model.regularizer()?.map(|v| v.to_f64());
    let mut optimizer = model
        .optimizer
        .take()
        .unwrap_or_else(|| SgdMomentumState::new(config.momentum, config.schedule()));
    optimizer.momentum = config.momentum;
    optimizer.schedule = config.schedule();
    let lr = optimizer.learning_rate(iteration);
    optimizer.step_params(&mut model.params_mut(), iteration)?;
    model.optimizer = Some(optimizer);
    if let super::FrontEnd::Complex { layer, .. } = &mut model.front {
        layer.sync_tied_weights();
    }
    model.iteration += 1;
    let correct = preds.iter().zip(&batch.labels).filter(|(a, b)| a == b).count();
    Ok(StepMetrics {
        iteration,
        loss: loss.to_f64(),
        accuracy: correct as f64 / batch.labels.len() as f64,
        regularizer,
        lr,
    })
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub steps: Vec<StepMetrics>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }
}

pub const METRICS_HEADER: [&str; 5] = ["iteration", "loss", "accuracy", "regularizer", "lr"];

fn write_row<W: Write>(w: &mut csv::Writer<W>, m: &StepMetrics) -> Result<()> {
    w.write_record([
        m.iteration.to_string(),
        format!("{:.9}", m.loss),
        format!("{:.6}", m.accuracy),
        m.regularizer.map(|v| format!("{v:.9}")).unwrap_or_default(),
        format!("{:e}", m.lr),
    ])?;
    Ok(())
}

/// Trains until `config.max_iterations`, with batches produced one step ahead on a
/// separate thread through a bounded queue. Batches depend only on
/// `(config.seed, iteration)`, so the run is identical however the threads interleave.
pub fn train<T: Real, S: BatchSource<T> + ?Sized>(
    model: &mut Model<T>,
    config: &TrainConfig,
    source: &S,
    metrics: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    config.validate()?;
    let mut writer = metrics.map(csv::Writer::from_writer);
    if let Some(w) = writer.as_mut() {
        w.write_record(METRICS_HEADER)?;
    }
    let start = model.iteration;
    let end = config.max_iterations;
    let mut steps = Vec::new();
    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = sync_channel::<Result<Batch<T>>>(2);
        scope.spawn(move || {
            for it in start..end {
                let b = source.batch(it, config.batch_size, config.seed);
                let failed = b.is_err();
                if tx.send(b).is_err() || failed {
                    break;
                }
            }
        });
        for batch in rx.iter() {
            let m = train_step(model, &batch?, config)?;
            let last = model.iteration >= end;
            if let Some(w) = writer.as_mut() {
                if m.iteration % config.log_every.max(1) == 0 || last {
                    write_row(w, &m)?;
                }
            }
            steps.push(m);
            if last {
                break;
            }
        }
        Ok(())
    })?;
    if let Some(mut w) = writer {
        w.flush()?;
    }
    Ok(TrainReport { steps })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub per_class: Vec<ClassAccuracy>,
    pub predictions: Vec<usize>,
}

/// Inference-mode accuracy over every clip, with a per-class breakdown.
pub fn evaluate<T: Real>(model: &mut Model<T>, dataset: &MotionDataset<T>) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::shape("cannot evaluate an empty dataset"));
    }
    let n = model.config.n_classes;
    let mut correct = vec![0usize; n];
    let mut total = vec![0usize; n];
    let mut preds = Vec::with_capacity(dataset.len());
    let mut start = 0;
    while start < dataset.len() {
        let batch = dataset.eval_batch(start, 64)?;
        let logits = model.predict(&batch.inputs)?;
        for (p, &l) in predictions(&logits).into_iter().zip(&batch.labels) {
            if l >= n {
                return Err(Error::shape(format!("label {l} out of range for {n} classes")));
            }
            total[l] += 1;
            if p == l {
                correct[l] += 1;
            }
            preds.push(p);
        }
        start += batch.labels.len();
    }
    let all: usize = correct.iter().sum();
    let count: usize = total.iter().sum();
    Ok(EvalReport {
        accuracy: all as f64 / count as f64,
        correct: all,
        total: count,
        per_class: (0..n)
            .map(|c| ClassAccuracy {
                class: c,
                correct: correct[c],
                total: total[c],
                accuracy: if total[c] > 0 { correct[c] as f64 / total[c] as f64 } else { 0.0 },
            })
            .collect(),
        predictions: preds,
    })
}
