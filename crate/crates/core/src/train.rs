//! Mini-batch training, per-epoch evaluation and checkpoint selection.

use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::events::{select_fraction, Dataset, EventSequence, SensorDims};
use crate::model::{InodeConfig, Model, ModelSpec};
use crate::numerics::{clip_global_norm, AdamConfig, AdamState, Matrix};
use crate::preprocess::{assemble_batch, compute_dq, sample_offset, window, Batch, TimeStats, DEFAULT_D_MAX};

/// Everything that determines a training run, given the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelSpec,
    /// Steps per training window.
    pub seq_len: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Batch size at full data; scaled by `rho`.
    pub batch_size: usize,
    /// Fraction of the training set used.
    pub rho: f64,
    pub seed: u64,
    pub eval_lengths: Vec<usize>,
    pub d_max: f64,
    /// Optional global gradient-norm cap.
    pub clip_norm: Option<f64>,
    /// Independent evaluation windows per test item.
    pub eval_repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelSpec::Inode(InodeConfig::standard(10)),
            seq_len: 100,
            epochs: 300,
            lr: 1e-3,
            batch_size: 100,
            rho: 1.0,
            seed: 0,
            eval_lengths: (1..=10).map(|k| 10 * k).collect(),
            d_max: DEFAULT_D_MAX,
            clip_norm: None,
            eval_repeats: 1,
        }
    }
}

impl RunConfig {
    /// `round(rho * batch_size)`, at least one.
    pub fn effective_batch(&self) -> usize {
        ((self.rho * self.batch_size as f64).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Usage(m));
        if self.seq_len == 0 {
            return bad("sequence length must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad(format!("data fraction {} outside (0, 1]", self.rho));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if self.eval_lengths.is_empty() || self.eval_lengths.contains(&0) {
            return bad("evaluation lengths must be positive and non-empty".into());
        }
        if self.eval_repeats == 0 {
            return bad("at least one evaluation repeat is needed".into());
        }
        if self.clip_norm.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return bad("gradient clip must be positive".into());
        }
        Ok(())
    }
}

/// One row of the learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    /// Accuracy per evaluation length, in the order of `MetricsLog::eval_lengths`.
    pub accuracy: Vec<f64>,
    /// Seconds since training started; not part of the CSV.
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub model: String,
    pub eval_lengths: Vec<usize>,
    pub records: Vec<MetricsRecord>,
}

/// Result of evaluating a model on a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Mean per-step cross-entropy over the first `loss_steps` steps.
    pub loss: f64,
    pub lengths: Vec<usize>,
    /// Fraction correct per length, averaged over repeats.
    pub accuracy: Vec<f64>,
    /// Predicted class per length and item, from the first repeat.
    pub predictions: Vec<Vec<usize>>,
}

/// Test items per forward pass during evaluation.
const EVAL_CHUNK: usize = 250;

/// Seeded start offsets of the length-`steps` evaluation windows, one per
/// test item. Each length and repeat draws from its own stream.
pub fn eval_offsets(test: &Dataset, steps: usize, seed: u64, repeat: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((steps as u64) << 16) | repeat as u64);
    test.sequences.iter().map(|s| sample_offset(s.len(), steps, &mut rng)).collect()
}

/// Accuracy after `n` steps for every `n` in `lengths`, by final-step
/// argmax over a seeded window per test item and length, plus the mean
/// per-step test loss over windows of `loss_steps` steps.
pub fn evaluate(
    model: &Model,
    stats: &TimeStats,
    test: &Dataset,
    lengths: &[usize],
    loss_steps: usize,
    seed: u64,
    repeats: usize,
) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Dataset("empty test set".into()));
    }
    if lengths.is_empty() || lengths.contains(&0) || loss_steps == 0 || repeats == 0 {
        return Err(Error::Usage("evaluation lengths, loss steps and repeats must be positive".into()));
    }
    let features = model.features();
    let labels: Vec<usize> = test.sequences.iter().map(|s| s.label).collect();
    let run = |steps: usize, repeat: usize, with_loss: bool| -> Result<(Vec<usize>, f64)> {
        let offsets = eval_offsets(test, steps, seed, repeat);
        let mut preds = Vec::with_capacity(test.len());
        let mut loss_sum = 0.0;
        for (chunk, offs) in test.sequences.chunks(EVAL_CHUNK).zip(offsets.chunks(EVAL_CHUNK)) {
            let subs: Vec<_> = chunk
                .iter()
                .zip(offs)
                .map(|(s, &o)| window(s, o, steps, stats, features))
                .collect();
            let batch = Batch::from_subsequences(&subs, chunk.iter().map(|s| s.label).collect())?;
            let logits = if with_loss {
                let out = model.forward(&batch)?;
                loss_sum += out.loss * batch.size() as f64;
                out.step_logits.last().expect("at least one step").clone()
            } else {
                model.final_logits(&batch)?
            };
            preds.extend(logits.argmax_rows());
        }
        Ok((preds, loss_sum / test.len() as f64))
    };

    let mut correct = vec![0usize; lengths.len()];
    let mut predictions = Vec::with_capacity(lengths.len());
    let mut loss = None;
    for repeat in 0..repeats {
        for (k, &n) in lengths.iter().enumerate() {
            let with_loss = repeat == 0 && n == loss_steps && loss.is_none();
            let (preds, l) = run(n, repeat, with_loss)?;
            if with_loss {
                loss = Some(l);
            }
            correct[k] += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
            if repeat == 0 {
                predictions.push(preds);
            }
        }
    }
    let loss = match loss {
        Some(l) => l,
        None => run(loss_steps, 0, true)?.1,
    };
    let total = (test.len() * repeats) as f64;
    Ok(Evaluation {
        loss,
        lengths: lengths.to_vec(),
        accuracy: correct.iter().map(|&c| c as f64 / total).collect(),
        predictions,
    })
}

/// Evaluation seed derived from a run seed, so evaluation windows do not
/// share a stream with training.
pub fn eval_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

/// Stepwise trainer; [`train`] drives it for the configured epochs.
pub struct Trainer<'d> {
    config: RunConfig,
    model: Model,
    adam: AdamState,
    stats: TimeStats,
    train: Dataset,
    test: &'d Dataset,
    sensor: SensorDims,
    rng: ChaCha8Rng,
    eval_seed: u64,
    started: Instant,
    log: MetricsLog,
    best: Option<(f64, usize, Model)>,
}

impl<'d> Trainer<'d> {
    pub fn new(config: RunConfig, train: &Dataset, test: &'d Dataset) -> Result<Self> {
        config.validate()?;
        if train.is_empty() || test.is_empty() {
            return Err(Error::Dataset("training and test sets must be non-empty".into()));
        }
        let classes = config.model.classes();
        if train.class_count != classes || test.class_count != classes {
            return Err(Error::Usage(format!(
                "model has {classes} classes but the data has {} (train) and {} (test)",
                train.class_count, test.class_count
            )));
        }
        let sensor = train.sensor().ok_or_else(|| Error::Dataset("empty training set".into()))?;
        if test.sensor() != Some(sensor) {
            return Err(Error::Dataset("training and test sensors differ".into()));
        }
        let subset = select_fraction(train, config.rho, config.seed)?;
        let stats = TimeStats::new(compute_dq(&subset)?.d_q, config.d_max)?;
        let model = Model::new(config.model, config.seed);
        let adam = AdamState::new(
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
            model.params(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        info!(
            "{}: {} parameters, {} training sequences, batch {}, d_q = {} us",
            config.model,
            model.param_count(),
            subset.len(),
            config.effective_batch(),
            stats.d_q
        );
        Ok(Trainer {
            log: MetricsLog {
                model: config.model.to_string(),
                eval_lengths: config.eval_lengths.clone(),
                records: Vec::new(),
            },
            eval_seed: eval_seed(config.seed),
            config,
            model,
            adam,
            stats,
            train: subset,
            test,
            sensor,
            rng,
            started: Instant::now(),
            best: None,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn stats(&self) -> TimeStats {
        self.stats
    }

    pub fn log(&self) -> &MetricsLog {
        &self.log
    }

    pub fn epochs_done(&self) -> usize {
        self.log.records.len()
    }

    /// `ceil(N / B)` optimizer steps per epoch.
    pub fn steps_per_epoch(&self) -> usize {
        self.train.len().div_ceil(self.config.effective_batch())
    }

    /// Evaluates the current parameters on the test set.
    pub fn evaluate(&self) -> Result<Evaluation> {
        evaluate(
            &self.model,
            &self.stats,
            self.test,
            &self.config.eval_lengths,
            self.config.seq_len,
            self.eval_seed,
            self.config.eval_repeats,
        )
    }

    /// One pass over the training subset followed by evaluation.
    pub fn run_epoch(&mut self) -> Result<&MetricsRecord> {
        let epoch = self.epochs_done() + 1;
        let features = self.model.features();
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(self.config.effective_batch()).enumerate() {
            let seqs: Vec<&EventSequence> = idx.iter().map(|&i| &self.train.sequences[i]).collect();
            let batch = assemble_batch(&seqs, self.config.seq_len, &mut self.rng, &self.stats, features)?;
            let (loss, mut grads) = self.model.loss_and_gradients(&batch)?;
            if !loss.is_finite() || !grads.iter().all(Matrix::is_finite) {
                return Err(Error::NonFinite { epoch, batch: b });
            }
            if let Some(max) = self.config.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            self.adam.step(self.model.params_mut(), &grads)?;
            loss_sum += loss * batch.size() as f64;
        }
        let train_loss = loss_sum / self.train.len() as f64;
        let eval = self.evaluate()?;
        let score = *eval.accuracy.last().expect("validated non-empty");
        if self.best.as_ref().is_none_or(|(best, _, _)| score > *best) {
            self.best = Some((score, epoch, self.model.clone()));
        }
        let record = MetricsRecord {
            epoch,
            train_loss,
            test_loss: eval.loss,
            accuracy: eval.accuracy,
            wall_seconds: self.started.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: train loss {:.4}, test loss {:.4}, accuracy {:.4} at {} steps",
            record.train_loss,
            record.test_loss,
            score,
            self.config.eval_lengths.last().expect("validated non-empty"),
        );
        debug!("accuracy by length: {:?}", record.accuracy);
        self.log.records.push(record);
        Ok(self.log.records.last().expect("just pushed"))
    }

    fn checkpoint(&self, model: Model) -> Checkpoint {
        Checkpoint::new(
            model,
            self.stats,
            self.sensor,
            self.train.class_names.clone(),
            Some(self.config.clone()),
        )
    }

    pub fn finish(self) -> TrainOutcome {
        let (best_epoch, best_model) = match &self.best {
            Some((_, epoch, model)) => (*epoch, model.clone()),
            None => (0, self.model.clone()),
        };
        TrainOutcome {
            best: self.checkpoint(best_model),
            best_epoch,
            last: self.checkpoint(self.model.clone()),
            metrics: self.log,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the highest accuracy at the longest evaluation length.
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub last: Checkpoint,
    pub metrics: MetricsLog,
}

pub fn train(config: RunConfig, train: &Dataset, test: &Dataset) -> Result<TrainOutcome> {
    let epochs = config.epochs;
    let mut trainer = Trainer::new(config, train, test)?;
    for _ in 0..epochs {
        trainer.run_epoch()?;
    }
    Ok(trainer.finish())
}
