//! Mini-batch training with seeded shuffling and exact resumption.

use super::adam::OptimizerState;
use super::checkpoint::Checkpoint;
use crate::data::ImagePair;
use crate::model::ECFNet;
use crate::rng::substream;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Root seed for initialisation and shuffling.
    pub seed: u64,
    /// Stop after this many optimiser steps even if epochs remain; 0 means no cap.
    pub max_steps: usize,
    /// Write a checkpoint every this many steps; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Print the loss every this many steps; 0 disables logging.
    pub log_every: usize,
    pub manifest: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            epochs: 50,
            batch_size: 10,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            max_steps: 0,
            checkpoint_every: 0,
            log_every: 0,
            manifest: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.lr.is_nan() || self.lr < 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps.is_nan() || self.eps < 0.0 {
            return Err(Error::Config("lr and eps must be non-negative, betas in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn batches_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    /// Steps a full run takes on `n` samples.
    pub fn total_steps(&self, n: usize) -> usize {
        let full = self.epochs * self.batches_per_epoch(n);
        if self.max_steps == 0 { full } else { full.min(self.max_steps) }
    }
}

/// Sample order of one epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, &format!("shuffle/epoch{epoch}")));
    order
}

/// One line of the loss curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub wall_ms: f64,
}

/// A model with its optimiser and position in the schedule.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: ECFNet<f32>,
    pub optimizer: OptimizerState<f32>,
    pub config: TrainConfig,
    /// Completed optimiser steps.
    pub step: usize,
}

impl Trainer {
    pub fn new(model: ECFNet<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = OptimizerState::new(&model.params, config.lr, config.beta1, config.beta2, config.eps);
        Ok(Trainer { model, optimizer, config, step: 0 })
    }

    /// Resumes from a checkpoint. The checkpoint's seed and optimiser settings win over `config`.
    pub fn from_checkpoint(ckpt: Checkpoint, config: TrainConfig) -> Result<Self> {
        let model = ECFNet::with_params(ckpt.model, ckpt.params)?;
        let o = &ckpt.optimizer;
        let config = TrainConfig { seed: ckpt.seed, lr: o.lr, beta1: o.beta1, beta2: o.beta2, eps: o.eps, ..config };
        config.validate()?;
        Ok(Trainer { model, optimizer: ckpt.optimizer, config, step: ckpt.step as usize })
    }

    pub fn checkpoint(&self, n: usize, config_hash: &str) -> Checkpoint {
        Checkpoint {
            model: self.model.config().clone(),
            params: self.model.params.clone(),
            optimizer: self.optimizer.clone(),
            seed: self.config.seed,
            step: self.step as u64,
            epoch: (self.step / self.config.batches_per_epoch(n).max(1)) as u64,
            config_hash: config_hash.to_string(),
        }
    }

    /// Samples of the next step, in accumulation order.
    fn next_batch(&self, n: usize) -> (usize, Vec<usize>) {
        let per_epoch = self.config.batches_per_epoch(n);
        let (epoch, b) = (self.step / per_epoch, self.step % per_epoch);
        let order = epoch_order(self.config.seed, epoch, n);
        let end = ((b + 1) * self.config.batch_size).min(n);
        (epoch, order[b * self.config.batch_size..end].to_vec())
    }

    /// One optimiser step; the reported loss is the batch mean.
    pub fn train_step(&mut self, data: &[ImagePair]) -> Result<StepRecord> {
        if data.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let start = Instant::now();
        let (epoch, batch) = self.next_batch(data.len());
        let weight = 1.0 / batch.len() as f64;
        self.model.params.zero_grads();
        let mut total = 0.0;
        for &i in &batch {
            let p = &data[i];
            total += self.model.accumulate_gradients(&p.lr, &p.reference, &p.hr, weight).map_err(|e| match e {
                Error::NonFinite { op, node, .. } => Error::NonFinite { op, node, step: self.step },
                e => e,
            })?;
        }
        self.optimizer.step(&mut self.model.params)?;
        if let Some((name, _)) = self.model.params.iter().find(|(_, t)| !t.is_finite()) {
            return Err(Error::NonFinite { op: "adam", node: self.model.params.id(name).map_or(0, |id| id.0), step: self.step });
        }
        self.step += 1;
        Ok(StepRecord { step: self.step, epoch, loss: total / batch.len() as f64, wall_ms: start.elapsed().as_secs_f64() * 1e3 })
    }

    /// Trains until the schedule ends, calling `on_step` after every step.
    pub fn run(&mut self, data: &[ImagePair], mut on_step: impl FnMut(&Trainer, &StepRecord) -> Result<()>) -> Result<Vec<StepRecord>> {
        let total = self.config.total_steps(data.len());
        let mut curve = Vec::with_capacity(total.saturating_sub(self.step));
        while self.step < total {
            let rec = self.train_step(data)?;
            on_step(self, &rec)?;
            curve.push(rec);
        }
        Ok(curve)
    }
}

/// Trains a fresh model built from `model_config` and seeded by `config.seed`.
pub fn train(model_config: crate::model::ModelConfig, data: &[ImagePair], config: &TrainConfig) -> Result<(ECFNet<f32>, Vec<StepRecord>)> {
    let model = ECFNet::new(model_config, config.seed)?;
    let mut t = Trainer::new(model, config.clone())?;
    let curve = t.run(data, |_, _| Ok(()))?;
    Ok((t.model, curve))
}

const CURVE_HEADER: &str = "step,epoch,loss,wall_ms";

/// Writes the loss curve as CSV, or appends to an existing file when `append` is set.
pub fn write_loss_curve(path: impl AsRef<Path>, records: &[StepRecord], append: bool) -> Result<()> {
    let path = path.as_ref();
    let exists = append && path.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(exists)
        .truncate(!exists)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if !exists {
        w.write_record(CURVE_HEADER.split(','))?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a loss curve written by [`write_loss_curve`].
pub fn read_loss_curve(path: impl AsRef<Path>) -> Result<Vec<StepRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().collect::<Vec<_>>().join(",") != CURVE_HEADER {
        return Err(Error::format("loss curve", format!("expected header `{CURVE_HEADER}`")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
