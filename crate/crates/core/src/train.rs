//! Training loop and task evaluation.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::CsiArray;
use crate::error::{contract, invalid, Error, Result};
use crate::metrics::{nmse, task_region, Nmse};
use crate::model::{LossScope, Model};
use crate::optim::{lr_at, AdamHyper, AdamState, Schedule};
use crate::seed;
use crate::tokenizer::{build_mask, tokenize, MaskKind, MaskSpec, TokenGrid};

/// Hidden fraction per task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRatios {
    pub random: f64,
    pub temporal: f64,
    pub frequency: f64,
}

impl Default for MaskRatios {
    fn default() -> Self {
        Self {
            random: 0.85,
            temporal: 0.5,
            frequency: 0.5,
        }
    }
}

impl MaskRatios {
    pub fn get(&self, kind: MaskKind) -> f64 {
        match kind {
            MaskKind::Random => self.random,
            MaskKind::Temporal => self.temporal,
            MaskKind::Frequency => self.frequency,
        }
    }
}

fn default_tasks() -> Vec<MaskKind> {
    MaskKind::ALL.to_vec()
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub ratios: MaskRatios,
    /// Mask kinds cycled round-robin, one per batch.
    #[serde(default = "default_tasks")]
    pub tasks: Vec<MaskKind>,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub loss_scope: LossScope,
    /// Reduce per-sample gradients in a fixed order.
    #[serde(default = "yes")]
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            lr: 8e-4,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.05,
            warmup_epochs: 10,
            batch_size: 16,
            seed: 0,
            ratios: MaskRatios::default(),
            tasks: default_tasks(),
            schedule: Schedule::Constant,
            loss_scope: LossScope::Masked,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs", "must be at least 1"));
        }
        if self.warmup_epochs > self.epochs {
            return Err(invalid("warmup_epochs", "must not exceed epochs"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid("lr", "must be finite and positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid(name, "must lie in [0, 1)"));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(invalid("weight_decay", "must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        if self.tasks.is_empty() {
            return Err(invalid("tasks", "need at least one mask kind"));
        }
        for kind in MaskKind::ALL {
            let r = self.ratios.get(kind);
            if !(r > 0.0 && r < 1.0) {
                return Err(invalid(&format!("ratios.{kind}"), format!("must lie in (0, 1), got {r}")));
            }
        }
        Ok(())
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Validation NMSE per task; empty when there is no validation data.
    pub val: Vec<(MaskKind, Nmse)>,
}

pub const METRICS_HEADER: &str = "epoch,task,split,nmse_db,loss";

impl EpochMetrics {
    /// Rows for the metrics CSV (`epoch,task,split,nmse_db,loss`).
    pub fn write_rows<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{},mixed,train,,{}", self.epoch, self.train_loss)?;
        for (kind, n) in &self.val {
            writeln!(w, "{},{kind},val,{},", self.epoch, n.db)?;
        }
        Ok(())
    }
}

/// Model, optimizer state and metric history.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    pub model: Model,
    pub opt: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub log: Vec<EpochMetrics>,
}

/// Mask used for `sample` at `epoch` (0 for evaluation).
pub fn sample_mask(grid: &TokenGrid, kind: MaskKind, ratio: f64, seed_: u64, epoch: usize, sample: usize) -> Result<MaskSpec> {
    build_mask(
        &grid.layout,
        kind,
        ratio,
        seed::derive(seed_, &[seed::name_key("mask"), epoch as u64, sample as u64]),
    )
}

fn tokenize_all(samples: &[CsiArray], model: &Model) -> Result<Vec<TokenGrid>> {
    samples.par_iter().map(|s| tokenize(s, model.config.patch)).collect()
}

fn add_into(acc: &mut [Option<Vec<f64>>], g: &[Option<Vec<f64>>]) {
    for (a, g) in acc.iter_mut().zip(g) {
        if let (Some(a), Some(g)) = (a.as_mut(), g) {
            a.iter_mut().zip(g).for_each(|(x, y)| *x += y);
        }
    }
}

impl TrainRun {
    pub fn new(model: Model) -> Self {
        Self {
            opt: AdamState::new(&model.params),
            model,
            epoch: 0,
            log: Vec::new(),
        }
    }

    /// Mean loss and gradient over one batch.
    pub fn batch_gradient(
        &self,
        grids: &[&TokenGrid],
        masks: &[MaskSpec],
        scope: LossScope,
        deterministic: bool,
    ) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
        let per: Vec<(f64, Vec<Option<Vec<f64>>>)> = grids
            .par_iter()
            .zip(masks.par_iter())
            .map(|(g, m)| self.model.loss_and_grads(g, m, scope))
            .collect::<Result<_>>()?;
        let reduce = |mut a: (f64, Vec<Option<Vec<f64>>>), b: (f64, Vec<Option<Vec<f64>>>)| {
            a.0 += b.0;
            add_into(&mut a.1, &b.1);
            a
        };
        let mut it = per.into_iter();
        let first = it.next().ok_or_else(|| contract("empty batch"))?;
        let (loss, mut grads) = if deterministic {
            it.fold(first, reduce)
        } else {
            it.collect::<Vec<_>>().into_par_iter().reduce(|| first.clone(), reduce)
        };
        let inv = 1.0 / grids.len() as f64;
        for g in grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= inv);
        }
        Ok((loss * inv, grads))
    }

    /// Train until `cfg.epochs` epochs are complete, resuming after
    /// `self.epoch`. `on_epoch` sees each epoch's metrics as they land.
    pub fn train(
        &mut self,
        cfg: &TrainConfig,
        train: &[CsiArray],
        val: &[CsiArray],
        mut on_epoch: impl FnMut(&EpochMetrics),
    ) -> Result<()> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(contract("no training samples"));
        }
        let grids = tokenize_all(train, &self.model)?;
        let val_grids = tokenize_all(val, &self.model)?;
        let hp = cfg.hyper();
        let batches_per_epoch = grids.len().div_ceil(cfg.batch_size);
        for epoch in self.epoch + 1..=cfg.epochs {
            let lr = lr_at(cfg.lr, epoch, cfg.warmup_epochs, cfg.epochs, cfg.schedule);
            let mut order: Vec<usize> = (0..grids.len()).collect();
            order.shuffle(&mut seed::rng(cfg.seed, &[seed::name_key("shuffle"), epoch as u64]));
            let mut total = 0.0;
            for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let global = (epoch - 1) * batches_per_epoch + b;
                let kind = cfg.tasks[global % cfg.tasks.len()];
                let ratio = cfg.ratios.get(kind);
                let batch: Vec<&TokenGrid> = chunk.iter().map(|&i| &grids[i]).collect();
                let masks = chunk
                    .iter()
                    .map(|&i| sample_mask(&grids[i], kind, ratio, cfg.seed, epoch, i))
                    .collect::<Result<Vec<_>>>()?;
                let (loss, grads) = self.batch_gradient(&batch, &masks, cfg.loss_scope, cfg.deterministic)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, loss });
                }
                self.opt.step(&mut self.model.params, &grads, lr, &hp)?;
                total += loss;
            }
            let val_scores = if val_grids.is_empty() {
                Vec::new()
            } else {
                cfg.tasks
                    .iter()
                    .map(|&kind| Ok((kind, evaluate_grids(&self.model, &val_grids, kind, cfg.ratios.get(kind), cfg.seed)?)))
                    .collect::<Result<Vec<_>>>()?
            };
            let m = EpochMetrics {
                epoch,
                lr,
                train_loss: total / batches_per_epoch as f64,
                val: val_scores,
            };
            on_epoch(&m);
            self.log.push(m);
            self.epoch = epoch;
        }
        Ok(())
    }
}

/// Mean linear NMSE over samples on the task region, in linear and dB form.
/// Random masks are keyed by `seed` and the sample position.
pub fn evaluate_grids(model: &Model, grids: &[TokenGrid], kind: MaskKind, ratio: f64, seed_: u64) -> Result<Nmse> {
    if grids.is_empty() {
        return Err(contract("no evaluation samples"));
    }
    let per: Vec<f64> = grids
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let mask = sample_mask(g, kind, ratio, seed_, 0, i)?;
            let pred = model.predict(g, &mask)?;
            let target = g.detokenize()?;
            Ok(nmse(&pred, &target, &task_region(&g.layout, &mask))?.linear)
        })
        .collect::<Result<_>>()?;
    Ok(Nmse::from_linear(per.iter().sum::<f64>() / per.len() as f64))
}

pub fn evaluate(model: &Model, samples: &[CsiArray], kind: MaskKind, ratio: f64, seed_: u64) -> Result<Nmse> {
    evaluate_grids(model, &tokenize_all(samples, model)?, kind, ratio, seed_)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub dataset: String,
    pub dims: [usize; 3],
    pub task: MaskKind,
    pub n_samples: usize,
    pub nmse: Nmse,
}

pub const EVAL_HEADER: &str = "dataset,t,k,u,task,n_samples,nmse_linear,nmse_db";

impl EvalRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.dataset, self.dims[0], self.dims[1], self.dims[2], self.task, self.n_samples, self.nmse.linear, self.nmse.db
        )
    }
}

/// Every `(dataset, task)` pair. Extents may differ from training: rotary
/// coordinates and sinusoidal tables both extend to unseen positions.
pub fn evaluate_suite(
    model: &Model,
    datasets: &[(String, Vec<CsiArray>)],
    tasks: &[MaskKind],
    ratios: &MaskRatios,
    seed_: u64,
) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::new();
    for (name, samples) in datasets {
        let grids = tokenize_all(samples, model)?;
        let dims = samples.first().ok_or_else(|| contract(format!("dataset {name} is empty")))?.dims;
        for &task in tasks {
            rows.push(EvalRow {
                dataset: name.clone(),
                dims: dims.as_array(),
                task,
                n_samples: samples.len(),
                nmse: evaluate_grids(model, &grids, task, ratios.get(task), seed_)?,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            warmup_epochs: 200,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig { field, .. }) if field == "warmup_epochs"));
    }

    #[test]
    fn metrics_rows() {
        let m = EpochMetrics {
            epoch: 3,
            lr: 1e-3,
            train_loss: 0.5,
            val: vec![(MaskKind::Temporal, Nmse::from_linear(0.1))],
        };
        let mut buf = Vec::new();
        m.write_rows(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "3,mixed,train,,0.5\n3,temporal,val,-10,\n");
    }
}
