use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::{cosine_lr, optimizer_step, AdamW, OptimizerState};
use super::{accumulate_row, argmax, cross_entropy, forward_into, HeadParams, Scratch};
use crate::calibration::{derive_rng, stream};
use crate::dataset::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::eval::balanced_accuracy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Main-loop epochs.
    pub n_max: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Mine hard samples after every `n_mine` main epochs.
    pub n_mine: usize,
    /// A sample is hard when its loss exceeds `delta` times the mean loss.
    pub delta: f64,
    /// Extra epochs over the hard subset per mining event.
    pub n_hard: usize,
    /// Attention hidden width; `dim / 2` when unset.
    pub hidden: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_max: 1200,
            lr_max: 1e-4,
            lr_min: 1e-6,
            batch_size: 256,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            n_mine: 30,
            delta: 1.2,
            n_hard: 1,
            hidden: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Checks the invariants; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::config(msg.to_string()));
        if self.n_max == 0 {
            return fail("n_max: must be at least 1");
        }
        self.validate_steps()
    }

    // everything except n_max, which `train` tolerates being zero
    fn validate_steps(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::config(msg.to_string()));
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return fail("lr_min: must satisfy 0 < lr_min <= lr_max");
        }
        if self.batch_size == 0 {
            return fail("batch_size: must be at least 1");
        }
        if self.n_mine == 0 {
            return fail("n_mine: must be at least 1");
        }
        if !(self.delta > 0.0) {
            return fail("delta: must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1/beta2: must lie in [0, 1)");
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return fail("eps/weight_decay: eps must be positive, weight_decay non-negative");
        }
        if self.hidden == Some(0) {
            return fail("hidden: must be at least 1");
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamW {
        AdamW {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn hidden_for(&self, dim: usize) -> usize {
        self.hidden.unwrap_or((dim / 2).max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's mini-batches.
    pub mean_loss: f64,
    /// Balanced accuracy of the predictions made while training the epoch.
    pub balanced_accuracy: f64,
    pub n_hard_mined: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: HeadParams,
    pub log: Vec<EpochMetrics>,
}

/// Per-row cross-entropy under frozen parameters.
pub fn sample_losses(p: &HeadParams, set: &EmbeddingDataset) -> Result<Vec<f64>> {
    if set.dim() != p.dim {
        return Err(Error::validation(format!(
            "dataset dim {} does not match head dim {}",
            set.dim(),
            p.dim
        )));
    }
    if set.n_classes() > p.n_classes {
        return Err(Error::validation("dataset has more classes than the head"));
    }
    Ok((0..set.len())
        .into_par_iter()
        .map_init(
            || Scratch::new(p),
            |s, i| {
                forward_into(p, set.row(i), s);
                cross_entropy(s.logits(), set.label(i))
            },
        )
        .collect())
}

/// Indices whose loss is strictly greater than `delta` times the mean loss.
pub fn hard_indices(losses: &[f64], delta: f64) -> Vec<usize> {
    if losses.is_empty() {
        return Vec::new();
    }
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    let threshold = delta * mean;
    losses
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > threshold)
        .map(|(i, _)| i)
        .collect()
}

pub fn mine_hard_samples(p: &HeadParams, set: &EmbeddingDataset, delta: f64) -> Result<Vec<usize>> {
    if set.is_empty() {
        return Err(Error::validation("cannot mine an empty set"));
    }
    Ok(hard_indices(&sample_losses(p, set)?, delta))
}

struct Trainer<'a> {
    set: &'a EmbeddingDataset,
    params: HeadParams,
    grads: HeadParams,
    state: OptimizerState,
    scratch: Scratch,
    adamw: AdamW,
    batch_size: usize,
}

impl Trainer<'_> {
    /// One pass over `order` in mini-batches; returns the mean loss and the
    /// prediction made for each visited row.
    fn epoch(&mut self, order: &[usize], lr: f64) -> (f64, Vec<(usize, usize)>) {
        let mut total = 0.0;
        let mut seen = Vec::with_capacity(order.len());
        for batch in order.chunks(self.batch_size) {
            self.grads.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let label = self.set.label(i);
                total += accumulate_row(
                    &self.params,
                    self.set.row(i),
                    label,
                    scale,
                    &mut self.grads,
                    &mut self.scratch,
                );
                seen.push((argmax(self.scratch.logits()), label));
            }
            optimizer_step(
                &mut self.params,
                &self.grads,
                &mut self.state,
                lr,
                &self.adamw,
            );
        }
        (total / order.len() as f64, seen)
    }
}

/// Trains a freshly initialised head on `set`.
///
/// Each main epoch shuffles the full set; after every `n_mine`-th main epoch
/// the hard samples are mined with the current parameters and trained on for
/// `n_hard` extra epochs at the current learning rate. The schedule only
/// advances with main epochs.
pub fn train(set: &EmbeddingDataset, config: &TrainConfig) -> Result<TrainOutput> {
    config.validate_steps()?;
    if set.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if set.n_classes() < 2 {
        return Err(Error::config("training needs at least two classes"));
    }
    let dim = set.dim();
    let n_classes = set.n_classes();
    let mut init_rng = derive_rng(config.seed, stream::TRAIN_INIT, 0, 0);
    let params = HeadParams::init(dim, config.hidden_for(dim), n_classes, &mut init_rng);

    let mut t = Trainer {
        set,
        grads: HeadParams::zeros(params.dim, params.hidden, params.n_classes),
        state: OptimizerState::new(&params),
        scratch: Scratch::new(&params),
        params,
        adamw: config.adamw(),
        batch_size: config.batch_size,
    };

    let mut log = Vec::with_capacity(config.n_max);
    let mut order: Vec<usize> = (0..set.len()).collect();
    for epoch in 1..=config.n_max {
        let lr = cosine_lr(epoch - 1, config);
        order.shuffle(&mut derive_rng(
            config.seed,
            stream::TRAIN_SHUFFLE,
            epoch as u64,
            0,
        ));
        let (mean_loss, seen) = t.epoch(&order, lr);
        let (preds, labels): (Vec<usize>, Vec<usize>) = seen.into_iter().unzip();
        let bacc = balanced_accuracy(&preds, &labels, n_classes)?;

        let mut n_hard_mined = 0;
        if epoch % config.n_mine == 0 {
            let mut hard = mine_hard_samples(&t.params, set, config.delta)?;
            n_hard_mined = hard.len();
            log::debug!("epoch {epoch}: mined {n_hard_mined} hard samples");
            if !hard.is_empty() {
                for pass in 0..config.n_hard {
                    let mut rng = derive_rng(
                        config.seed,
                        stream::TRAIN_SHUFFLE,
                        epoch as u64,
                        pass as u64 + 1,
                    );
                    hard.shuffle(&mut rng);
                    t.epoch(&hard, lr);
                }
            }
        }
        log.push(EpochMetrics {
            epoch,
            lr,
            mean_loss,
            balanced_accuracy: bacc,
            n_hard_mined,
        });
        if epoch % 100 == 0 || epoch == config.n_max {
            log::info!(
                "epoch {epoch}/{}: loss {mean_loss:.5}, train bacc {bacc:.4}",
                config.n_max
            );
        }
    }
    Ok(TrainOutput {
        params: t.params,
        log,
    })
}

pub fn write_metrics_csv(log: &[EpochMetrics], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    writeln!(buf, "epoch,lr,mean_loss,balanced_accuracy,n_hard_mined").unwrap();
    for m in log {
        writeln!(
            buf,
            "{},{},{},{},{}",
            m.epoch, m.lr, m.mean_loss, m.balanced_accuracy, m.n_hard_mined
        )
        .unwrap();
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
