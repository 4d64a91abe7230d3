//! The training loop: seeded shuffling and augmentation, cross-entropy
//! over augmented batches, Adam with cosine-annealed learning rate,
//! per-epoch validation mIoU, and a snapshot of the best-validation
//! parameters (plus optimizer moments) for checkpointing.

use rand::prelude::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, Dataset, LabelMap, SegSample};
use crate::error::{Error, Result};
use crate::model::Csrnet;
use crate::ops::Mode;
use crate::params::{zero_grads, HasParams};
use crate::tensor::{Scalar, Tensor4};
use crate::train::adam::{AdamConfig, AdamState};
use crate::train::loss::{cross_entropy_loss, IGNORE_INDEX};
use crate::train::metrics::{evaluate, stack_images};
use crate::train::schedule::cosine_lr;

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// training crop size; must be divisible by 32
    pub crop: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_init: 4e-4,
            lr_min: 1e-6,
            weight_decay: 1e-4,
            batch_size: 8,
            epochs: 30,
            seed: 0,
            crop: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_init > 0.0 && self.lr_min > 0.0 && self.lr_min <= self.lr_init) {
            return Err(Error::Config(format!(
                "require 0 < lr_min <= lr_init, got lr_init {} lr_min {}",
                self.lr_init, self.lr_min
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        if self.crop % 32 != 0 || self.crop == 0 {
            return Err(Error::Config(format!(
                "crop {} must be a positive multiple of 32",
                self.crop
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_miou: f64,
}

impl EpochLog {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}",
            self.epoch, self.lr, self.train_loss, self.val_miou
        )
    }
}

pub struct TrainResult<T> {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_miou: f64,
    /// every parameter slot at the best-validation epoch
    pub best_params: Vec<(String, Tensor4<T>)>,
    /// optimizer moments at the best-validation epoch, as flat tensors
    /// keyed adam.m.<slot> / adam.v.<slot>, plus adam.step
    pub best_optim: Vec<(String, Tensor4<T>)>,
}

fn snapshot_params<T: Scalar>(model: &mut Csrnet<T>) -> Vec<(String, Tensor4<T>)> {
    let mut pairs = model.params_mut();
    pairs.sort_by(|a, b| a.0.cmp(&b.0));
    pairs
        .into_iter()
        .map(|(name, p)| (name, p.value.clone()))
        .collect()
}

fn snapshot_optim<T: Scalar>(adam: &AdamState<T>) -> Vec<(String, Tensor4<T>)> {
    let mut out = vec![(
        "adam.step".to_string(),
        Tensor4::full(1, 1, 1, 1, T::from_f64(adam.step as f64)),
    )];
    for (name, (m, v)) in &adam.moments {
        out.push((
            format!("adam.m.{name}"),
            Tensor4::from_vec(1, m.len(), 1, 1, m.clone()).expect("moment length"),
        ));
        out.push((
            format!("adam.v.{name}"),
            Tensor4::from_vec(1, v.len(), 1, 1, v.clone()).expect("moment length"),
        ));
    }
    out
}

/// Names the first parameter slot holding a non-finite value or gradient.
fn first_non_finite_slot<T: Scalar>(model: &mut Csrnet<T>) -> Option<String> {
    let mut pairs = model.params_mut();
    pairs.sort_by(|a, b| a.0.cmp(&b.0));
    for (name, p) in pairs {
        if p.value.data().iter().any(|v| !v.is_finite()) {
            return Some(format!("{name} (value)"));
        }
        if p.grad.data().iter().any(|v| !v.is_finite()) {
            return Some(format!("{name} (gradient)"));
        }
    }
    None
}

/// Deterministic for a fixed seed: data order, augmentation draws and
/// initialization all come from seeded generators.
pub fn train<T: Scalar>(
    model: &mut Csrnet<T>,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainResult<T>> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("train and val sets must be non-empty".into()));
    }

    let mut adam = AdamState::new(AdamConfig {
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best_epoch = 0usize;
    let mut best_miou = f64::NEG_INFINITY;
    let mut best_params = Vec::new();
    let mut best_optim = Vec::new();

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr_init, cfg.lr_min);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let samples: Vec<SegSample<T>> = chunk
                .iter()
                .map(|&i| {
                    let s = SegSample::<T>::from_raw(&train_set.samples[i]);
                    augment(&s, cfg.crop, &mut rng)
                })
                .collect();
            let batch = stack_images(&samples);
            let labels: Vec<LabelMap> = samples.into_iter().map(|s| s.labels).collect();

            zero_grads(model);
            let out = model.forward(&batch, Mode::Train)?;
            let loss = cross_entropy_loss(&out.logits, &labels, IGNORE_INDEX)?;
            let loss_f64 = loss.loss.to_f64();
            if !loss_f64.is_finite() {
                model.backward(&loss.grad_logits).ok();
                let slot = first_non_finite_slot(model)
                    .unwrap_or_else(|| "logits (no non-finite slot found)".to_string());
                return Err(Error::NonFinite {
                    op: "train".to_string(),
                    what: format!("loss at epoch {epoch}, batch {batches}; first suspect: {slot}"),
                });
            }
            model.backward(&loss.grad_logits)?;
            adam.step(model, lr);
            loss_sum += loss_f64;
            batches += 1;
        }

        let report = evaluate(model, val_set, cfg.batch_size)?;
        let entry = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / batches.max(1) as f64,
            val_miou: report.miou,
        };
        log.push(entry);

        if report.miou > best_miou {
            best_miou = report.miou;
            best_epoch = epoch;
            best_params = snapshot_params(model);
            best_optim = snapshot_optim(&adam);
        }
    }

    Ok(TrainResult {
        log,
        best_epoch,
        best_miou,
        best_params,
        best_optim,
    })
}
