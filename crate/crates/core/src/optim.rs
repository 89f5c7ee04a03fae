//! Optimizers and the learning-rate schedule.
//!
//! Gradients live on the tape of the step that produced them; the optimizer
//! reads them through the name → variable binding and writes updated values
//! back into the parameter set. A parameter with no gradient this step is
//! treated as having a zero gradient, so weight decay and state decay still
//! apply.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Bound, ParamSet};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::Element;

/// Cosine annealing: lr_min + 0.5·(lr0 − lr_min)·(1 + cos(π·t/T)).
pub fn cosine_lr(t: usize, total: usize, lr0: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let frac = (t.min(total)) as f64 / total as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Plain gradient descent: θ ← θ − lr·g over every trainable entry.
pub fn sgd_step<E: Element>(
    params: &mut ParamSet<E>,
    tape: &Tape<E>,
    bound: &Bound,
    lr: f64,
) -> Result<()> {
    let lr_e = E::from_f64(lr);
    for entry in params.entries_mut() {
        if !entry.trainable {
            continue;
        }
        let var = bound.var(&entry.name)?;
        let Some(grad) = tape.grad(var) else { continue };
        for (p, &g) in entry.tensor.data_mut().iter_mut().zip(grad.data()) {
            *p = p.sub(lr_e.mul(g));
        }
    }
    Ok(())
}

/// Adam with decoupled weight decay:
/// θ ← θ − lr·(m̂/(√v̂ + eps) + weight_decay·θ).
pub struct Adam<E: Element> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: HashMap<String, Tensor<E>>,
    v: HashMap<String, Tensor<E>>,
}

impl<E: Element> Adam<E> {
    pub fn new(weight_decay: f64) -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, t: 0, m: HashMap::new(), v: HashMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over every trainable entry, at the given learning rate.
    /// Missing gradients count as zeros.
    pub fn step(
        &mut self,
        params: &mut ParamSet<E>,
        tape: &Tape<E>,
        bound: &Bound,
        lr: f64,
    ) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let b1 = E::from_f64(self.beta1);
        let b2 = E::from_f64(self.beta2);
        let one_b1 = E::from_f64(1.0 - self.beta1);
        let one_b2 = E::from_f64(1.0 - self.beta2);
        let inv_bc1 = E::from_f64(1.0 / bc1);
        let inv_bc2 = E::from_f64(1.0 / bc2);
        let lr_e = E::from_f64(lr);
        let eps = E::from_f64(self.eps);
        let wd = E::from_f64(self.weight_decay);

        for entry in params.entries_mut() {
            if !entry.trainable {
                continue;
            }
            let var = bound.var(&entry.name)?;
            let grad = tape.grad(var);
            let n = entry.tensor.numel();
            let m = self
                .m
                .entry(entry.name.clone())
                .or_insert_with(|| Tensor::zeros(entry.tensor.shape().to_vec()));
            let v = self
                .v
                .entry(entry.name.clone())
                .or_insert_with(|| Tensor::zeros(entry.tensor.shape().to_vec()));
            if m.numel() != n {
                return Err(Error::invalid(
                    "adam_step",
                    format!("state shape for {} does not match parameter", entry.name),
                ));
            }
            for i in 0..n {
                let g = match grad {
                    Some(t) => t.data()[i],
                    None => E::ZERO,
                };
                let mi = b1.mul(m.data()[i]).add(one_b1.mul(g));
                let vi = b2.mul(v.data()[i]).add(one_b2.mul(g.mul(g)));
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi.mul(inv_bc1);
                let vhat = vi.mul(inv_bc2);
                let p = entry.tensor.data()[i];
                let update = mhat.div(vhat.sqrt().add(eps)).add(wd.mul(p));
                entry.tensor.data_mut()[i] = p.sub(lr_e.mul(update));
            }
        }
        Ok(())
    }
}

/// Training hyperparameters shared by every experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainHyper {
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    #[serde(default)]
    pub lr_min: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Label smoothing ε; 0 keeps hard one-hot targets.
    #[serde(default = "default_label_smooth")]
    pub label_smooth: f64,
    /// Beta(α, α) mixup; absent disables mixing.
    #[serde(default = "default_mixup_alpha")]
    pub mixup_alpha: Option<f64>,
    /// DropBlock on frontend activations; absent disables it.
    #[serde(default = "default_dropblock")]
    pub dropblock: Option<DropBlockCfg>,
    #[serde(default = "default_flip_prob")]
    pub flip_prob: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropBlockCfg {
    pub keep_prob: f64,
    pub block_size: usize,
}

fn default_lr0() -> f64 {
    3e-4
}
fn default_weight_decay() -> f64 {
    1e-4
}
fn default_epochs() -> usize {
    40
}
fn default_batch_size() -> usize {
    16
}
fn default_label_smooth() -> f64 {
    0.1
}
fn default_mixup_alpha() -> Option<f64> {
    Some(0.4)
}
fn default_dropblock() -> Option<DropBlockCfg> {
    Some(DropBlockCfg { keep_prob: 0.9, block_size: 3 })
}
fn default_flip_prob() -> f64 {
    0.5
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr0: default_lr0(),
            lr_min: 0.0,
            weight_decay: default_weight_decay(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            label_smooth: default_label_smooth(),
            mixup_alpha: default_mixup_alpha(),
            dropblock: default_dropblock(),
            flip_prob: default_flip_prob(),
        }
    }
}

impl TrainHyper {
    /// A configuration with every stochastic regularizer disabled, for
    /// overfitting checks.
    pub fn regularization_off() -> Self {
        TrainHyper {
            weight_decay: 0.0,
            label_smooth: 0.0,
            mixup_alpha: None,
            dropblock: None,
            flip_prob: 0.0,
            ..TrainHyper::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid("train_hyper", m));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail(format!("lr0 must be positive, got {}", self.lr0));
        }
        if self.lr_min < 0.0 || self.lr_min > self.lr0 {
            return fail(format!("lr_min must lie in [0, lr0], got {}", self.lr_min));
        }
        if self.weight_decay < 0.0 {
            return fail(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.epochs == 0 || self.epochs > 80 {
            return fail(format!("epochs must lie in 1..=80, got {}", self.epochs));
        }
        if !(8..=32).contains(&self.batch_size) {
            return fail(format!("batch_size must lie in 8..=32, got {}", self.batch_size));
        }
        if !(0.0..1.0).contains(&self.label_smooth) {
            return fail(format!("label_smooth must lie in [0, 1), got {}", self.label_smooth));
        }
        if let Some(a) = self.mixup_alpha {
            if !(a > 0.0 && a.is_finite()) {
                return fail(format!("mixup_alpha must be positive, got {a}"));
            }
        }
        if let Some(db) = &self.dropblock {
            if !(db.keep_prob > 0.0 && db.keep_prob <= 1.0) {
                return fail(format!("dropblock keep_prob must lie in (0, 1], got {}", db.keep_prob));
            }
            if db.block_size == 0 || db.block_size % 2 == 0 {
                return fail(format!("dropblock block_size must be odd, got {}", db.block_size));
            }
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return fail(format!("flip_prob must lie in [0, 1], got {}", self.flip_prob));
        }
        Ok(())
    }
}
