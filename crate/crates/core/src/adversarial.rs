//! Domain-adversarial training: gradient reversal, the language
//! discriminator, and the combined loss.
//!
//! The minimax objective L_y − λ·L_d is trained with a single backward pass:
//! the discriminator branch reads the shared features through a gradient
//! reversal node, so descending the combined graph descends L_d in the
//! discriminator parameters while ascending it in the feature extractor.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv1dLayer, Ctx, Linear, ParamSet};
use crate::rng::Rng;
use crate::tape::{CustomOp, Tape, Var};
use crate::tensor::Tensor;
use crate::Element;

#[derive(Debug)]
struct GrlOp {
    lambda: f64,
}

impl<E: Element> CustomOp<E> for GrlOp {
    fn name(&self) -> &'static str {
        "gradient_reversal"
    }

    fn forward(&self, inputs: &[&Tensor<E>]) -> Result<(Tensor<E>, Vec<Tensor<E>>)> {
        Ok((inputs[0].clone(), Vec::new()))
    }

    fn backward(
        &self,
        upstream: &Tensor<E>,
        _saved: &[Tensor<E>],
        _inputs: &[&Tensor<E>],
    ) -> Result<Vec<Option<Tensor<E>>>> {
        let scale = E::from_f64(-self.lambda);
        Ok(vec![Some(upstream.map(|v| v.mul(scale)))])
    }
}

/// Gradient reversal: identity forward, −λ·upstream backward.
///
/// At λ=0 the backward contribution is a zero tensor; training code that
/// wants exact baseline equivalence should skip the adversarial branch
/// entirely instead of relying on zeros washing out.
pub fn grl<E: Element>(tape: &mut Tape<E>, x: Var, lambda: f64) -> Result<Var> {
    if lambda < 0.0 {
        return Err(Error::invalid("grl", format!("lambda must be non-negative, got {lambda}")));
    }
    tape.custom(&[x], Rc::new(GrlOp { lambda }))
}

/// Language discriminator: three same-padded temporal convolutions (kernel
/// 5) with ReLU after each, mean-pooled over time, then a linear layer to
/// per-domain logits.
pub struct Discriminator {
    pub name: String,
    pub features: usize,
    pub width: usize,
    pub num_domains: usize,
    convs: Vec<Conv1dLayer>,
    fc: Linear,
}

impl Discriminator {
    pub fn new(name: impl Into<String>, features: usize, width: usize, num_domains: usize) -> Self {
        let name = name.into();
        let convs = (1..=3)
            .map(|i| {
                let in_c = if i == 1 { features } else { width };
                Conv1dLayer::same(format!("{name}.conv{i}"), in_c, width, 5, 1)
            })
            .collect();
        let fc = Linear::new(format!("{name}.fc"), width, num_domains);
        Discriminator { name, features, width, num_domains, convs, fc }
    }

    pub fn init<E: Element>(&self, ps: &mut ParamSet<E>, rng: &mut Rng) {
        for c in &self.convs {
            c.init(ps, rng);
        }
        self.fc.init(ps, rng);
    }

    /// features: (B, T, F) → domain logits (B, num_domains)
    pub fn forward<E: Element>(&self, ctx: &mut Ctx<E>, x: Var) -> Result<Var> {
        let shape = ctx.tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.features {
            return Err(Error::shape(
                "discriminate",
                format!("{} expects (B,T,{}), got {:?}", self.name, self.features, shape),
            ));
        }
        let mut h = ctx.tape.permute(x, &[0, 2, 1])?;
        for c in &self.convs {
            let y = c.forward(ctx, h)?;
            h = ctx.tape.relu(y);
        }
        let pooled = ctx.tape.mean_axes(h, &[2])?;
        let pooled = ctx.tape.reshape(pooled, vec![shape[0], self.width])?;
        self.fc.forward(ctx, pooled)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSchedule {
    Constant,
    /// λ(p) = λ_max·(2/(1+e^{−10p}) − 1), ramping from 0 to ~λ_max over
    /// training progress p ∈ [0, 1].
    Ramp,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DaConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_schedule")]
    pub schedule: LambdaSchedule,
    #[serde(default = "default_num_domains")]
    pub num_domains: usize,
    /// Discriminator conv width; defaults to the feature width.
    #[serde(default)]
    pub disc_width: Option<usize>,
}

fn default_lambda() -> f64 {
    0.1
}
fn default_schedule() -> LambdaSchedule {
    LambdaSchedule::Constant
}
fn default_num_domains() -> usize {
    2
}

impl Default for DaConfig {
    fn default() -> Self {
        DaConfig {
            lambda: default_lambda(),
            schedule: default_schedule(),
            num_domains: default_num_domains(),
            disc_width: None,
        }
    }
}

impl DaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::invalid(
                "da_config",
                format!("lambda must be finite and non-negative, got {}", self.lambda),
            ));
        }
        if self.num_domains < 2 {
            return Err(Error::invalid(
                "da_config",
                format!("num_domains must be at least 2, got {}", self.num_domains),
            ));
        }
        Ok(())
    }

    /// Effective λ at training progress p ∈ [0, 1].
    pub fn lambda_at(&self, progress: f64) -> f64 {
        let p = progress.clamp(0.0, 1.0);
        match self.schedule {
            LambdaSchedule::Constant => self.lambda,
            LambdaSchedule::Ramp => self.lambda * (2.0 / (1.0 + (-10.0 * p).exp()) - 1.0),
        }
    }
}

/// Combined objective built from the two branch losses.
pub struct DaLoss {
    /// Backward target: L_y + L_d, with the discriminator branch behind a
    /// [`grl`] node so feature gradients see −λ·∂L_d.
    pub total: Var,
    /// The minimax value L_y − λ·L_d, for logging.
    pub reported: f64,
}

/// Combine a label loss and a discriminator loss that was computed on
/// grl-wrapped features. Both must be scalars already on the tape.
pub fn da_loss<E: Element>(tape: &mut Tape<E>, l_y: Var, l_d: Var, lambda: f64) -> Result<DaLoss> {
    let ly_val = tape.value(l_y).item()?.to_f64();
    let ld_val = tape.value(l_d).item()?.to_f64();
    let total = tape.add(l_y, l_d)?;
    Ok(DaLoss { total, reported: ly_val - lambda * ld_val })
}

#[cfg(test)]
mod tests;
