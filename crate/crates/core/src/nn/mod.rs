//! Neural network building blocks on top of the tape.
//!
//! Layers are lightweight descriptors: they know their parameter names and
//! shapes, register tensors into a [`ParamSet`] at init time, and emit tape
//! ops at forward time through a [`Ctx`]. They hold no tensors themselves,
//! which keeps checkpointing, casting and optimizer sweeps in one place.

pub mod gru;
pub mod init;
pub mod layers;
pub mod loss;
pub mod params;

pub use gru::{BiGru, Gru};
pub use layers::{dropout, BatchNorm, Conv1dLayer, Conv2dLayer, Conv3dLayer, Linear, SeBlock};
pub use loss::{row_max, softmax_ce, softmax_rows};
pub use params::{Bound, ParamEntry, ParamSet};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::Element;

/// Forward-pass mode.
///
/// `Train { update_stats: false }` runs batch-statistic normalization and
/// active dropout without touching running statistics; the unlabeled half of
/// an adversarial step uses it so the labeled pipeline stays byte-identical
/// to a run without that half.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train { update_stats: bool },
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train { .. })
    }

    pub fn update_stats(self) -> bool {
        matches!(self, Mode::Train { update_stats: true })
    }
}

/// Everything a layer needs during one forward pass.
pub struct Ctx<'a, E: Element> {
    pub tape: &'a mut Tape<E>,
    pub bound: &'a Bound,
    pub mode: Mode,
    /// Destination for running-statistic updates; required when
    /// `mode.update_stats()`.
    pub stats: Option<&'a mut ParamSet<E>>,
    /// Mask source for dropout-family layers; required in train mode when
    /// any are active.
    pub rng: Option<&'a mut Rng>,
}

impl<'a, E: Element> Ctx<'a, E> {
    pub fn eval(tape: &'a mut Tape<E>, bound: &'a Bound) -> Self {
        Ctx { tape, bound, mode: Mode::Eval, stats: None, rng: None }
    }

    pub(crate) fn rng(&mut self) -> Result<&mut Rng> {
        match self.rng.as_deref_mut() {
            Some(r) => Ok(r),
            None => Err(Error::Training {
                context: "forward".into(),
                message: "train-mode forward needs an rng for stochastic layers".into(),
            }),
        }
    }
}
