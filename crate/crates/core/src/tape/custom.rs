//! Extension point for ops with hand-written backward rules.

use crate::error::Result;
use crate::tensor::{Element, Tensor};
use std::fmt;

/// An operation the tape records opaquely.
///
/// `forward` computes the output and may stash tensors for the backward pass
/// (activations, masks). `backward` receives the upstream gradient, whatever
/// was stashed, and the original input values, and returns one gradient
/// contribution per input; `None` means no gradient flows to that input.
///
/// The backward rule does not have to be the true derivative of the forward
/// map. Surrogate-gradient and gradient-reversal layers rely on exactly that
/// freedom.
pub trait CustomOp<E: Element>: fmt::Debug {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor<E>]) -> Result<(Tensor<E>, Vec<Tensor<E>>)>;

    fn backward(
        &self,
        upstream: &Tensor<E>,
        saved: &[Tensor<E>],
        inputs: &[&Tensor<E>],
    ) -> Result<Vec<Option<Tensor<E>>>>;
}
