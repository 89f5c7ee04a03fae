//! Lateral inhibition gating layer.
//!
//! Features suppress each other through an off-diagonal weight matrix: the
//! gate pre-activation for feature i is a weighted sum of the other features
//! plus a bias, and the output is the input multiplied elementwise by the
//! gate. The spiking gate is a hard threshold, trained with a
//! surrogate-sigmoid derivative in the backward pass; the relaxed gate is
//! the sigmoid itself, making the whole layer differentiable for oracle
//! comparisons.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nn::{Ctx, ParamSet};
use crate::rng::Rng;
use crate::tape::linalg::{mm_nn, mm_nt, mm_tn};
use crate::tape::{CustomOp, Var};
use crate::tensor::Tensor;
use crate::Element;

/// Copy of a square matrix with its diagonal set to zero.
pub fn zero_diag<E: Element>(w: &Tensor<E>) -> Result<Tensor<E>> {
    let s = w.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(Error::shape("zero_diag", format!("expected square matrix, got {s:?}")));
    }
    let n = s[0];
    let mut out = w.clone();
    for i in 0..n {
        out.data_mut()[i * n + i] = E::ZERO;
    }
    Ok(out)
}

/// Elementwise step: 1 where x > 0, else 0 (0 at exactly 0).
pub fn heaviside<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = if v.to_f64() > 0.0 { E::ONE } else { E::ZERO };
    }
    out
}

fn sigmoid_scalar(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Steepened sigmoid σ_k(x) = 1/(1+e^{−kx}) and its derivative
/// k·σ_k(x)·σ_k(−x), returned as (value, derivative).
pub fn surrogate_sigmoid(x: f64, k: f64) -> (f64, f64) {
    let s = sigmoid_scalar(k * x);
    (s, k * s * (1.0 - s))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiMode {
    /// Hard threshold gate; backward substitutes the surrogate derivative.
    #[default]
    Spiking,
    /// Sigmoid gate; backward is the true gradient.
    Relaxed,
}

/// Forward-pass products needed by [`li_backward`].
pub struct LiForward<E: Element> {
    pub out: Tensor<E>,
    /// The gate actually applied (threshold or sigmoid depending on mode).
    pub gate: Tensor<E>,
    /// σ_k of the pre-activation, kept in both modes: the backward pass
    /// derives the surrogate derivative from it.
    pub gate_relaxed: Tensor<E>,
}

/// Gradients of the gated output with respect to the layer inputs.
pub struct LiGrads<E: Element> {
    pub dx: Tensor<E>,
    pub dw: Tensor<E>,
    pub db: Tensor<E>,
}

/// out = x ⊙ g(x·zero_diag(W) + b): threshold gate when spiking, sigmoid
/// gate when relaxed.
pub fn li_forward<E: Element>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    b: &Tensor<E>,
    k: f64,
    mode: LiMode,
) -> Result<LiForward<E>> {
    if x.rank() != 2 {
        return Err(Error::shape("li_forward", format!("x must be (B,N), got {:?}", x.shape())));
    }
    let (bsz, n) = (x.shape()[0], x.shape()[1]);
    if w.shape() != [n, n] || b.shape() != [1, n] {
        return Err(Error::shape(
            "li_forward",
            format!(
                "width mismatch: x {:?} needs W ({n},{n}) and b (1,{n}), got W {:?}, b {:?}",
                x.shape(),
                w.shape(),
                b.shape()
            ),
        ));
    }
    let zdw = zero_diag(w)?;
    let mut a = Tensor::<E>::zeros(vec![bsz, n]);
    mm_nn(x.data(), zdw.data(), a.data_mut(), bsz, n, n);
    for r in 0..bsz {
        for c in 0..n {
            let v = a.data()[r * n + c].add(b.data()[c]);
            a.data_mut()[r * n + c] = v;
        }
    }
    let gate_relaxed = a.map(|v| E::from_f64(sigmoid_scalar(k * v.to_f64())));
    let gate = match mode {
        LiMode::Spiking => heaviside(&a),
        LiMode::Relaxed => gate_relaxed.clone(),
    };
    let mut out = x.clone();
    for (o, g) in out.data_mut().iter_mut().zip(gate.data()) {
        *o = o.mul(*g);
    }
    Ok(LiForward { out, gate, gate_relaxed })
}

/// Backward pass for `out = x ⊙ gate`, substituting the surrogate
/// k·σ_k(a)·σ_k(−a) for the gate derivative. In relaxed mode this is the
/// exact gradient; in spiking mode only the gate derivative is replaced, the
/// gate value itself stays the threshold from the forward pass.
pub fn li_backward<E: Element>(
    upstream: &Tensor<E>,
    x: &Tensor<E>,
    w: &Tensor<E>,
    gate: &Tensor<E>,
    gate_relaxed: &Tensor<E>,
    k: f64,
) -> Result<LiGrads<E>> {
    let (bsz, n) = (x.shape()[0], x.shape()[1]);
    if upstream.shape() != x.shape() {
        return Err(Error::shape(
            "li_backward",
            format!("upstream {:?} does not match x {:?}", upstream.shape(), x.shape()),
        ));
    }
    let ke = E::from_f64(k);

    // s = upstream ⊙ x ⊙ g'(a), g' = k·σ_k(a)·(1−σ_k(a)) in both modes.
    let mut s = Tensor::<E>::zeros(vec![bsz, n]);
    for i in 0..bsz * n {
        let gr = gate_relaxed.data()[i];
        let gprime = ke.mul(gr).mul(E::ONE.sub(gr));
        s.data_mut()[i] = upstream.data()[i].mul(x.data()[i]).mul(gprime);
    }

    // ∂x = upstream ⊙ gate + s @ zero_diag(W)ᵀ
    let zdw = zero_diag(w)?;
    let mut dx = Tensor::<E>::zeros(vec![bsz, n]);
    for i in 0..bsz * n {
        dx.data_mut()[i] = upstream.data()[i].mul(gate.data()[i]);
    }
    mm_nt(s.data(), zdw.data(), dx.data_mut(), bsz, n, n);

    // ∂W = xᵀ @ s, diagonal zeroed (it never entered the forward pass).
    let mut dw = Tensor::<E>::zeros(vec![n, n]);
    mm_tn(x.data(), s.data(), dw.data_mut(), n, bsz, n);
    let dw = zero_diag(&dw)?;

    // ∂b = column sums of s.
    let mut db = Tensor::<E>::zeros(vec![1, n]);
    for r in 0..bsz {
        for c in 0..n {
            let v = db.data()[c].add(s.data()[r * n + c]);
            db.data_mut()[c] = v;
        }
    }
    Ok(LiGrads { dx, dw, db })
}

/// The custom tape node wrapping [`li_forward`] and [`li_backward`].
/// Inputs are [x, W, b].
#[derive(Debug)]
struct LiOp {
    k: f64,
    mode: LiMode,
}

impl<E: Element> CustomOp<E> for LiOp {
    fn name(&self) -> &'static str {
        "lateral_inhibition"
    }

    fn forward(&self, inputs: &[&Tensor<E>]) -> Result<(Tensor<E>, Vec<Tensor<E>>)> {
        let fwd = li_forward(inputs[0], inputs[1], inputs[2], self.k, self.mode)?;
        Ok((fwd.out, vec![fwd.gate, fwd.gate_relaxed]))
    }

    fn backward(
        &self,
        upstream: &Tensor<E>,
        saved: &[Tensor<E>],
        inputs: &[&Tensor<E>],
    ) -> Result<Vec<Option<Tensor<E>>>> {
        let grads = li_backward(upstream, inputs[0], inputs[1], &saved[0], &saved[1], self.k)?;
        Ok(vec![Some(grads.dx), Some(grads.dw), Some(grads.db)])
    }
}

/// Layer wrapper: owns the parameter names, registers W (zero), b (+0.1,
/// gates open at init so the layer starts as the identity), and the
/// steepness k as a non-trainable buffer.
pub struct LiLayer {
    pub name: String,
    pub n: usize,
    pub mode: LiMode,
}

pub const DEFAULT_K: f64 = 10.0;
pub const DEFAULT_BIAS: f64 = 0.1;

impl LiLayer {
    pub fn new(name: impl Into<String>, n: usize, mode: LiMode) -> Self {
        LiLayer { name: name.into(), n, mode }
    }

    pub fn init<E: Element>(&self, ps: &mut ParamSet<E>, _rng: &mut Rng) {
        ps.insert(format!("{}.W", self.name), Tensor::zeros(vec![self.n, self.n]), true);
        ps.insert(
            format!("{}.b", self.name),
            Tensor::full(vec![1, self.n], E::from_f64(DEFAULT_BIAS)),
            true,
        );
        ps.insert(format!("{}.k", self.name), Tensor::scalar(E::from_f64(DEFAULT_K)), false);
    }

    /// x: (B, N) → (B, N)
    pub fn forward<E: Element>(&self, ctx: &mut Ctx<E>, x: Var) -> Result<Var> {
        let w = ctx.bound.var(&format!("{}.W", self.name))?;
        let b = ctx.bound.var(&format!("{}.b", self.name))?;
        let kv = ctx.bound.var(&format!("{}.k", self.name))?;
        let k = ctx.tape.value(kv).item()?.to_f64();
        if k <= 0.0 {
            return Err(Error::invalid("li_forward", format!("steepness k must be positive, got {k}")));
        }
        ctx.tape.custom(&[x, w, b], Rc::new(LiOp { k, mode: self.mode }))
    }
}

#[cfg(test)]
mod tests;
