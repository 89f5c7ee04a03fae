//! Softmax cross-entropy over soft target rows.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Element;

/// Per-row maximum of a (N, C) tensor, kept as (N, 1) for broadcasting.
pub fn row_max<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let s = x.shape();
    if s.len() != 2 || s[1] == 0 {
        return Err(Error::shape("row_max", format!("expected (N,C) with C >= 1, got {s:?}")));
    }
    let (n, c) = (s[0], s[1]);
    let mut out = Tensor::zeros(vec![n, 1]);
    for i in 0..n {
        let row = &x.data()[i * c..(i + 1) * c];
        let mut m = row[0];
        for &v in &row[1..] {
            m = m.max(v);
        }
        out.data_mut()[i] = m;
    }
    Ok(out)
}

/// Row-wise softmax of a (N, C) tensor, shifted by the row max for stability.
pub fn softmax_rows<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let m = row_max(x)?;
    let s = x.shape();
    let (n, c) = (s[0], s[1]);
    let mut out = Tensor::zeros(vec![n, c]);
    for i in 0..n {
        let mi = m.data()[i];
        let row = &x.data()[i * c..(i + 1) * c];
        let mut denom = E::ZERO;
        let probs = &mut out.data_mut()[i * c..(i + 1) * c];
        for (p, &v) in probs.iter_mut().zip(row) {
            *p = v.sub(mi).exp();
            denom = denom.add(*p);
        }
        for p in probs.iter_mut() {
            *p = p.div(denom);
        }
    }
    Ok(out)
}

/// Mean softmax cross-entropy between logits (N, C) on the tape and fixed
/// soft target rows (N, C): mean over rows of logsumexp(x) − Σ_c t_c·x_c.
///
/// The row max used for the logsumexp shift is taken from the current logit
/// values and enters the graph as a constant. That keeps the backward pass
/// the exact softmax−target form; the shift only relocates where exp is
/// evaluated.
pub fn softmax_ce<E: Element>(tape: &mut Tape<E>, logits: Var, targets: &Tensor<E>) -> Result<Var> {
    let s = tape.shape(logits).to_vec();
    if s.len() != 2 {
        return Err(Error::shape("softmax_ce", format!("logits must be (N,C), got {s:?}")));
    }
    if targets.shape() != s.as_slice() {
        return Err(Error::shape(
            "softmax_ce",
            format!("targets {:?} do not match logits {:?}", targets.shape(), s),
        ));
    }
    let m = row_max(tape.value(logits))?;
    let m = tape.constant(m);
    let shifted = tape.sub(logits, m)?;
    let e = tape.exp(shifted);
    let denom = tape.sum_axes(e, &[1])?;
    let ln_denom = tape.ln(denom);
    let lse = tape.add(ln_denom, m)?;

    let t = tape.constant(targets.clone());
    let tx = tape.mul(logits, t)?;
    let tx = tape.sum_axes(tx, &[1])?;
    let per_row = tape.sub(lse, tx)?;
    tape.mean_all(per_row)
}
