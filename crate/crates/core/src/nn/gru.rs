//! Gated recurrent units over (B, T, F) sequences.
//!
//! Gate order in the packed parameter matrices is z | r | c. The input
//! projection for all steps is one matmul up front; the per-step work is the
//! recurrent projection and the gate arithmetic.

use super::{init, Ctx, ParamSet};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::Var;
use crate::tensor::Tensor;
use crate::Element;

pub struct Gru {
    pub name: String,
    pub in_f: usize,
    pub hidden: usize,
    /// Process t from the end; outputs still line up with input positions.
    pub reverse: bool,
}

impl Gru {
    pub fn new(name: impl Into<String>, in_f: usize, hidden: usize, reverse: bool) -> Self {
        Gru { name: name.into(), in_f, hidden, reverse }
    }

    pub fn init<E: Element>(&self, ps: &mut ParamSet<E>, rng: &mut Rng) {
        let h = self.hidden;
        ps.insert(
            format!("{}.w", self.name),
            init::recurrent_uniform(vec![self.in_f, 3 * h], h, rng),
            true,
        );
        ps.insert(format!("{}.u_zr", self.name), init::recurrent_uniform(vec![h, 2 * h], h, rng), true);
        ps.insert(format!("{}.u_c", self.name), init::recurrent_uniform(vec![h, h], h, rng), true);
        ps.insert(format!("{}.b", self.name), init::recurrent_uniform(vec![3 * h], h, rng), true);
    }

    /// x: (B, T, in_f) → (B, T, hidden)
    pub fn forward<E: Element>(&self, ctx: &mut Ctx<E>, x: Var) -> Result<Var> {
        let shape = ctx.tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.in_f || shape[1] == 0 {
            return Err(Error::shape(
                "gru",
                format!("{} expects (B,T,{}) with T >= 1, got {:?}", self.name, self.in_f, shape),
            ));
        }
        let (bsz, t_len) = (shape[0], shape[1]);
        let h = self.hidden;
        let w = ctx.bound.var(&format!("{}.w", self.name))?;
        let u_zr = ctx.bound.var(&format!("{}.u_zr", self.name))?;
        let u_c = ctx.bound.var(&format!("{}.u_c", self.name))?;
        let b = ctx.bound.var(&format!("{}.b", self.name))?;

        let flat = ctx.tape.reshape(x, vec![bsz * t_len, self.in_f])?;
        let xp = ctx.tape.matmul(flat, w)?;
        let xp = ctx.tape.add(xp, b)?;
        let xp = ctx.tape.reshape(xp, vec![bsz, t_len, 3 * h])?;

        let mut hprev = ctx.tape.constant(Tensor::zeros(vec![bsz, h]));
        let mut outs: Vec<Var> = vec![hprev; t_len];
        let steps: Box<dyn Iterator<Item = usize>> =
            if self.reverse { Box::new((0..t_len).rev()) } else { Box::new(0..t_len) };
        for t in steps {
            let xt = ctx.tape.slice(xp, &[(0, bsz), (t, t + 1), (0, 3 * h)])?;
            let xt = ctx.tape.reshape(xt, vec![bsz, 3 * h])?;
            let xz = ctx.tape.slice(xt, &[(0, bsz), (0, h)])?;
            let xr = ctx.tape.slice(xt, &[(0, bsz), (h, 2 * h)])?;
            let xc = ctx.tape.slice(xt, &[(0, bsz), (2 * h, 3 * h)])?;

            let hzr = ctx.tape.matmul(hprev, u_zr)?;
            let hz = ctx.tape.slice(hzr, &[(0, bsz), (0, h)])?;
            let hr = ctx.tape.slice(hzr, &[(0, bsz), (h, 2 * h)])?;

            let zpre = ctx.tape.add(xz, hz)?;
            let z = ctx.tape.sigmoid(zpre);
            let rpre = ctx.tape.add(xr, hr)?;
            let r = ctx.tape.sigmoid(rpre);
            let rh = ctx.tape.mul(r, hprev)?;
            let rc = ctx.tape.matmul(rh, u_c)?;
            let cpre = ctx.tape.add(xc, rc)?;
            let c = ctx.tape.tanh(cpre);

            // h' = (1−z)⊙h + z⊙c, written without materializing 1−z.
            let zh = ctx.tape.mul(z, hprev)?;
            let keep = ctx.tape.sub(hprev, zh)?;
            let zc = ctx.tape.mul(z, c)?;
            hprev = ctx.tape.add(keep, zc)?;
            outs[t] = ctx.tape.reshape(hprev, vec![bsz, 1, h])?;
        }
        ctx.tape.concat(&outs, 1)
    }
}

/// Forward and reverse [`Gru`] over the same input, hidden states
/// concatenated per step: (B, T, F) → (B, T, 2·hidden).
pub struct BiGru {
    pub fwd: Gru,
    pub bwd: Gru,
}

impl BiGru {
    pub fn new(name: impl Into<String>, in_f: usize, hidden: usize) -> Self {
        let name = name.into();
        BiGru {
            fwd: Gru::new(format!("{name}.fwd"), in_f, hidden, false),
            bwd: Gru::new(format!("{name}.bwd"), in_f, hidden, true),
        }
    }

    pub fn init<E: Element>(&self, ps: &mut ParamSet<E>, rng: &mut Rng) {
        self.fwd.init(ps, rng);
        self.bwd.init(ps, rng);
    }

    pub fn forward<E: Element>(&self, ctx: &mut Ctx<E>, x: Var) -> Result<Var> {
        let f = self.fwd.forward(ctx, x)?;
        let b = self.bwd.forward(ctx, x)?;
        ctx.tape.concat(&[f, b], 2)
    }
}
