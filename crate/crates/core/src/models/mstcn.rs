//! Multi-scale temporal convolutional backend: four layers, each running
//! kernel-3/5/7 branches in parallel at a shared dilation that doubles per
//! layer, merged by channel concatenation.

use crate::error::{Error, Result};
use crate::nn::{dropout, BatchNorm, Conv1dLayer, Ctx, ParamSet};
use crate::rng::Rng;
use crate::tape::Var;
use crate::tensor::Element;

pub const KERNELS: [usize; 3] = [3, 5, 7];
pub const LAYERS: usize = 4;

pub struct TcnLayer {
    branches: Vec<Conv1dLayer>,
    bn: BatchNorm,
    skip: Option<Conv1dLayer>,
}

impl TcnLayer {
    fn new(name: &str, in_c: usize, out_c: usize, dil: usize) -> Self {
        let branch_c = out_c / 3;
        let branches = KERNELS
            .iter()
            .map(|&k| {
                let mut conv = Conv1dLayer::same(format!("{name}.k{k}"), in_c, branch_c, k, dil);
                conv.bias = false;
                conv
            })
            .collect();
        let skip = (in_c != out_c)
            .then(|| Conv1dLayer::same(format!("{name}.skip"), in_c, out_c, 1, 1));
        TcnLayer { branches, bn: BatchNorm::new(format!("{name}.bn"), out_c), skip }
    }

    fn init<E: Element>(&self, ps: &mut ParamSet<E>, rng: &mut Rng) {
        for b in &self.branches {
            b.init(ps, rng);
        }
        self.bn.init(ps);
        if let Some(s) = &self.skip {
            s.init(ps, rng);
        }
    }

    /// x: (B, C_in, T) → (B, C_out, T)
    fn forward<E: Element>(&self, ctx: &mut Ctx<E>, x: Var, drop: f64) -> Result<Var> {
        let mut outs = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            outs.push(b.forward(ctx, x)?);
        }
        let h = ctx.tape.concat(&outs, 1)?;
        let h = self.bn.forward(ctx, h)?;
        let h = ctx.tape.relu(h);
        let h = dropout(ctx, h, drop)?;
        let skip = match &self.skip {
            Some(s) => s.forward(ctx, x)?,
            None => x,
        };
        ctx.tape.add(h, skip)
    }
}

pub struct MsTcn {
    layers: Vec<TcnLayer>,
    channels: usize,
    dropout: f64,
}

impl MsTcn {
    pub fn new(name: &str, in_f: usize, channels: usize, drop: f64) -> Result<Self> {
        if channels % 3 != 0 || channels == 0 {
            return Err(Error::invalid(
                "mstcn",
                format!("channels must be a positive multiple of 3 for the branch split, got {channels}"),
            ));
        }
        let layers = (0..LAYERS)
            .map(|l| {
                let in_c = if l == 0 { in_f } else { channels };
                TcnLayer::new(&format!("{name}.layer{l}"), in_c, channels, 1 << l)
            })
            .collect();
        Ok(MsTcn { layers, channels, dropout: drop })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn init<E: Element>(&self, ps: &mut ParamSet<E>, rng: &mut Rng) {
        for l in &self.layers {
            l.init(ps, rng);
        }
    }

    /// feats: (B, T, F) → (B, T, channels), same T by the same-pad contract.
    pub fn forward<E: Element>(&self, ctx: &mut Ctx<E>, feats: Var) -> Result<Var> {
        let shape = ctx.tape.shape(feats);
        if shape.len() != 3 {
            return Err(Error::shape(
                "mstcn",
                format!("expected (B, T, F) features, got {shape:?}"),
            ));
        }
        let mut x = ctx.tape.permute(feats, &[0, 2, 1])?;
        for l in &self.layers {
            x = l.forward(ctx, x, self.dropout)?;
        }
        ctx.tape.permute(x, &[0, 2, 1])
    }
}
