//! Linear, convolution, batch norm, squeeze-excitation, dropout.

use super::{init, Ctx, ParamSet};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::Var;
use crate::tensor::{Element, Tensor};

/// Broadcast shape that aligns a per-channel vector against axis 1 of a
/// rank-`rank` activation: (C, 1, ..., 1) with rank-1 dims.
fn channel_shape(c: usize, rank: usize) -> Vec<usize> {
    let mut s = vec![1; rank - 1];
    s[0] = c;
    s
}

// ---------------------------------------------------------------------------

pub struct Linear {
    pub name: String,
    pub in_f: usize,
    pub out_f: usize,
    pub bias: bool,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_f: usize, out_f: usize) -> Self {
        Linear { name: name.into(), in_f, out_f, bias: true }
    }

    pub fn init<E: Element>(&self, ps: &mut ParamSet<E>, rng: &mut Rng) {
        ps.insert(
            format!("{}.weight", self.name),
            init::kaiming_uniform(vec![self.in_f, self.out_f], self.in_f, rng),
            true,
        );
        if self.bias {
            ps.insert(format!("{}.bias", self.name), Tensor::zeros(vec![self.out_f]), true);
        }
    }

    /// x: (N, in_f) → (N, out_f)
    pub fn forward<E: Element>(&self, ctx: &mut Ctx<E>, x: Var) -> Result<Var> {
        let w = ctx.bound.var(&format!("{}.weight", self.name))?;
        let mut y = ctx.tape.matmul(x, w)?;
        if self.bias {
            let b = ctx.bound.var(&format!("{}.bias", self.name))?;
            y = ctx.tape.add(y, b)?;
        }
        Ok(y)
    }
}

// ---------------------------------------------------------------------------

pub struct Conv1dLayer {
    pub name: String,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub dil: usize,
    pub bias: bool,
}

impl Conv1dLayer {
    /// Same-padding temporal conv at stride 1 for odd k and dilation d:
    /// pad = d·(k−1)/2.
    pub fn same(name: impl Into<String>, in_c: usize, out_c: usize, k: usize, dil: usize) -> Self {
        Conv1dLayer { name: name.into(), in_c, out_c, k, stride: 1, pad: dil * (k - 1) / 2, dil, bias: true }
    }

    pub fn init<E: Element>(&self, ps: &mut ParamSet<E>, rng: &mut Rng) {
        let fan_in = self.in_c * self.k;
        ps.insert(
            format!("{}.weight", self.name),
            init::kaiming_uniform(vec![self.out_c, self.in_c, self.k], fan_in, rng),
            true,
        );
        if self.bias {
            ps.insert(format!("{}.bias", self.name), Tensor::zeros(vec![self.out_c]), true);
        }
    }

    /// x: (B, in_c, L) → (B, out_c, L')
    pub fn forward<E: Element>(&self, ctx: &mut Ctx<E>, x: Var) -> Result<Var> {
        let w = ctx.bound.var(&format!("{}.weight", self.name))?;
        let mut y = ctx.tape.conv1d(x, w, self.stride, self.pad, self.dil)?;
        if self.bias {
            let b = ctx.bound.var(&format!("{}.bias", self.name))?;
            let b = ctx.tape.reshape(b, channel_shape(self.out_c, 3))?;
            y = ctx.tape.add(y, b)?;
        }
        Ok(y)
    }
}

// ---------------------------------------------------------------------------

pub struct Conv2dLayer {
    pub name: String,
    pub in_c: usize,
    pub out_c: usize,
    pub k: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub bias: bool,
}

impl Conv2dLayer {
    pub fn new(
        name: impl Into<String>,
        in_c: usize,
        out_c: usize,
        k: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Self {
        Conv2dLayer { name: name.into(), in_c, out_c, k, stride, pad, bias: false }
    }

    pub fn init<E: Element>(&self, ps: &mut ParamSet<E>, rng: &mut Rng) {
        let fan_in = self.in_c * self.k.0 * self.k.1;
        ps.insert(
            format!("{}.weight", self.name),
            init::kaiming_uniform(vec![self.out_c, self.in_c, self.k.0, self.k.1], fan_in, rng),
            true,
        );
        if self.bias {
            ps.insert(format!("{}.bias", self.name), Tensor::zeros(vec![self.out_c]), true);
        }
    }

    /// x: (B, in_c, H, W) → (B, out_c, H', W')
    pub fn forward<E: Element>(&self, ctx: &mut Ctx<E>, x: Var) -> Result<Var> {
        let w = ctx.bound.var(&format!("{}.weight", self.name))?;
        let mut y = ctx.tape.conv2d(x, w, self.stride, self.pad)?;
        if self.bias {
            let b = ctx.bound.var(&format!("{}.bias", self.name))?;
            let b = ctx.tape.reshape(b, channel_shape(self.out_c, 4))?;
            y = ctx.tape.add(y, b)?;
        }
        Ok(y)
    }
}

// ---------------------------------------------------------------------------

pub struct Conv3dLayer {
    pub name: String,
    pub in_c: usize,
    pub out_c: usize,
    pub k: (usize, usize, usize),
    pub stride: (usize, usize, usize),
    pub pad: (usize, usize, usize),
    pub bias: bool,
}

impl Conv3dLayer {
    pub fn new(
        name: impl Into<String>,
        in_c: usize,
        out_c: usize,
        k: (usize, usize, usize),
        stride: (usize, usize, usize),
        pad: (usize, usize, usize),
    ) -> Self {
        Conv3dLayer { name: name.into(), in_c, out_c, k, stride, pad, bias: false }
    }

    pub fn init<E: Element>(&self, ps: &mut ParamSet<E>, rng: &mut Rng) {
        let fan_in = self.in_c * self.k.0 * self.k.1 * self.k.2;
        ps.insert(
            format!("{}.weight", self.name),
            init::kaiming_uniform(vec![self.out_c, self.in_c, self.k.0, self.k.1, self.k.2], fan_in, rng),
            true,
        );
        if self.bias {
            ps.insert(format!("{}.bias", self.name), Tensor::zeros(vec![self.out_c]), true);
        }
    }

    /// x: (B, in_c, T, H, W) → (B, out_c, T', H', W')
    pub fn forward<E: Element>(&self, ctx: &mut Ctx<E>, x: Var) -> Result<Var> {
        let w = ctx.bound.var(&format!("{}.weight", self.name))?;
        let mut y = ctx.tape.conv3d(x, w, self.stride, self.pad)?;
        if self.bias {
            let b = ctx.bound.var(&format!("{}.bias", self.name))?;
            let b = ctx.tape.reshape(b, channel_shape(self.out_c, 5))?;
            y = ctx.tape.add(y, b)?;
        }
        Ok(y)
    }
}

// ---------------------------------------------------------------------------

/// Batch normalization over axis 1 of any rank ≥ 2 activation.
///
/// Train mode normalizes with batch statistics; running statistics follow an
/// exponential moving average (unbiased variance, matching the usual
/// convention) and are only written when the mode asks for it. Eval mode
/// normalizes with the stored running statistics.
pub struct BatchNorm {
    pub name: String,
    pub features: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, features: usize) -> Self {
        BatchNorm { name: name.into(), features, momentum: 0.1, eps: 1e-5 }
    }

    pub fn init<E: Element>(&self, ps: &mut ParamSet<E>) {
        ps.insert(format!("{}.weight", self.name), Tensor::ones(vec![self.features]), true);
        ps.insert(format!("{}.bias", self.name), Tensor::zeros(vec![self.features]), true);
        ps.insert(format!("{}.running_mean", self.name), Tensor::zeros(vec![self.features]), false);
        ps.insert(format!("{}.running_var", self.name), Tensor::ones(vec![self.features]), false);
    }

    pub fn forward<E: Element>(&self, ctx: &mut Ctx<E>, x: Var) -> Result<Var> {
        let shape = ctx.tape.shape(x).to_vec();
        if shape.len() < 2 || shape[1] != self.features {
            return Err(Error::shape(
                "batchnorm",
                format!("{} expects {} channels on axis 1, input {:?}", self.name, self.features, shape),
            ));
        }
        let rank = shape.len();
        let cshape = channel_shape(self.features, rank);
        let gamma = ctx.bound.var(&format!("{}.weight", self.name))?;
        let beta = ctx.bound.var(&format!("{}.bias", self.name))?;
        let gamma = ctx.tape.reshape(gamma, cshape.clone())?;
        let beta = ctx.tape.reshape(beta, cshape.clone())?;

        let xhat = if ctx.mode.is_train() {
            let axes: Vec<usize> = (0..rank).filter(|&a| a != 1).collect();
            let mu = ctx.tape.mean_axes(x, &axes)?;
            let xc = ctx.tape.sub(x, mu)?;
            let sq = ctx.tape.mul(xc, xc)?;
            let var = ctx.tape.mean_axes(sq, &axes)?;
            if ctx.mode.update_stats() {
                let per_channel = shape.iter().product::<usize>() / self.features;
                self.update_running(ctx, mu, var, per_channel)?;
            }
            let veps = ctx.tape.add_scalar(var, self.eps);
            let denom = ctx.tape.sqrt(veps);
            ctx.tape.div(xc, denom)?
        } else {
            let rm = ctx.bound.var(&format!("{}.running_mean", self.name))?;
            let rv = ctx.bound.var(&format!("{}.running_var", self.name))?;
            let rm = ctx.tape.reshape(rm, cshape.clone())?;
            let rv = ctx.tape.reshape(rv, cshape)?;
            let xc = ctx.tape.sub(x, rm)?;
            let veps = ctx.tape.add_scalar(rv, self.eps);
            let denom = ctx.tape.sqrt(veps);
            ctx.tape.div(xc, denom)?
        };
        let scaled = ctx.tape.mul(xhat, gamma)?;
        ctx.tape.add(scaled, beta)
    }

    fn update_running<E: Element>(&self, ctx: &mut Ctx<E>, mu: Var, var: Var, per_channel: usize) -> Result<()> {
        let batch_mean = ctx.tape.value(mu).clone();
        let batch_var = ctx.tape.value(var).clone();
        let stats = ctx.stats.as_deref_mut().ok_or_else(|| Error::Training {
            context: "batchnorm".into(),
            message: format!("{}: running-stat update requested without a stats sink", self.name),
        })?;
        let m = E::from_f64(self.momentum);
        let one_m = E::from_f64(1.0 - self.momentum);
        // The EMA stores the unbiased estimate: correct the biased batch
        // variance by n/(n−1), n = elements averaged per channel.
        let corr = if per_channel > 1 {
            E::from_f64(per_channel as f64 / (per_channel as f64 - 1.0))
        } else {
            E::ONE
        };

        let rm = stats.get_mut(&format!("{}.running_mean", self.name))?;
        for (r, &b) in rm.data_mut().iter_mut().zip(batch_mean.data()) {
            *r = one_m.mul(*r).add(m.mul(b));
        }
        let rv = stats.get_mut(&format!("{}.running_var", self.name))?;
        for (r, &b) in rv.data_mut().iter_mut().zip(batch_var.data()) {
            *r = one_m.mul(*r).add(m.mul(b.mul(corr)));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------

/// Squeeze-and-excitation gate for (N, C, H, W) activations.
pub struct SeBlock {
    pub name: String,
    pub channels: usize,
    pub reduction: usize,
}

impl SeBlock {
    pub fn new(name: impl Into<String>, channels: usize, reduction: usize) -> Self {
        SeBlock { name: name.into(), channels, reduction }
    }

    fn mid(&self) -> usize {
        (self.channels / self.reduction).max(1)
    }

    pub fn init<E: Element>(&self, ps: &mut ParamSet<E>, rng: &mut Rng) {
        Linear::new(format!("{}.fc1", self.name), self.channels, self.mid()).init(ps, rng);
        Linear::new(format!("{}.fc2", self.name), self.mid(), self.channels).init(ps, rng);
    }

    pub fn forward<E: Element>(&self, ctx: &mut Ctx<E>, x: Var) -> Result<Var> {
        let shape = ctx.tape.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(Error::shape("se_block", format!("expected (N,{},H,W), got {shape:?}", self.channels)));
        }
        let (n, c) = (shape[0], shape[1]);
        let pooled = ctx.tape.mean_axes(x, &[2, 3])?;
        let squeezed = ctx.tape.reshape(pooled, vec![n, c])?;
        let fc1 = Linear::new(format!("{}.fc1", self.name), c, self.mid());
        let z = fc1.forward(ctx, squeezed)?;
        let z = ctx.tape.relu(z);
        let fc2 = Linear::new(format!("{}.fc2", self.name), self.mid(), c);
        let gate = fc2.forward(ctx, z)?;
        let gate = ctx.tape.sigmoid(gate);
        let gate = ctx.tape.reshape(gate, vec![n, c, 1, 1])?;
        ctx.tape.mul(x, gate)
    }
}

// ---------------------------------------------------------------------------

/// Inverted dropout: active only in train mode, identity otherwise.
/// Kept units are scaled by 1/(1−p) so eval needs no rescaling.
pub fn dropout<E: Element>(ctx: &mut Ctx<E>, x: Var, p: f64) -> Result<Var> {
    if !ctx.mode.is_train() || p <= 0.0 {
        return Ok(x);
    }
    if p >= 1.0 {
        return Err(Error::invalid("dropout", format!("rate {p} must be < 1")));
    }
    let shape = ctx.tape.shape(x).to_vec();
    let keep = 1.0 - p;
    let scale = E::from_f64(1.0 / keep);
    let rng = ctx.rng()?;
    let mask = Tensor::from_fn(shape, |_| if rng.bernoulli(keep) { scale } else { E::ZERO });
    let mask = ctx.tape.constant(mask);
    ctx.tape.mul(x, mask)
}
