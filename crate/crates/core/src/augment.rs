//! Data augmentation and target shaping: label smoothing, mixup, horizontal
//! flips, and DropBlock.

use crate::error::{Error, Result};
use crate::nn::Ctx;
use crate::rng::Rng;
use crate::tape::Var;
use crate::tensor::Tensor;
use crate::Element;

/// Smoothed one-hot target: (1 − ε) on the true class, ε/C everywhere.
pub fn smooth_labels<E: Element>(class_id: usize, classes: usize, eps: f64) -> Result<Tensor<E>> {
    if classes == 0 {
        return Err(Error::invalid("smooth_labels", "need at least one class"));
    }
    if class_id >= classes {
        return Err(Error::invalid(
            "smooth_labels",
            format!("class {class_id} out of range for {classes} classes"),
        ));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::invalid("smooth_labels", format!("eps must lie in [0, 1), got {eps}")));
    }
    let off = E::from_f64(eps / classes as f64);
    let mut t = Tensor::full(vec![classes], off);
    t.data_mut()[class_id] = E::from_f64(1.0 - eps + eps / classes as f64);
    Ok(t)
}

/// Stack of smoothed rows, one per id, shaped (B, C).
pub fn smooth_label_rows<E: Element>(ids: &[usize], classes: usize, eps: f64) -> Result<Tensor<E>> {
    let mut out = Tensor::zeros(vec![ids.len(), classes]);
    for (b, &id) in ids.iter().enumerate() {
        let row = smooth_labels::<E>(id, classes, eps)?;
        out.data_mut()[b * classes..(b + 1) * classes].copy_from_slice(row.data());
    }
    Ok(out)
}

/// Convex blend of two example/target pairs at a fixed mixing weight.
pub fn mixup_pair<E: Element>(
    xa: &Tensor<E>,
    ya: &Tensor<E>,
    xb: &Tensor<E>,
    yb: &Tensor<E>,
    lambda: f64,
) -> Result<(Tensor<E>, Tensor<E>)> {
    if xa.shape() != xb.shape() || ya.shape() != yb.shape() {
        return Err(Error::shape(
            "mixup",
            format!(
                "pair shapes must match, got {:?} vs {:?} and {:?} vs {:?}",
                xa.shape(),
                xb.shape(),
                ya.shape(),
                yb.shape()
            ),
        ));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid("mixup", format!("lambda must lie in [0, 1], got {lambda}")));
    }
    if lambda == 1.0 {
        return Ok((xa.clone(), ya.clone()));
    }
    let lam = E::from_f64(lambda);
    let inv = E::from_f64(1.0 - lambda);
    let blend = |a: &Tensor<E>, b: &Tensor<E>| {
        let mut out = a.clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(b.data()) {
            *o = lam.mul(*o).add(inv.mul(bv));
        }
        out
    };
    Ok((blend(xa, xb), blend(ya, yb)))
}

/// Mixup with λ ~ Beta(α, α), drawn once per call. Returns the blended pair
/// and the weight that was used.
pub fn mixup<E: Element>(
    xa: &Tensor<E>,
    ya: &Tensor<E>,
    xb: &Tensor<E>,
    yb: &Tensor<E>,
    alpha: f64,
    rng: &mut Rng,
) -> Result<(Tensor<E>, Tensor<E>, f64)> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("mixup", format!("alpha must be positive, got {alpha}")));
    }
    let lambda = rng.beta(alpha, alpha).clamp(0.0, 1.0);
    let (x, y) = mixup_pair(xa, ya, xb, yb, lambda)?;
    Ok((x, y, lambda))
}

/// Mirror a (T, H, W) clip left to right; every frame is reversed along W.
pub fn hflip_clip<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(Error::shape("hflip", format!("expected a (T, H, W) clip, got {shape:?}")));
    }
    let (t_len, h, w) = (shape[0], shape[1], shape[2]);
    let mut out = x.clone();
    let data = out.data_mut();
    for t in 0..t_len {
        for i in 0..h {
            let row = (t * h + i) * w;
            data[row..row + w].reverse();
        }
    }
    Ok(out)
}

/// Flip the clip with probability `p`, consuming exactly one RNG draw.
pub fn maybe_hflip<E: Element>(x: &Tensor<E>, p: f64, rng: &mut Rng) -> Result<Tensor<E>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("hflip", format!("probability must lie in [0, 1], got {p}")));
    }
    if p > 0.0 && rng.bernoulli(p) {
        hflip_clip(x)
    } else {
        Ok(x.clone())
    }
}

/// Keep mask for one (H, W) plane, true where the cell survives.
///
/// Seed centers are drawn over the positions where a full block fits, at rate
/// γ = (1 − keep_prob)/block² · HW / ((H − block + 1)(W − block + 1)),
/// and each hit zeroes the whole block around it, so dropped cells form
/// unions of block×block squares and the expected dropped fraction comes out
/// near 1 − keep_prob.
pub fn dropblock_mask(
    h: usize,
    w: usize,
    keep_prob: f64,
    block_size: usize,
    rng: &mut Rng,
) -> Result<Vec<bool>> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::invalid(
            "dropblock",
            format!("keep_prob must lie in (0, 1], got {keep_prob}"),
        ));
    }
    if block_size == 0 || block_size % 2 == 0 {
        return Err(Error::invalid(
            "dropblock",
            format!("block_size must be odd, got {block_size}"),
        ));
    }
    if block_size > h.min(w) {
        return Err(Error::invalid(
            "dropblock",
            format!("block_size {block_size} exceeds feature map {h}x{w}"),
        ));
    }
    let mut mask = vec![true; h * w];
    if keep_prob == 1.0 {
        return Ok(mask);
    }
    let valid = ((h - block_size + 1) * (w - block_size + 1)) as f64;
    let gamma =
        (1.0 - keep_prob) / (block_size * block_size) as f64 * (h * w) as f64 / valid;
    let half = block_size / 2;
    for ci in half..h - half {
        for cj in half..w - half {
            if rng.bernoulli(gamma) {
                for i in ci - half..=ci + half {
                    for j in cj - half..=cj + half {
                        mask[i * w + j] = false;
                    }
                }
            }
        }
    }
    Ok(mask)
}

/// DropBlock over (N, C, H, W) activations. Each sample draws one mask that
/// is shared across its channels, and kept cells are rescaled by
/// total/kept so the expected activation is preserved. Identity in eval mode
/// or at keep_prob = 1.
pub fn dropblock<E: Element>(
    ctx: &mut Ctx<'_, E>,
    x: Var,
    keep_prob: f64,
    block_size: usize,
) -> Result<Var> {
    let shape = ctx.tape.shape(x).to_vec();
    if shape.len() != 4 {
        return Err(Error::shape(
            "dropblock",
            format!("expected (N, C, H, W) activations, got {shape:?}"),
        ));
    }
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::invalid(
            "dropblock",
            format!("keep_prob must lie in (0, 1], got {keep_prob}"),
        ));
    }
    if block_size == 0 || block_size % 2 == 0 {
        return Err(Error::invalid(
            "dropblock",
            format!("block_size must be odd, got {block_size}"),
        ));
    }
    if block_size > h.min(w) {
        return Err(Error::invalid(
            "dropblock",
            format!("block_size {block_size} exceeds feature map {h}x{w}"),
        ));
    }
    if !ctx.mode.is_train() || keep_prob == 1.0 {
        return Ok(x);
    }
    let plane = h * w;
    let mut mask = Tensor::<E>::zeros(vec![n, 1, h, w]);
    {
        let rng = ctx.rng()?;
        for s in 0..n {
            let keep = dropblock_mask(h, w, keep_prob, block_size, rng)?;
            let kept = keep.iter().filter(|&&k| k).count();
            let scale = if kept == 0 { 0.0 } else { plane as f64 / kept as f64 };
            let scale = E::from_f64(scale);
            let dst = &mut mask.data_mut()[s * plane..(s + 1) * plane];
            for (d, &k) in dst.iter_mut().zip(&keep) {
                if k {
                    *d = scale;
                }
            }
        }
    }
    let m = ctx.tape.constant(mask);
    ctx.tape.mul(x, m)
}

#[cfg(test)]
mod tests;
