//! Input-gradient saliency: where on the frame the classifier looks.

use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{ForwardOpts, Model};
use crate::nn::{Ctx, ParamSet};
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::metrics::argmax_class;
use super::pgm::write_pgm;

pub struct SaliencyMap {
    /// |∂ logit_pred / ∂ input| per cell, max-normalized to [0, 1].
    pub map: Tensor<f64>,
    pub predicted: usize,
}

/// Gradient of the predicted logit with respect to the clip. The model runs
/// in eval mode; the clip enters the tape as a grad-bearing leaf.
pub fn saliency(model: &Model, ps: &ParamSet<f32>, clip: &Tensor<f32>) -> Result<SaliencyMap> {
    let shape = clip.shape();
    if shape.len() != 3 {
        return Err(Error::shape("saliency", format!("expected a (T, H, W) clip, got {shape:?}")));
    }
    let [t, h, w] = [shape[0], shape[1], shape[2]];
    let classes = model.config.num_classes;

    let mut tape = Tape::new();
    let bound = ps.bind(&mut tape);
    let batched = clip.clone().reshaped(vec![1, t, h, w])?;
    let video = tape.param(batched);
    let mut ctx = Ctx::eval(&mut tape, &bound);
    let out = model.forward(&mut ctx, video, &ForwardOpts::inference())?;

    let logits = tape.value(out.class_logits);
    let predicted = argmax_class(&logits.data()[..classes]);
    let picked = tape.slice(out.class_logits, &[(0, 1), (predicted, predicted + 1)])?;
    let root = tape.sum_all(picked)?;
    tape.backward(root)?;

    let grad = tape
        .grad(video)
        .ok_or_else(|| Error::invalid("saliency", "input gradient was not produced"))?;
    let mut abs: Vec<f64> = grad.data().iter().map(|&g| (g as f64).abs()).collect();
    let max = abs.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        for v in &mut abs {
            *v /= max;
        }
    }
    Ok(SaliencyMap { map: Tensor::new(vec![t, h, w], abs)?, predicted })
}

/// Fraction of total saliency mass inside a (y0, y1, x0, x1) pixel box,
/// summed over all frames. An all-zero map has no mass anywhere; call that 0.
pub fn mass_inside(map: &Tensor<f64>, bbox: [usize; 4]) -> f64 {
    let s = map.shape();
    let (t, h, w) = (s[0], s[1], s[2]);
    let [y0, y1, x0, x1] = bbox;
    let mut inside = 0.0;
    let mut total = 0.0;
    for ti in 0..t {
        for y in 0..h {
            for x in 0..w {
                let v = map.data()[(ti * h + y) * w + x];
                total += v;
                if (y0..y1).contains(&y) && (x0..x1).contains(&x) {
                    inside += v;
                }
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        inside / total
    }
}

/// One PGM per frame, named `{stem}_f{t:03}.pgm`.
pub fn write_frames(map: &Tensor<f64>, dir: &Path, stem: &str) -> Result<()> {
    let s = map.shape();
    let (t, h, w) = (s[0], s[1], s[2]);
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for ti in 0..t {
        let frame = &map.data()[ti * h * w..(ti + 1) * h * w];
        write_pgm(&dir.join(format!("{stem}_f{ti:03}.pgm")), frame, h, w)?;
    }
    Ok(())
}
