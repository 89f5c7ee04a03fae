//! Linear domain probe: how much domain identity survives in the frontend
//! features. High probe accuracy means the representation still encodes
//! which domain a clip came from; adversarial training should push it down
//! toward chance.

use crate::augment::smooth_label_rows;
use crate::error::{Error, Result};
use crate::models::{ForwardOpts, Model};
use crate::nn::loss::softmax_ce;
use crate::nn::{Ctx, ParamSet};
use crate::optim::Adam;
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::data::{stack_videos, LoadedTask};
use super::metrics::argmax_class;

const PROBE_STEPS: usize = 300;
const PROBE_LR: f64 = 0.05;

/// Time-averaged frontend features for every train-split clip, paired with
/// its domain id. Rows come back in train-split order.
fn extract_features(
    model: &Model,
    ps: &ParamSet<f32>,
    task: &LoadedTask,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut rows = Vec::with_capacity(task.train.len());
    let mut domains = Vec::with_capacity(task.train.len());
    for batch in task.train.chunks(16) {
        let refs: Vec<&Tensor<f32>> = batch.iter().map(|c| &c.video).collect();
        let x = stack_videos(&refs)?;
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape);
        let video = tape.constant(x);
        let mut ctx = Ctx::eval(&mut tape, &bound);
        let out = model.forward(&mut ctx, video, &ForwardOpts::inference())?;
        let feats = tape.value(out.features);
        let s = feats.shape();
        let (t, f) = (s[1], s[2]);
        for (i, rec) in batch.iter().enumerate() {
            let mut row = vec![0.0f64; f];
            for ti in 0..t {
                let base = (i * t + ti) * f;
                for (j, slot) in row.iter_mut().enumerate() {
                    *slot += feats.data()[base + j] as f64;
                }
            }
            for v in &mut row {
                *v /= t as f64;
            }
            rows.push(row);
            domains.push(rec.domain);
        }
    }
    Ok((rows, domains))
}

/// Fit a softmax probe on alternating clips and score it on the rest.
/// The split runs through the train-split order, so both halves see every
/// domain; everything downstream of the fixed seed is deterministic.
pub fn domain_probe_accuracy(
    model: &Model,
    ps: &ParamSet<f32>,
    task: &LoadedTask,
    seed: u64,
) -> Result<f64> {
    let num_domains = task.domains.len();
    if num_domains < 2 {
        return Err(Error::invalid("domain_probe", "need at least two domains to probe"));
    }
    let (rows, domains) = extract_features(model, ps, task)?;
    if !domains.iter().any(|&d| d != 0) {
        return Err(Error::invalid("domain_probe", "train split has a single domain"));
    }

    let f = rows[0].len();
    let mut fit_x = Vec::new();
    let mut fit_y = Vec::new();
    let mut hold_x = Vec::new();
    let mut hold_y = Vec::new();
    for (i, (row, &d)) in rows.iter().zip(&domains).enumerate() {
        if i % 2 == 0 {
            fit_x.extend_from_slice(row);
            fit_y.push(d);
        } else {
            hold_x.extend_from_slice(row);
            hold_y.push(d);
        }
    }
    let n_fit = fit_y.len();
    let x_fit = Tensor::<f64>::new(vec![n_fit, f], fit_x)?;
    let y_fit = smooth_label_rows::<f64>(&fit_y, num_domains, 0.0)?;

    let mut probe = ParamSet::<f64>::new();
    let mut rng = Rng::new(seed).derive_named("probe", 0);
    probe.insert("probe.w", Tensor::rand_uniform(vec![f, num_domains], -0.1, 0.1, &mut rng), true);
    probe.insert("probe.b", Tensor::zeros(vec![num_domains]), true);
    let mut adam = Adam::new(0.0);

    for _ in 0..PROBE_STEPS {
        let mut tape = Tape::new();
        let bound = probe.bind(&mut tape);
        let x = tape.constant(x_fit.clone());
        let w = bound.var("probe.w")?;
        let b = bound.var("probe.b")?;
        let wx = tape.matmul(x, w)?;
        let logits = tape.add(wx, b)?;
        let loss = softmax_ce(&mut tape, logits, &y_fit)?;
        tape.backward(loss)?;
        adam.step(&mut probe, &tape, &bound, PROBE_LR)?;
    }

    let w = probe.get("probe.w")?;
    let b = probe.get("probe.b")?;
    let mut correct = 0usize;
    for (i, &d) in hold_y.iter().enumerate() {
        let row = &hold_x[i * f..(i + 1) * f];
        let logits: Vec<f32> = (0..num_domains)
            .map(|c| {
                let mut v = b.data()[c];
                for (j, &xv) in row.iter().enumerate() {
                    v += xv * w.data()[j * num_domains + c];
                }
                v as f32
            })
            .collect();
        if argmax_class(&logits) == d {
            correct += 1;
        }
    }
    Ok(correct as f64 / hold_y.len() as f64)
}
