//! The training loop: seeded batching, augmentation, the adversarial branch,
//! checkpoint selection, and split evaluation.

use std::time::Instant;

use crate::adversarial::da_loss;
use crate::augment::{maybe_hflip, mixup_pair, smooth_label_rows};
use crate::error::{Error, Result};
use crate::models::{Backend, Model, ForwardOpts};
use crate::nn::loss::softmax_ce;
use crate::nn::{Ctx, Mode, ParamSet};
use crate::optim::{cosine_lr, Adam};
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::data::{load_task, stack_videos, ClipRec, LoadedTask};
use super::metrics::{argmax_class, EvalOut, MetricAccum};
use super::{EpochStats, ExperimentConfig, RunReport};

pub struct TrainOutcome {
    pub report: RunReport,
    /// Parameters from the epoch with the best validation accuracy.
    pub best: ParamSet<f32>,
    pub model: Model,
    pub task: LoadedTask,
}

impl std::fmt::Debug for TrainOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrainOutcome")
            .field("seed", &self.report.seed)
            .field("model", &self.report.model_label)
            .field("test", &self.report.test)
            .finish_non_exhaustive()
    }
}

pub fn model_label(backend: Backend, li: bool) -> String {
    let mut label = match backend {
        Backend::Mstcn => "ms-tcn".to_string(),
        Backend::Bigru => "bigru".to_string(),
    };
    if li {
        label.push_str(" + li");
    }
    label
}

/// Cross-check the model config against the dataset and build the network,
/// filling in the input geometry from the clips when the config leaves it
/// open.
pub fn resolve_model(cfg: &ExperimentConfig, task: &LoadedTask) -> Result<Model> {
    let mut mc = cfg.model.clone();
    match mc.input {
        None => mc.input = Some(task.clip_shape),
        Some(s) if s != task.clip_shape => {
            return Err(Error::Config(format!(
                "model input {s:?} does not match dataset clips {:?}",
                task.clip_shape
            )));
        }
        _ => {}
    }
    if mc.num_classes != task.num_classes {
        return Err(Error::Config(format!(
            "model has {} classes but the dataset has {}",
            mc.num_classes, task.num_classes
        )));
    }
    Model::new(&mc, cfg.da.as_ref())
}

/// Run one seeded training job end to end. Everything stochastic flows from
/// named streams off the seed, so a rerun with the same config reproduces the
/// report exactly.
pub fn train(cfg: &ExperimentConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let task = load_task(&cfg.data, seed)?;

    let labeled: Vec<usize> =
        (0..task.train.len()).filter(|&i| task.train[i].domain == 0).collect();
    let support_pool: Vec<usize> =
        (0..task.train.len()).filter(|&i| task.train[i].domain != 0).collect();
    if labeled.is_empty() {
        return Err(Error::Config("train split has no labeled target-domain clips".into()));
    }
    if let Some(da) = &cfg.da {
        if support_pool.is_empty() {
            return Err(Error::Config(
                "adversarial training needs unlabeled support clips, but the train split has none"
                    .into(),
            ));
        }
        if da.num_domains != task.domains.len() {
            return Err(Error::Config(format!(
                "domain head expects {} domains but the dataset provides {}",
                da.num_domains,
                task.domains.len()
            )));
        }
    }

    let model = resolve_model(cfg, &task)?;
    let mut ps: ParamSet<f32> = model.init(&mut Rng::new(seed).derive_named("init", 0));
    let mut adam = Adam::new(cfg.train.weight_decay);

    let hyper = &cfg.train;
    let classes = model.config.num_classes;
    let mut epochs = Vec::with_capacity(hyper.epochs);
    let mut best: Option<(f64, usize, ParamSet<f32>)> = None;
    let mut support_cursor = 0usize;

    for epoch in 0..hyper.epochs {
        let lr = cosine_lr(epoch, hyper.epochs, hyper.lr0, hyper.lr_min);
        let progress = if hyper.epochs > 1 {
            epoch as f64 / (hyper.epochs - 1) as f64
        } else {
            1.0
        };
        let lambda = cfg.da.as_ref().map(|da| da.lambda_at(progress)).unwrap_or(0.0);
        let adversarial = lambda > 0.0;

        let root = Rng::new(seed);
        let mut order = labeled.clone();
        root.derive_named("shuffle", epoch as u64).shuffle(&mut order);
        let mut aug_rng = root.derive_named("aug", epoch as u64);
        let mut drop_rng = root.derive_named("drop", epoch as u64);
        let support = adversarial.then(|| {
            let mut s = support_pool.clone();
            root.derive_named("shuffle_support", epoch as u64).shuffle(&mut s);
            s
        });

        let chunk = if adversarial { (hyper.batch_size / 2).max(1) } else { hyper.batch_size };
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;

        for (step, batch) in order.chunks(chunk).enumerate() {
            let nl = batch.len();
            let mut videos: Vec<Tensor<f32>> = Vec::with_capacity(nl);
            let mut primary = Vec::with_capacity(nl);
            for &i in batch {
                let rec = &task.train[i];
                videos.push(maybe_hflip(&rec.video, hyper.flip_prob, &mut aug_rng)?);
                primary.push(rec.label as usize);
            }
            let refs: Vec<&Tensor<f32>> = videos.iter().collect();
            let mut x = stack_videos(&refs)?;
            let mut y = smooth_label_rows::<f32>(&primary, classes, hyper.label_smooth)?;
            if let Some(alpha) = hyper.mixup_alpha {
                let mut perm: Vec<usize> = (0..nl).collect();
                aug_rng.shuffle(&mut perm);
                let lam = aug_rng.beta(alpha, alpha).clamp(0.0, 1.0);
                let perm_refs: Vec<&Tensor<f32>> = perm.iter().map(|&p| &videos[p]).collect();
                let xp = stack_videos(&perm_refs)?;
                let pids: Vec<usize> = perm.iter().map(|&p| primary[p]).collect();
                let yp = smooth_label_rows::<f32>(&pids, classes, hyper.label_smooth)?;
                let (mx, my) = mixup_pair(&x, &y, &xp, &yp, lam)?;
                x = mx;
                y = my;
            }

            let mut domain_ids = vec![0usize; nl];
            if let Some(support) = &support {
                let mut data = x.data().to_vec();
                for j in 0..nl {
                    let rec = &task.train[support[(support_cursor + j) % support.len()]];
                    data.extend_from_slice(rec.video.data());
                    domain_ids.push(rec.domain);
                }
                support_cursor = (support_cursor + nl) % support.len();
                let [t, h, w] = task.clip_shape;
                x = Tensor::new(vec![2 * nl, t, h, w], data)?;
            }

            let mut tape = Tape::new();
            let bound = ps.bind(&mut tape);
            let video = tape.constant(x);
            let opts = ForwardOpts {
                dropblock: hyper.dropblock,
                lambda: adversarial.then_some(lambda),
            };
            let out = {
                let mut ctx = Ctx {
                    tape: &mut tape,
                    bound: &bound,
                    mode: Mode::Train { update_stats: true },
                    stats: Some(&mut ps),
                    rng: Some(&mut drop_rng),
                };
                model.forward(&mut ctx, video, &opts)?
            };

            let labeled_logits = if adversarial {
                tape.slice(out.class_logits, &[(0, nl), (0, classes)])?
            } else {
                out.class_logits
            };
            let l_y = softmax_ce(&mut tape, labeled_logits, &y)?;
            let loss = match out.domain_logits {
                Some(dl) => {
                    let targets = smooth_label_rows::<f32>(&domain_ids, task.domains.len(), 0.0)?;
                    let l_d = softmax_ce(&mut tape, dl, &targets)?;
                    da_loss(&mut tape, l_y, l_d, lambda)?.total
                }
                None => l_y,
            };

            let class_loss = tape.value(l_y).data()[0] as f64;
            if !tape.value(loss).data()[0].is_finite() || !class_loss.is_finite() {
                return Err(divergence_error(&ps, epoch, step));
            }
            loss_sum += class_loss * nl as f64;
            let logit_rows = tape.value(out.class_logits);
            for (i, &label) in primary.iter().enumerate() {
                let row = &logit_rows.data()[i * classes..(i + 1) * classes];
                if argmax_class(row) == label {
                    correct += 1;
                }
            }
            seen += nl;

            tape.backward(loss)?;
            adam.step(&mut ps, &tape, &bound, lr)?;
        }

        let val = evaluate(&model, &ps, &task.val, hyper.batch_size)?;
        let stats = EpochStats {
            epoch,
            lr,
            lambda,
            train_loss: loss_sum / seen as f64,
            train_acc1: correct as f64 / seen as f64,
            val_loss: val.mean_loss,
            val_acc1: val.metrics.acc1,
        };
        let improved = best.as_ref().is_none_or(|(acc, _, _)| val.metrics.acc1 > *acc);
        if improved {
            best = Some((val.metrics.acc1, epoch, ps.clone()));
        }
        epochs.push(stats);
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    let test = evaluate(&model, &best_params, &task.test, hyper.batch_size)?;
    let report = RunReport {
        seed,
        model_label: model_label(model.config.backend, model.config.li),
        languages: task.language_label(),
        epochs,
        best_epoch,
        test: test.metrics,
        confusion: test.confusion,
        warnings: test.warnings,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { report, best: best_params, model, task })
}

fn divergence_error(ps: &ParamSet<f32>, epoch: usize, step: usize) -> Error {
    let context = format!("epoch {epoch} step {step}");
    for e in ps.entries() {
        if e.tensor.data().iter().any(|v| !v.is_finite()) {
            return Error::Training {
                context: context.clone(),
                message: format!("parameter {} went non-finite", e.name),
            };
        }
    }
    Error::Training {
        context,
        message: "loss went non-finite while every parameter is still finite".into(),
    }
}

/// Metrics over a held-out split, batched through the model in eval mode.
pub fn evaluate(
    model: &Model,
    ps: &ParamSet<f32>,
    clips: &[ClipRec],
    batch_size: usize,
) -> Result<EvalOut> {
    let classes = model.config.num_classes;
    let mut acc = MetricAccum::new(classes);
    for batch in clips.chunks(batch_size.max(1)) {
        let refs: Vec<&Tensor<f32>> = batch.iter().map(|c| &c.video).collect();
        let x = stack_videos(&refs)?;
        let mut labels = Vec::with_capacity(batch.len());
        for c in batch {
            if c.label < 0 {
                return Err(Error::invalid("evaluate", "evaluation split contains unlabeled clips"));
            }
            labels.push(c.label as usize);
        }
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape);
        let video = tape.constant(x);
        let mut ctx = Ctx::eval(&mut tape, &bound);
        let out = model.forward(&mut ctx, video, &ForwardOpts::inference())?;
        acc.add_batch(tape.value(out.class_logits), &labels)?;
    }
    acc.finish()
}
