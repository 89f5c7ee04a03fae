use super::*;
use crate::nn::{Mode, ParamSet};
use crate::tape::Tape;

#[test]
fn smooth_labels_matches_worked_example() {
    let t = smooth_labels::<f64>(3, 10, 0.1).unwrap();
    assert_eq!(t.shape(), &[10]);
    for (i, &v) in t.data().iter().enumerate() {
        let want = if i == 3 { 0.91 } else { 0.01 };
        assert!((v - want).abs() < 1e-15, "class {i}: {v}");
    }
    let sum: f64 = t.data().iter().sum();
    assert!((sum - 1.0).abs() < 1e-12);
}

#[test]
fn smooth_labels_zero_eps_is_one_hot() {
    let t = smooth_labels::<f64>(0, 4, 0.0).unwrap();
    assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn smooth_labels_rejects_bad_arguments() {
    assert!(smooth_labels::<f64>(4, 4, 0.1).is_err());
    assert!(smooth_labels::<f64>(0, 4, 1.0).is_err());
    assert!(smooth_labels::<f64>(0, 0, 0.1).is_err());
}

#[test]
fn smooth_label_rows_stacks_per_example() {
    let rows = smooth_label_rows::<f64>(&[1, 0], 2, 0.0).unwrap();
    assert_eq!(rows.shape(), &[2, 2]);
    assert_eq!(rows.data(), &[0.0, 1.0, 1.0, 0.0]);
}

#[test]
fn mixup_at_full_weight_is_identity() {
    let xa = Tensor::<f64>::from_fn(vec![2, 3], |i| i as f64 * 0.3 - 0.4);
    let ya = smooth_label_rows::<f64>(&[0, 1], 2, 0.1).unwrap();
    let xb = Tensor::full(vec![2, 3], 9.0);
    let yb = smooth_label_rows::<f64>(&[1, 1], 2, 0.1).unwrap();
    let (x, y) = mixup_pair(&xa, &ya, &xb, &yb, 1.0).unwrap();
    assert_eq!(x.data(), xa.data());
    assert_eq!(y.data(), ya.data());
}

#[test]
fn mixup_blends_linearly() {
    let xa = Tensor::<f64>::zeros(vec![4]);
    let xb = Tensor::<f64>::full(vec![4], 1.0);
    let ya = Tensor::<f64>::from_fn(vec![2], |i| if i == 0 { 1.0 } else { 0.0 });
    let yb = Tensor::<f64>::from_fn(vec![2], |i| if i == 1 { 1.0 } else { 0.0 });
    let (x, y) = mixup_pair(&xa, &ya, &xb, &yb, 0.3).unwrap();
    for &v in x.data() {
        assert!((v - 0.7).abs() < 1e-15);
    }
    assert!((y.data()[0] - 0.3).abs() < 1e-15);
    assert!((y.data()[1] - 0.7).abs() < 1e-15);
    let sum: f64 = y.data().iter().sum();
    assert!((sum - 1.0).abs() < 1e-12);
}

#[test]
fn mixup_rejects_mismatched_shapes() {
    let a = Tensor::<f64>::zeros(vec![2]);
    let b = Tensor::<f64>::zeros(vec![3]);
    let y = Tensor::<f64>::zeros(vec![2]);
    assert!(mixup_pair(&a, &y, &b, &y, 0.5).is_err());
}

#[test]
fn mixup_draw_is_deterministic_and_in_range() {
    let xa = Tensor::<f64>::zeros(vec![3]);
    let xb = Tensor::<f64>::full(vec![3], 1.0);
    let y = Tensor::<f64>::from_fn(vec![2], |i| (i == 0) as u8 as f64);
    let mut r1 = Rng::new(7);
    let mut r2 = Rng::new(7);
    let (x1, _, l1) = mixup(&xa, &y, &xb, &y, 0.4, &mut r1).unwrap();
    let (x2, _, l2) = mixup(&xa, &y, &xb, &y, 0.4, &mut r2).unwrap();
    assert!((0.0..=1.0).contains(&l1));
    assert_eq!(l1, l2);
    assert_eq!(x1.data(), x2.data());
    for &v in x1.data() {
        assert!((v - (1.0 - l1)).abs() < 1e-12);
    }
}

#[test]
fn hflip_reverses_each_row_and_is_an_involution() {
    let x = Tensor::<f64>::from_fn(vec![1, 2, 3], |i| i as f64 + 1.0);
    let f = hflip_clip(&x).unwrap();
    assert_eq!(f.data(), &[3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
    let ff = hflip_clip(&f).unwrap();
    assert_eq!(ff.data(), x.data());
    assert!(hflip_clip(&Tensor::<f64>::zeros(vec![2, 2])).is_err());
}

#[test]
fn maybe_hflip_respects_probability_extremes() {
    let x = Tensor::<f64>::from_fn(vec![1, 1, 3], |i| i as f64);
    let mut rng = Rng::new(1);
    let same = maybe_hflip(&x, 0.0, &mut rng).unwrap();
    assert_eq!(same.data(), x.data());
    let flipped = maybe_hflip(&x, 1.0, &mut rng).unwrap();
    assert_eq!(flipped.data(), &[2.0, 1.0, 0.0]);
}

#[test]
fn dropblock_mask_full_keep_drops_nothing() {
    let mut rng = Rng::new(3);
    let mask = dropblock_mask(8, 8, 1.0, 3, &mut rng).unwrap();
    assert!(mask.iter().all(|&k| k));
}

#[test]
fn dropblock_mask_rejects_bad_geometry() {
    let mut rng = Rng::new(3);
    assert!(dropblock_mask(8, 8, 0.9, 4, &mut rng).is_err());
    assert!(dropblock_mask(8, 8, 0.9, 9, &mut rng).is_err());
    assert!(dropblock_mask(8, 8, 0.0, 3, &mut rng).is_err());
}

#[test]
fn dropblock_mask_drops_unions_of_full_squares() {
    let (h, w, bs) = (16, 16, 3);
    let half = bs / 2;
    let mut rng = Rng::new(11);
    let mut saw_drop = false;
    for _ in 0..200 {
        let mask = dropblock_mask(h, w, 0.8, bs, &mut rng).unwrap();
        for i in 0..h {
            for j in 0..w {
                if mask[i * w + j] {
                    continue;
                }
                saw_drop = true;
                // Every dropped cell must sit inside some fully dropped
                // bs x bs square whose center is in the valid region.
                let mut covered = false;
                'centers: for ci in i.saturating_sub(half)..=(i + half).min(h - 1) {
                    for cj in j.saturating_sub(half)..=(j + half).min(w - 1) {
                        if ci < half || ci >= h - half || cj < half || cj >= w - half {
                            continue;
                        }
                        let full = (ci - half..=ci + half).all(|a| {
                            (cj - half..=cj + half).all(|b| !mask[a * w + b])
                        });
                        if full {
                            covered = true;
                            break 'centers;
                        }
                    }
                }
                assert!(covered, "stray dropped cell at ({i}, {j})");
            }
        }
    }
    assert!(saw_drop, "no blocks dropped across 200 masks");
}

#[test]
fn dropblock_mask_monte_carlo_rate() {
    let (h, w) = (32, 32);
    let mut rng = Rng::new(5);
    let mut dropped = 0usize;
    let trials = 1000;
    for _ in 0..trials {
        let mask = dropblock_mask(h, w, 0.9, 3, &mut rng).unwrap();
        dropped += mask.iter().filter(|&&k| !k).count();
    }
    let frac = dropped as f64 / (trials * h * w) as f64;
    assert!((frac - 0.10).abs() < 0.02, "dropped fraction {frac}");
}

fn train_params() -> ParamSet<f64> {
    ParamSet::new()
}

#[test]
fn dropblock_eval_and_full_keep_are_identity() {
    let ps = train_params();
    let mut tape = Tape::<f64>::new();
    let bound = ps.bind(&mut tape);
    let x = tape.constant(Tensor::<f64>::from_fn(vec![2, 3, 8, 8], |i| i as f64 * 0.01));
    let mut ctx = Ctx::eval(&mut tape, &bound);
    let y = dropblock(&mut ctx, x, 0.9, 3).unwrap();
    assert_eq!(y, x);

    let mut rng = Rng::new(2);
    let mut ctx = Ctx {
        tape: &mut tape,
        bound: &bound,
        mode: Mode::Train { update_stats: false },
        stats: None,
        rng: Some(&mut rng),
    };
    let y = dropblock(&mut ctx, x, 1.0, 3).unwrap();
    assert_eq!(y, x);
}

#[test]
fn dropblock_rescales_to_preserve_mean_and_shares_mask_across_channels() {
    let ps = train_params();
    let mut tape = Tape::<f64>::new();
    let bound = ps.bind(&mut tape);
    // Channel c holds the constant c + 1, so any masked cell is visible in
    // every channel at the same position.
    let x = tape.constant(Tensor::<f64>::from_fn(vec![2, 3, 12, 12], |i| {
        ((i / 144) % 3 + 1) as f64
    }));
    let mut rng = Rng::new(9);
    let mut ctx = Ctx {
        tape: &mut tape,
        bound: &bound,
        mode: Mode::Train { update_stats: false },
        stats: None,
        rng: Some(&mut rng),
    };
    let y = dropblock(&mut ctx, x, 0.8, 3).unwrap();
    let out = tape.value(y).clone();
    let plane = 144;
    for s in 0..2 {
        for c in 0..3 {
            let base = (s * 3 + c) * plane;
            let mut sum = 0.0;
            for p in 0..plane {
                let v = out.data()[base + p];
                let v0 = out.data()[s * 3 * plane + p];
                // Same cells dropped in every channel of the sample.
                assert_eq!(v == 0.0, v0 == 0.0, "mask differs at sample {s} channel {c} cell {p}");
                sum += v;
            }
            let mean = sum / plane as f64;
            // count_total/count_kept rescale keeps the mean exact per mask.
            assert!((mean - (c + 1) as f64).abs() < 1e-12, "channel mean {mean}");
        }
    }
}

#[test]
fn dropblock_rejects_oversized_blocks_even_in_eval() {
    let ps = train_params();
    let mut tape = Tape::<f64>::new();
    let bound = ps.bind(&mut tape);
    let x = tape.constant(Tensor::<f64>::zeros(vec![1, 1, 4, 4]));
    let mut ctx = Ctx::eval(&mut tape, &bound);
    assert!(dropblock(&mut ctx, x, 0.9, 5).is_err());
    assert!(dropblock(&mut ctx, x, 0.9, 2).is_err());
    let x3 = tape.constant(Tensor::<f64>::zeros(vec![1, 4, 4]));
    let mut ctx = Ctx::eval(&mut tape, &bound);
    assert!(dropblock(&mut ctx, x3, 0.9, 3).is_err());
}
