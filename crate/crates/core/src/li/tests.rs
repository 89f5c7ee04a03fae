use super::*;
use crate::nn::Bound;
use crate::tape::{grad_check, GradCheckConfig, Tape};

#[test]
fn zero_diag_examples() {
    let w = Tensor::<f64>::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let z = zero_diag(&w).unwrap();
    assert_eq!(z.data(), &[0.0, 2.0, 3.0, 0.0]);
    let zz = zero_diag(&z).unwrap();
    assert_eq!(zz.data(), z.data());
    let zero = Tensor::<f64>::zeros(vec![3, 3]);
    assert_eq!(zero_diag(&zero).unwrap().data(), zero.data());
    assert!(zero_diag(&Tensor::<f64>::zeros(vec![2, 3])).is_err());
}

#[test]
fn heaviside_is_zero_at_zero() {
    let x = Tensor::<f64>::new(vec![3], vec![-1.0, 0.0, 0.5]).unwrap();
    assert_eq!(heaviside(&x).data(), &[0.0, 0.0, 1.0]);
}

#[test]
fn surrogate_sigmoid_closed_forms() {
    for k in [1.0, 5.0, 10.0] {
        let (v, d) = surrogate_sigmoid(0.0, k);
        assert_eq!(v, 0.5);
        assert!((d - k / 4.0).abs() < 1e-15);
    }
    let (_, d10) = surrogate_sigmoid(0.0, 10.0);
    assert!((d10 - 2.5).abs() < 1e-15);
    let (v, _) = surrogate_sigmoid(3.0f64.ln(), 1.0);
    assert!((v - 0.75).abs() < 1e-15);
}

fn tensor2(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
    Tensor::new(vec![rows, cols], v.to_vec()).unwrap()
}

#[test]
fn worked_forward_example() {
    let x = tensor2(1, 2, &[1.0, -2.0]);
    let w = tensor2(2, 2, &[0.0, 0.5, 0.25, 0.0]);
    let b = tensor2(1, 2, &[0.0, 0.0]);
    let fwd = li_forward(&x, &w, &b, 10.0, LiMode::Spiking).unwrap();
    // a = [−0.5, 0.5] → gate [0, 1] → out [0, −2]
    assert_eq!(fwd.gate.data(), &[0.0, 1.0]);
    assert_eq!(fwd.out.data(), &[0.0, -2.0]);
}

#[test]
fn open_and_closed_gates() {
    let x = tensor2(2, 3, &[0.3, -1.0, 2.0, 0.0, 4.0, -0.5]);
    let w = Tensor::zeros(vec![3, 3]);
    let open = li_forward(&x, &w, &Tensor::ones(vec![1, 3]), 10.0, LiMode::Spiking).unwrap();
    assert_eq!(open.out.data(), x.data());
    let closed =
        li_forward(&x, &w, &tensor2(1, 3, &[-1.0, -1.0, -1.0]), 10.0, LiMode::Spiking).unwrap();
    assert!(closed.out.data().iter().all(|v| *v == 0.0));
}

#[test]
fn spiking_output_is_zero_or_passthrough() {
    let mut rng = Rng::new(3);
    let x = Tensor::<f64>::rand_uniform(vec![4, 6], -2.0, 2.0, &mut rng);
    let w = Tensor::<f64>::rand_uniform(vec![6, 6], -0.5, 0.5, &mut rng);
    let b = Tensor::<f64>::rand_uniform(vec![1, 6], -0.5, 0.5, &mut rng);
    let fwd = li_forward(&x, &w, &b, 10.0, LiMode::Spiking).unwrap();
    for (o, i) in fwd.out.data().iter().zip(x.data()) {
        assert!(*o == 0.0 || o == i);
    }
}

#[test]
fn width_mismatch_rejected() {
    let x = tensor2(1, 2, &[1.0, 2.0]);
    let w = Tensor::<f64>::zeros(vec![3, 3]);
    let b = Tensor::<f64>::zeros(vec![1, 3]);
    assert!(li_forward(&x, &w, &b, 10.0, LiMode::Spiking).is_err());
}

#[test]
fn relaxed_converges_to_spiking_as_k_grows() {
    let mut rng = Rng::new(8);
    let x = Tensor::<f64>::rand_uniform(vec![3, 4], -2.0, 2.0, &mut rng);
    let w = Tensor::<f64>::rand_uniform(vec![4, 4], -0.5, 0.5, &mut rng);
    let b = Tensor::<f64>::rand_uniform(vec![1, 4], -0.5, 0.5, &mut rng);
    let spiking = li_forward(&x, &w, &b, 1e4, LiMode::Spiking).unwrap();
    let relaxed = li_forward(&x, &w, &b, 1e4, LiMode::Relaxed).unwrap();
    // Only compare where the pre-activation is clear of the threshold; the
    // gate value there differs by at most σ(−100).
    let zdw = zero_diag(&w).unwrap();
    for r in 0..3 {
        for c in 0..4 {
            let mut a = b.data()[c];
            for i in 0..4 {
                a += x.data()[r * 4 + i] * zdw.data()[i * 4 + c];
            }
            if a.abs() > 0.01 {
                let d = (spiking.out.data()[r * 4 + c] - relaxed.out.data()[r * 4 + c]).abs();
                assert!(d < 1e-3, "a={a} diff={d}");
            }
        }
    }
}

/// Scalar-loop reimplementation of the backward formula, kept free of the
/// matrix kernels so it fails independently.
fn two_loop_backward(
    upstream: &Tensor<f64>,
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    k: f64,
    spiking: bool,
) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>) {
    let (bsz, n) = (x.shape()[0], x.shape()[1]);
    let at = |t: &Tensor<f64>, r: usize, c: usize| t.data()[r * t.shape()[1] + c];
    let zdw = |i: usize, j: usize| if i == j { 0.0 } else { at(w, i, j) };

    let mut a = vec![0.0; bsz * n];
    for r in 0..bsz {
        for c in 0..n {
            let mut acc = b.data()[c];
            for i in 0..n {
                acc += at(x, r, i) * zdw(i, c);
            }
            a[r * n + c] = acc;
        }
    }
    let gate: Vec<f64> = a
        .iter()
        .map(|&v| if spiking { if v > 0.0 { 1.0 } else { 0.0 } } else { surrogate_sigmoid(v, k).0 })
        .collect();
    let gprime: Vec<f64> = a.iter().map(|&v| surrogate_sigmoid(v, k).1).collect();
    let s: Vec<f64> = (0..bsz * n)
        .map(|i| upstream.data()[i] * x.data()[i] * gprime[i])
        .collect();

    let mut dx = vec![0.0; bsz * n];
    for r in 0..bsz {
        for i in 0..n {
            let mut acc = upstream.data()[r * n + i] * gate[r * n + i];
            for c in 0..n {
                acc += s[r * n + c] * zdw(i, c);
            }
            dx[r * n + i] = acc;
        }
    }
    let mut dw = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut acc = 0.0;
            for r in 0..bsz {
                acc += at(x, r, i) * s[r * n + j];
            }
            dw[i * n + j] = acc;
        }
    }
    let mut db = vec![0.0; n];
    for c in 0..n {
        for r in 0..bsz {
            db[c] += s[r * n + c];
        }
    }
    (
        Tensor::new(vec![bsz, n], dx).unwrap(),
        Tensor::new(vec![n, n], dw).unwrap(),
        Tensor::new(vec![1, n], db).unwrap(),
    )
}

#[test]
fn backward_matches_two_loop_oracle_in_both_modes() {
    let mut rng = Rng::new(17);
    for &(bsz, n) in &[(1usize, 2usize), (3, 4)] {
        let x = Tensor::<f64>::rand_uniform(vec![bsz, n], -1.5, 1.5, &mut rng);
        let w = Tensor::<f64>::rand_uniform(vec![n, n], -0.6, 0.6, &mut rng);
        let b = Tensor::<f64>::rand_uniform(vec![1, n], -0.4, 0.4, &mut rng);
        let up = Tensor::<f64>::rand_uniform(vec![bsz, n], -1.0, 1.0, &mut rng);
        for mode in [LiMode::Spiking, LiMode::Relaxed] {
            let fwd = li_forward(&x, &w, &b, 10.0, mode).unwrap();
            let grads = li_backward(&up, &x, &w, &fwd.gate, &fwd.gate_relaxed, 10.0).unwrap();
            let (odx, odw, odb) =
                two_loop_backward(&up, &x, &w, &b, 10.0, mode == LiMode::Spiking);
            assert!(grads.dx.max_abs_diff(&odx).unwrap() < 1e-12);
            assert!(grads.dw.max_abs_diff(&odw).unwrap() < 1e-12);
            assert!(grads.db.max_abs_diff(&odb).unwrap() < 1e-12);
        }
    }
}

#[test]
fn dw_and_db_do_not_depend_on_gate_mode() {
    let mut rng = Rng::new(23);
    let x = Tensor::<f64>::rand_uniform(vec![3, 5], -1.0, 1.0, &mut rng);
    let w = Tensor::<f64>::rand_uniform(vec![5, 5], -0.5, 0.5, &mut rng);
    let b = Tensor::<f64>::rand_uniform(vec![1, 5], -0.5, 0.5, &mut rng);
    let up = Tensor::<f64>::rand_uniform(vec![3, 5], -1.0, 1.0, &mut rng);
    let fs = li_forward(&x, &w, &b, 10.0, LiMode::Spiking).unwrap();
    let fr = li_forward(&x, &w, &b, 10.0, LiMode::Relaxed).unwrap();
    let gs = li_backward(&up, &x, &w, &fs.gate, &fs.gate_relaxed, 10.0).unwrap();
    let gr = li_backward(&up, &x, &w, &fr.gate, &fr.gate_relaxed, 10.0).unwrap();
    assert_eq!(gs.dw.data(), gr.dw.data());
    assert_eq!(gs.db.data(), gr.db.data());
}

#[test]
fn dw_diagonal_is_identically_zero() {
    let mut rng = Rng::new(29);
    let x = Tensor::<f64>::rand_uniform(vec![4, 6], -2.0, 2.0, &mut rng);
    let w = Tensor::<f64>::rand_uniform(vec![6, 6], -1.0, 1.0, &mut rng);
    let b = Tensor::<f64>::rand_uniform(vec![1, 6], -1.0, 1.0, &mut rng);
    let up = Tensor::<f64>::ones(vec![4, 6]);
    let fwd = li_forward(&x, &w, &b, 10.0, LiMode::Spiking).unwrap();
    let grads = li_backward(&up, &x, &w, &fwd.gate, &fwd.gate_relaxed, 10.0).unwrap();
    for i in 0..6 {
        assert_eq!(grads.dw.data()[i * 6 + i], 0.0);
    }
}

#[test]
fn relaxed_backward_matches_finite_differences_through_tape() {
    let mut rng = Rng::new(41);
    let x = Tensor::<f64>::rand_uniform(vec![2, 3], -1.0, 1.0, &mut rng);
    let w = Tensor::<f64>::rand_uniform(vec![3, 3], -0.5, 0.5, &mut rng);
    let b = Tensor::<f64>::rand_uniform(vec![1, 3], -0.3, 0.3, &mut rng);
    let layer = LiLayer::new("li", 3, LiMode::Relaxed);
    let report = grad_check(
        &[x, w, b],
        |tape, vars| {
            let kt = tape.constant(Tensor::scalar(10.0));
            let bound = Bound::from_pairs([
                ("li.W".to_string(), vars[1]),
                ("li.b".to_string(), vars[2]),
                ("li.k".to_string(), kt),
            ]);
            let mut ctx = Ctx::eval(tape, &bound);
            let y = layer.forward(&mut ctx, vars[0])?;
            crate::tape::probe_loss(tape, y, 5)
        },
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passes(1e-5), "{}", report.describe());
}

#[test]
fn initial_state_is_transparent_with_passthrough_gradient() {
    let mut rng = Rng::new(1);
    let layer = LiLayer::new("li", 4, LiMode::Spiking);
    let mut ps = ParamSet::<f64>::new();
    layer.init(&mut ps, &mut rng);
    assert!(!ps.entries().iter().find(|e| e.name == "li.k").unwrap().trainable);

    let x = Tensor::<f64>::rand_uniform(vec![3, 4], -2.0, 2.0, &mut rng);
    let up = Tensor::<f64>::rand_uniform(vec![3, 4], -1.0, 1.0, &mut rng);
    let w = ps.get("li.W").unwrap();
    let b = ps.get("li.b").unwrap();
    let fwd = li_forward(&x, w, b, DEFAULT_K, LiMode::Spiking).unwrap();
    assert_eq!(fwd.out.data(), x.data());
    let grads = li_backward(&up, &x, w, &fwd.gate, &fwd.gate_relaxed, DEFAULT_K).unwrap();
    assert_eq!(grads.dx.data(), up.data());
}

#[test]
fn layer_checkpoint_names_and_k_from_checkpoint() {
    let mut rng = Rng::new(2);
    let layer = LiLayer::new("li", 2, LiMode::Spiking);
    let mut ps = ParamSet::<f64>::new();
    layer.init(&mut ps, &mut rng);
    for name in ["li.W", "li.b", "li.k"] {
        assert!(ps.contains(name), "{name}");
    }
    // A non-positive k loaded from a checkpoint is rejected at forward time.
    *ps.get_mut("li.k").unwrap() = Tensor::scalar(-1.0);
    let mut tape = Tape::new();
    let bound = ps.bind(&mut tape);
    let x = tape.constant(Tensor::zeros(vec![1, 2]));
    let mut ctx = Ctx::eval(&mut tape, &bound);
    assert!(layer.forward(&mut ctx, x).is_err());
}
