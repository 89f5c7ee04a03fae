use super::*;
use crate::rng::Rng;
use std::rc::Rc;

fn t1(data: &[f64]) -> Tensor<f64> {
    Tensor::new(vec![data.len()], data.to_vec()).unwrap()
}

#[test]
fn add_broadcasts_bias_row() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let b = tape.constant(t1(&[10.0, 20.0, 30.0]));
    let y = tape.add(x, b).unwrap();
    assert_eq!(tape.value(y).data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
}

#[test]
fn add_broadcasts_channel_bias() {
    // (B,C,L) + (C,1): the conv bias pattern.
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::<f64>::zeros(vec![2, 2, 3]));
    let b = tape.constant(Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap());
    let y = tape.add(x, b).unwrap();
    assert_eq!(tape.shape(y), &[2, 2, 3]);
    assert_eq!(tape.value(y).data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
}

#[test]
fn broadcast_backward_sums_over_expanded_axes() {
    // y = sum(x * w) with w shaped (3,) against x (2,3): dw gets column sums of x.
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let w = tape.param(t1(&[1.0, 1.0, 1.0]));
    let prod = tape.mul(x, w).unwrap();
    let loss = tape.sum_all(prod).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(w).unwrap().data(), &[5.0, 7.0, 9.0]);
}

#[test]
fn fan_out_accumulates() {
    // y = x·x + x ⇒ dy/dx = 2x + 1
    let mut tape = Tape::new();
    let x = tape.param(t1(&[3.0]));
    let sq = tape.mul(x, x).unwrap();
    let y = tape.add(sq, x).unwrap();
    let loss = tape.sum_all(y).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[7.0]);
}

#[test]
fn matmul_forward_and_backward_hand_values() {
    let mut tape = Tape::new();
    let a = tape.param(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = tape.param(Tensor::new(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
    let y = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(y).data(), &[19.0, 22.0, 43.0, 50.0]);
    let loss = tape.sum_all(y).unwrap();
    tape.backward(loss).unwrap();
    // dA = 1 @ Bᵀ: rows are [b00+b01, b10+b11] = [11, 15]
    assert_eq!(tape.grad(a).unwrap().data(), &[11.0, 15.0, 11.0, 15.0]);
    // dB = Aᵀ @ 1: rows repeat column sums of A = [4, 6]
    assert_eq!(tape.grad(b).unwrap().data(), &[4.0, 4.0, 6.0, 6.0]);
}

#[test]
fn mean_axes_keepdims_shape_and_grad() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::new(vec![2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap());
    let m = tape.mean_axes(x, &[0]).unwrap();
    assert_eq!(tape.shape(m), &[1, 2]);
    assert_eq!(tape.value(m).data(), &[3.0, 5.0]);
    let loss = tape.sum_all(m).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[0.5, 0.5, 0.5, 0.5]);
}

#[test]
fn sum_over_middle_axis() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::<f64>::from_fn(vec![2, 3, 2], |i| i as f64));
    let s = tape.sum_axes(x, &[1]).unwrap();
    assert_eq!(tape.shape(s), &[2, 1, 2]);
    // slab 0 rows: [0,1],[2,3],[4,5] → [6,9]; slab 1: [6,7],[8,9],[10,11] → [24,27]
    assert_eq!(tape.value(s).data(), &[6.0, 9.0, 24.0, 27.0]);
}

#[test]
fn permute_roundtrip_and_grad() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::<f64>::from_fn(vec![2, 3, 4], |i| i as f64));
    let p = tape.permute(x, &[2, 0, 1]).unwrap();
    assert_eq!(tape.shape(p), &[4, 2, 3]);
    let back = tape.permute(p, &[1, 2, 0]).unwrap();
    assert_eq!(tape.value(back), tape.value(x));
    let weights = tape.constant(Tensor::<f64>::from_fn(vec![4, 2, 3], |i| (i % 5) as f64));
    let prod = tape.mul(p, weights).unwrap();
    let loss = tape.sum_all(prod).unwrap();
    tape.backward(loss).unwrap();
    // Gradient of x at (i,j,k) equals weight at (k,i,j).
    let g = tape.grad(x).unwrap();
    let w = tape.value(weights);
    for i in 0..2 {
        for j in 0..3 {
            for k in 0..4 {
                assert_eq!(g.data()[(i * 3 + j) * 4 + k], w.data()[(k * 2 + i) * 3 + j]);
            }
        }
    }
}

#[test]
fn slice_and_concat_are_inverse() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::<f64>::from_fn(vec![2, 5], |i| i as f64));
    let left = tape.slice(x, &[(0, 2), (0, 2)]).unwrap();
    let right = tape.slice(x, &[(0, 2), (2, 5)]).unwrap();
    assert_eq!(tape.value(left).data(), &[0.0, 1.0, 5.0, 6.0]);
    assert_eq!(tape.value(right).data(), &[2.0, 3.0, 4.0, 7.0, 8.0, 9.0]);
    let joined = tape.concat(&[left, right], 1).unwrap();
    assert_eq!(tape.value(joined), tape.value(x));
    let loss = tape.sum_all(joined).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[1.0; 10]);
}

#[test]
fn concat_axis0_values() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
    let b = tape.constant(Tensor::new(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap());
    let y = tape.concat(&[a, b], 0).unwrap();
    assert_eq!(tape.shape(y), &[3, 2]);
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn detach_blocks_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(t1(&[2.0]));
    let d = tape.detach(x);
    let y = tape.mul(x, d).unwrap();
    let loss = tape.sum_all(y).unwrap();
    tape.backward(loss).unwrap();
    // Only the live branch contributes: d(x·c)/dx = c = 2, not 2x = 4.
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0]);
}

#[test]
fn backward_requires_scalar_root() {
    let mut tape = Tape::new();
    let x = tape.param(t1(&[1.0, 2.0]));
    let err = tape.backward(x).unwrap_err();
    assert!(err.to_string().contains("scalar"), "{err}");
}

#[test]
fn elementwise_chain_matches_finite_differences() {
    let mut rng = Rng::new(11);
    let x = Tensor::<f64>::rand_uniform(vec![2, 4], 0.2, 1.5, &mut rng);
    let report = grad_check(
        std::slice::from_ref(&x),
        |tape, vars| {
            let e = tape.exp(vars[0]);
            let l = tape.ln(e);
            let s = tape.sqrt(l);
            let t = tape.tanh(s);
            let sg = tape.sigmoid(t);
            let sc = tape.scale(sg, 1.7);
            let sh = tape.add_scalar(sc, -0.3);
            let n = tape.neg(sh);
            tape.mean_all(n)
        },
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passes(1e-6), "{}", report.describe());
}

#[test]
fn relu_gradient_away_from_kink() {
    let x = t1(&[-1.0, -0.4, 0.3, 2.0]);
    let report = grad_check(
        std::slice::from_ref(&x),
        |tape, vars| {
            let r = tape.relu(vars[0]);
            tape.sum_all(r)
        },
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passes(1e-8), "{}", report.describe());
}

#[test]
fn div_with_broadcast_matches_finite_differences() {
    let mut rng = Rng::new(3);
    let a = Tensor::<f64>::rand_uniform(vec![2, 3], -2.0, 2.0, &mut rng);
    let b = Tensor::<f64>::rand_uniform(vec![3], 0.5, 2.0, &mut rng);
    let report = grad_check(
        &[a, b],
        |tape, vars| {
            let q = tape.div(vars[0], vars[1])?;
            tape.sum_all(q)
        },
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passes(1e-7), "{}", report.describe());
}

#[test]
fn conv1d_through_tape_matches_finite_differences() {
    let mut rng = Rng::new(5);
    let x = Tensor::<f64>::rand_uniform(vec![2, 3, 7], -1.0, 1.0, &mut rng);
    let w = Tensor::<f64>::rand_uniform(vec![4, 3, 3], -0.6, 0.6, &mut rng);
    let b = Tensor::<f64>::rand_uniform(vec![4, 1], -0.1, 0.1, &mut rng);
    let report = grad_check(
        &[x, w, b],
        |tape, vars| {
            let y = tape.conv1d(vars[0], vars[1], 1, 2, 2)?;
            let y = tape.add(y, vars[2])?;
            let cot = tape.constant(Tensor::from_fn(tape.shape(y).to_vec(), |i| ((i % 5) as f64) * 0.3 - 0.4));
            let weighted = tape.mul(y, cot)?;
            tape.sum_all(weighted)
        },
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passes(1e-7), "{}", report.describe());
}

#[test]
fn conv2d_through_tape_matches_finite_differences() {
    let mut rng = Rng::new(6);
    let x = Tensor::<f64>::rand_uniform(vec![2, 2, 6, 5], -1.0, 1.0, &mut rng);
    let w = Tensor::<f64>::rand_uniform(vec![3, 2, 3, 3], -0.6, 0.6, &mut rng);
    let report = grad_check(
        &[x, w],
        |tape, vars| {
            let y = tape.conv2d(vars[0], vars[1], (2, 1), (1, 1))?;
            let cot = tape.constant(Tensor::from_fn(tape.shape(y).to_vec(), |i| ((i % 5) as f64) * 0.5 - 1.0));
            let weighted = tape.mul(y, cot)?;
            tape.sum_all(weighted)
        },
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passes(1e-7), "{}", report.describe());
}

#[test]
fn conv3d_through_tape_matches_finite_differences() {
    let mut rng = Rng::new(7);
    let x = Tensor::<f64>::rand_uniform(vec![1, 2, 4, 5, 5], -1.0, 1.0, &mut rng);
    let w = Tensor::<f64>::rand_uniform(vec![2, 2, 3, 3, 3], -0.5, 0.5, &mut rng);
    let report = grad_check(
        &[x, w],
        |tape, vars| {
            let y = tape.conv3d(vars[0], vars[1], (1, 2, 2), (1, 1, 1))?;
            let cot = tape.constant(Tensor::from_fn(tape.shape(y).to_vec(), |i| ((i % 3) as f64) - 1.0));
            let weighted = tape.mul(y, cot)?;
            tape.sum_all(weighted)
        },
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passes(1e-7), "{}", report.describe());
}

#[test]
fn maxpool_through_tape_matches_finite_differences() {
    // Distinct values keep the argmax stable under the probe step.
    let x = Tensor::<f64>::from_fn(vec![1, 2, 4, 4], |i| ((i * 7919) % 97) as f64 * 0.1);
    let report = grad_check(
        std::slice::from_ref(&x),
        |tape, vars| {
            let y = tape.maxpool2d(vars[0], (3, 3), (2, 2), (1, 1))?;
            let cot = tape.constant(Tensor::from_fn(tape.shape(y).to_vec(), |i| (i + 1) as f64));
            let weighted = tape.mul(y, cot)?;
            tape.sum_all(weighted)
        },
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passes(1e-8), "{}", report.describe());
}

#[derive(Debug)]
struct SquareOp;

impl CustomOp<f64> for SquareOp {
    fn name(&self) -> &'static str {
        "square"
    }

    fn forward(&self, inputs: &[&Tensor<f64>]) -> crate::Result<(Tensor<f64>, Vec<Tensor<f64>>)> {
        Ok((inputs[0].map(|v| v * v), vec![]))
    }

    fn backward(
        &self,
        upstream: &Tensor<f64>,
        _saved: &[Tensor<f64>],
        inputs: &[&Tensor<f64>],
    ) -> crate::Result<Vec<Option<Tensor<f64>>>> {
        let d = Tensor::new(
            upstream.shape().to_vec(),
            upstream.data().iter().zip(inputs[0].data()).map(|(&g, &x)| g * 2.0 * x).collect(),
        )?;
        Ok(vec![Some(d)])
    }
}

#[test]
fn custom_op_grad_flows() {
    let x = t1(&[1.5, -2.0, 0.25]);
    let report = grad_check(
        std::slice::from_ref(&x),
        |tape, vars| {
            let y = tape.custom(&[vars[0]], Rc::new(SquareOp))?;
            tape.sum_all(y)
        },
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passes(1e-9), "{}", report.describe());
}

#[test]
fn composite_mlp_step_matches_finite_differences() {
    // Two-layer perceptron with every wiring kind: matmul, bias broadcast,
    // tanh, slice into a log-softmax style loss.
    let mut rng = Rng::new(17);
    let x = Tensor::<f64>::rand_uniform(vec![4, 5], -1.0, 1.0, &mut rng);
    let w1 = Tensor::<f64>::rand_uniform(vec![5, 6], -0.5, 0.5, &mut rng);
    let b1 = Tensor::<f64>::rand_uniform(vec![6], -0.1, 0.1, &mut rng);
    let w2 = Tensor::<f64>::rand_uniform(vec![6, 3], -0.5, 0.5, &mut rng);
    let report = grad_check(
        &[x, w1, b1, w2],
        |tape, vars| {
            let h = tape.matmul(vars[0], vars[1])?;
            let h = tape.add(h, vars[2])?;
            let h = tape.tanh(h);
            let logits = tape.matmul(h, vars[3])?;
            let e = tape.exp(logits);
            let z = tape.sum_axes(e, &[1])?;
            let lz = tape.ln(z);
            let first = tape.slice(logits, &[(0, 4), (0, 1)])?;
            let nll = tape.sub(lz, first)?;
            tape.mean_all(nll)
        },
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passes(1e-7), "{}", report.describe());
}
