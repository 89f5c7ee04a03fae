//! Central-difference gradient verification.
//!
//! The checker rebuilds the computation twice per probed coordinate, so the
//! graph-building closure must be deterministic. Checks run in f64; training
//! code is f32, but every layer is generic over the element type, so the same
//! code path is what gets verified.

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Probe at most this many coordinates per input tensor, sampled without
    /// replacement. None probes everything.
    pub max_coords_per_tensor: Option<usize>,
    /// Seed for coordinate subsampling.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { eps: 1e-5, max_coords_per_tensor: None, seed: 0x9e3779b9 }
    }
}

/// Worst observed coordinate of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (input index, flat coordinate, analytic, numeric) behind max_rel_err.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }

    pub fn describe(&self) -> String {
        match self.worst {
            Some((input, coord, a, n)) => format!(
                "max rel err {:.3e} at input {} coord {} (analytic {:.9e}, numeric {:.9e}), {} coords",
                self.max_rel_err, input, coord, a, n, self.coords_checked
            ),
            None => "no coordinates checked".to_string(),
        }
    }
}

/// rel(a, n) = |a - n| / max(1e-8, |a| + |n|)
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / f64::max(1e-8, a.abs() + n.abs())
}

/// Verify the tape gradient of a scalar-valued function against central
/// differences over every (or a sampled subset of) input coordinate.
///
/// `build` receives a fresh tape and one trainable leaf per input tensor and
/// must return the scalar root.
pub fn grad_check(
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.param(t.clone())).collect();
        let root = build(&mut tape, &vars)?;
        tape.value(root).item()
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let root = build(&mut tape, &vars)?;
    if tape.value(root).numel() != 1 {
        return Err(Error::invalid(
            "grad_check",
            format!("build must return a scalar, got shape {:?}", tape.value(root).shape()),
        ));
    }
    tape.backward(root)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .enumerate()
        .map(|(i, &v)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape().to_vec())))
        .collect();
    drop(tape);

    let mut rng = Rng::new(cfg.seed);
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = GradCheckReport { max_rel_err: 0.0, worst: None, coords_checked: 0 };

    for i in 0..inputs.len() {
        let n = inputs[i].numel();
        let coords: Vec<usize> = match cfg.max_coords_per_tensor {
            Some(limit) if n > limit => {
                let mut all: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut all);
                all.truncate(limit);
                all
            }
            _ => (0..n).collect(),
        };
        for &c in &coords {
            let orig = work[i].data()[c];
            work[i].data_mut()[c] = orig + cfg.eps;
            let plus = eval(&work)?;
            work[i].data_mut()[c] = orig - cfg.eps;
            let minus = eval(&work)?;
            work[i].data_mut()[c] = orig;

            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = analytic[i].data()[c];
            let e = rel_err(a, numeric);
            report.coords_checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = Some((i, c, a, numeric));
            }
        }
    }
    Ok(report)
}

/// Reduce an arbitrary tensor to a scalar through a fixed random probe:
/// sum(y ⊙ p) with p ~ U(−1, 1) drawn from `seed`. A uniform reduction such
/// as plain mean can cancel sign errors between coordinates; a random probe
/// makes the scalar sensitive to each output independently.
pub fn probe_loss<E: crate::tensor::Element>(tape: &mut Tape<E>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let mut rng = Rng::new(seed);
    let probe = Tensor::rand_uniform(shape, -1.0, 1.0, &mut rng);
    let probe = tape.constant(probe);
    let prod = tape.mul(y, probe)?;
    tape.sum_all(prod)
}

/// [`grad_check`] with a per-tensor coordinate budget, for big composites.
pub fn grad_check_subsample(
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let cfg = GradCheckConfig { max_coords_per_tensor: Some(max_coords), seed, ..Default::default() };
    grad_check(inputs, build, &cfg)
}
