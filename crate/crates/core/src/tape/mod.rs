//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as a node in creation order; creation
//! order is already a topological order, so the backward pass is a single
//! reverse sweep. Variables are plain indices into the tape. Gradients are
//! accumulated tensors, one per node, populated by [`Tape::backward`] and
//! read back through [`Tape::grad`].
//!
//! The op set is the minimum the models need: broadcasting elementwise
//! arithmetic, a handful of activations, 2-d matmul, axis reductions, shape
//! surgery (reshape/permute/slice/concat), convolutions, max pooling, and an
//! escape hatch for ops with hand-written backward rules ([`CustomOp`]).
//!
//! Tapes are built fresh for every training step and dropped afterwards.

mod check;
pub mod conv;
mod custom;
pub mod linalg;

pub use check::{grad_check, grad_check_subsample, probe_loss, GradCheckConfig, GradCheckReport};
pub use conv::conv_out_len;
pub use custom::CustomOp;

use crate::error::{Error, Result};
use crate::tensor::{broadcast_shapes, broadcast_strides, numel_of, strides_of, Element, Tensor};
use std::rc::Rc;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
}

impl Var {
    pub fn id(self) -> usize {
        self.id
    }
}

enum Op<E: Element> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Matmul(Var, Var),
    Sum { x: Var, axes: Vec<usize> },
    Mean { x: Var, axes: Vec<usize> },
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Slice { x: Var, ranges: Vec<(usize, usize)> },
    Concat { xs: Vec<Var>, axis: usize },
    Conv1d { x: Var, w: Var, stride: usize, pad: usize, dil: usize },
    Conv2d { x: Var, w: Var, stride: (usize, usize), pad: (usize, usize) },
    Conv3d { x: Var, w: Var, stride: (usize, usize, usize), pad: (usize, usize, usize) },
    MaxPool2d { x: Var, argmax: Vec<u32> },
    Custom { inputs: Vec<Var>, op: Rc<dyn CustomOp<E>>, saved: Vec<Tensor<E>> },
}

struct Node<E: Element> {
    value: Tensor<E>,
    op: Op<E>,
    requires_grad: bool,
}

/// The recording and differentiation context.
pub struct Tape<E: Element> {
    nodes: Vec<Node<E>>,
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node { value, op, requires_grad });
        Var { id }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.id].requires_grad
    }

    /// Input data or other non-trainable tensor.
    pub fn constant(&mut self, t: Tensor<E>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable leaf; gradient is produced for it.
    pub fn param(&mut self, t: Tensor<E>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.id].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.id].value.shape()
    }

    /// Gradient of the last [`Tape::backward`] root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<E>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Copy of a node's value detached from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.id].value.clone();
        self.constant(t)
    }

    // -- elementwise binary -------------------------------------------------

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        make: fn(Var, Var) -> Op<E>,
        f: fn(E, E) -> E,
    ) -> Result<Var> {
        let out = binary_elementwise(name, self.value(a), self.value(b), f)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, make(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add, E::add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub, E::sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul, E::mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, Op::Div, E::div)
    }

    // -- elementwise unary --------------------------------------------------

    fn unary(&mut self, x: Var, op: Op<E>, f: impl Fn(E) -> E) -> Var {
        let out = self.value(x).map(f);
        let rg = self.needs(x);
        self.push(out, op, rg)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, Op::Neg(x), |v| v.neg())
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let ce = E::from_f64(c);
        self.unary(x, Op::Scale(x, c), move |v| v.mul(ce))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let ce = E::from_f64(c);
        self.unary(x, Op::AddScalar(x), move |v| v.add(ce))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), |v| v.exp())
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, Op::Ln(x), |v| v.ln())
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sqrt(x), |v| v.sqrt())
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid_stable)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > E::ZERO { v } else { E::ZERO })
    }

    // -- linear algebra -----------------------------------------------------

    /// 2-d matrix product: (m,k) @ (k,n) -> (m,n).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} @ {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(vec![m, n]);
        linalg::mm_nn(self.value(a).data(), self.value(b).data(), out.data_mut(), m, k, n);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Matmul(a, b), rg))
    }

    // -- reductions ---------------------------------------------------------

    fn check_axes(&self, name: &'static str, x: Var, axes: &[usize]) -> Result<()> {
        let rank = self.shape(x).len();
        for &ax in axes {
            if ax >= rank {
                return Err(Error::invalid(name, format!("axis {ax} out of range for rank {rank}")));
            }
        }
        Ok(())
    }

    /// Sum over `axes`, keeping them as size-1 dims.
    pub fn sum_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.check_axes("sum", x, axes)?;
        let out = reduce_sum(self.value(x), axes);
        let rg = self.needs(x);
        Ok(self.push(out, Op::Sum { x, axes: axes.to_vec() }, rg))
    }

    /// Mean over `axes`, keeping them as size-1 dims.
    pub fn mean_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.check_axes("mean", x, axes)?;
        let n: usize = axes.iter().map(|&a| self.shape(x)[a]).product();
        let mut out = reduce_sum(self.value(x), axes);
        let inv = E::from_f64(1.0 / n as f64);
        out.data_mut().iter_mut().for_each(|v| *v = v.mul(inv));
        let rg = self.needs(x);
        Ok(self.push(out, Op::Mean { x, axes: axes.to_vec() }, rg))
    }

    /// Sum of all elements down to a scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        let summed = self.sum_axes(x, &axes)?;
        self.reshape(summed, vec![])
    }

    /// Mean of all elements down to a scalar.
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let s = self.sum_all(x)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    // -- shape surgery ------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let out = self.value(x).clone().reshaped(shape)?;
        let rg = self.needs(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let rank = self.shape(x).len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid("permute", format!("perm {perm:?} is not a permutation of rank {rank}")));
        }
        let out = permute_copy(self.value(x), perm);
        let rg = self.needs(x);
        Ok(self.push(out, Op::Permute { x, perm: perm.to_vec() }, rg))
    }

    /// Contiguous sub-block; `ranges` gives [start, end) per axis.
    pub fn slice(&mut self, x: Var, ranges: &[(usize, usize)]) -> Result<Var> {
        let shape = self.shape(x);
        if ranges.len() != shape.len() {
            return Err(Error::shape("slice", format!("{} ranges for rank {}", ranges.len(), shape.len())));
        }
        for (ax, &(s, e)) in ranges.iter().enumerate() {
            if s >= e || e > shape[ax] {
                return Err(Error::invalid(
                    "slice",
                    format!("range {s}..{e} invalid for axis {ax} of size {}", shape[ax]),
                ));
            }
        }
        let out = slice_copy(self.value(x), ranges);
        let rg = self.needs(x);
        Ok(self.push(out, Op::Slice { x, ranges: ranges.to_vec() }, rg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::invalid("concat", "no inputs"));
        }
        let first = self.shape(xs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range for rank {}", first.len())));
        }
        let mut axis_total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i])
            {
                return Err(Error::shape("concat", format!("{s:?} vs {first:?} along axis {axis}")));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;

        // Views are (outer, axis, inner) blocks; inner runs are contiguous.
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Tensor::zeros(out_shape);
        let out_row = axis_total * inner;
        let mut col_off = 0;
        for &v in xs {
            let d = self.shape(v)[axis];
            let src = self.value(v).data();
            let dst = out.data_mut();
            for o in 0..outer {
                let s_base = o * d * inner;
                let d_base = o * out_row + col_off;
                dst[d_base..d_base + d * inner].copy_from_slice(&src[s_base..s_base + d * inner]);
            }
            col_off += d * inner;
        }
        let rg = xs.iter().any(|&v| self.needs(v));
        Ok(self.push(out, Op::Concat { xs: xs.to_vec(), axis }, rg))
    }

    // -- convolutions and pooling ------------------------------------------

    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, pad: usize, dil: usize) -> Result<Var> {
        let out = conv::conv1d_forward(self.value(x), self.value(w), stride, pad, dil)?;
        let rg = self.needs(x) || self.needs(w);
        Ok(self.push(out, Op::Conv1d { x, w, stride, pad, dil }, rg))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: (usize, usize), pad: (usize, usize)) -> Result<Var> {
        let out = conv::conv2d_forward(self.value(x), self.value(w), stride, pad)?;
        let rg = self.needs(x) || self.needs(w);
        Ok(self.push(out, Op::Conv2d { x, w, stride, pad }, rg))
    }

    pub fn conv3d(
        &mut self,
        x: Var,
        w: Var,
        stride: (usize, usize, usize),
        pad: (usize, usize, usize),
    ) -> Result<Var> {
        let out = conv::conv3d_forward(self.value(x), self.value(w), stride, pad)?;
        let rg = self.needs(x) || self.needs(w);
        Ok(self.push(out, Op::Conv3d { x, w, stride, pad }, rg))
    }

    pub fn maxpool2d(
        &mut self,
        x: Var,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        let (out, argmax) = conv::maxpool2d_forward(self.value(x), kernel, stride, pad)?;
        let rg = self.needs(x);
        Ok(self.push(out, Op::MaxPool2d { x, argmax }, rg))
    }

    // -- custom ops ---------------------------------------------------------

    /// Record an op with a hand-written backward rule.
    pub fn custom(&mut self, inputs: &[Var], op: Rc<dyn CustomOp<E>>) -> Result<Var> {
        let values: Vec<&Tensor<E>> = inputs.iter().map(|&v| &self.nodes[v.id].value).collect();
        let (out, saved) = op.forward(&values)?;
        let rg = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push(out, Op::Custom { inputs: inputs.to_vec(), op, saved }, rg))
    }

    // -- backward -----------------------------------------------------------

    /// Reverse sweep from a scalar root. Gradients for every node that
    /// requires them are available through [`Tape::grad`] afterwards.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_node = &self.nodes[root.id];
        if root_node.value.numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("root must be scalar-shaped, got {:?}", root_node.value.shape()),
            ));
        }
        if !root_node.requires_grad {
            return Err(Error::invalid("backward", "root does not depend on any trainable leaf"));
        }
        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(Tensor::ones(root_node.value.shape().to_vec()));
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.op_backward(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn accumulate(&self, acc: &mut [Option<Tensor<E>>], v: Var, contrib: Tensor<E>) {
        if !self.needs(v) {
            return;
        }
        match &mut acc[v.id] {
            Some(g) => {
                debug_assert_eq!(g.shape(), contrib.shape());
                for (a, b) in g.data_mut().iter_mut().zip(contrib.data()) {
                    *a = a.add(*b);
                }
            }
            slot => *slot = Some(contrib),
        }
    }

    fn op_backward(&self, id: usize, g: &Tensor<E>, acc: &mut [Option<Tensor<E>>]) -> Result<()> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.needs(*a) {
                    self.accumulate(acc, *a, reduce_to_shape(g, self.shape(*a)));
                }
                if self.needs(*b) {
                    self.accumulate(acc, *b, reduce_to_shape(g, self.shape(*b)));
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    self.accumulate(acc, *a, reduce_to_shape(g, self.shape(*a)));
                }
                if self.needs(*b) {
                    let mut neg = reduce_to_shape(g, self.shape(*b));
                    neg.data_mut().iter_mut().for_each(|v| *v = v.neg());
                    self.accumulate(acc, *b, neg);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let full = binary_elementwise("mul_vjp", g, self.value(*b), E::mul)?;
                    self.accumulate(acc, *a, reduce_to_shape(&full, self.shape(*a)));
                }
                if self.needs(*b) {
                    let full = binary_elementwise("mul_vjp", g, self.value(*a), E::mul)?;
                    self.accumulate(acc, *b, reduce_to_shape(&full, self.shape(*b)));
                }
            }
            Op::Div(a, b) => {
                if self.needs(*a) {
                    let full = binary_elementwise("div_vjp", g, self.value(*b), E::div)?;
                    self.accumulate(acc, *a, reduce_to_shape(&full, self.shape(*a)));
                }
                if self.needs(*b) {
                    // d/db (a/b) = -a / b², applied to g at full broadcast shape.
                    let ga = binary_elementwise("div_vjp", g, self.value(*a), E::mul)?;
                    let full = binary_elementwise("div_vjp", &ga, self.value(*b), |x, y| {
                        x.div(y.mul(y)).neg()
                    })?;
                    self.accumulate(acc, *b, reduce_to_shape(&full, self.shape(*b)));
                }
            }
            Op::Neg(x) => {
                let mut d = g.clone();
                d.data_mut().iter_mut().for_each(|v| *v = v.neg());
                self.accumulate(acc, *x, d);
            }
            Op::Scale(x, c) => {
                let ce = E::from_f64(*c);
                self.accumulate(acc, *x, g.map(|v| v.mul(ce)));
            }
            Op::AddScalar(x) => {
                self.accumulate(acc, *x, g.clone());
            }
            Op::Exp(x) => {
                let d = zip_map(g, &node.value, E::mul);
                self.accumulate(acc, *x, d);
            }
            Op::Ln(x) => {
                let d = zip_map(g, self.value(*x), E::div);
                self.accumulate(acc, *x, d);
            }
            Op::Sqrt(x) => {
                let half = E::from_f64(0.5);
                let d = zip_map(g, &node.value, move |gi, yi| gi.mul(half).div(yi));
                self.accumulate(acc, *x, d);
            }
            Op::Tanh(x) => {
                let d = zip_map(g, &node.value, |gi, yi| gi.mul(E::ONE.sub(yi.mul(yi))));
                self.accumulate(acc, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = zip_map(g, &node.value, |gi, yi| gi.mul(yi.mul(E::ONE.sub(yi))));
                self.accumulate(acc, *x, d);
            }
            Op::Relu(x) => {
                let d = zip_map(g, self.value(*x), |gi, xi| if xi > E::ZERO { gi } else { E::ZERO });
                self.accumulate(acc, *x, d);
            }
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.needs(*a) {
                    let mut da = Tensor::zeros(vec![m, k]);
                    linalg::mm_nt(g.data(), self.value(*b).data(), da.data_mut(), m, n, k);
                    self.accumulate(acc, *a, da);
                }
                if self.needs(*b) {
                    let mut db = Tensor::zeros(vec![k, n]);
                    linalg::mm_tn(self.value(*a).data(), g.data(), db.data_mut(), k, m, n);
                    self.accumulate(acc, *b, db);
                }
            }
            Op::Sum { x, axes } => {
                let d = broadcast_back(g, self.shape(*x), axes, E::ONE);
                self.accumulate(acc, *x, d);
            }
            Op::Mean { x, axes } => {
                let n: usize = axes.iter().map(|&a| self.shape(*x)[a]).product();
                let d = broadcast_back(g, self.shape(*x), axes, E::from_f64(1.0 / n as f64));
                self.accumulate(acc, *x, d);
            }
            Op::Reshape(x) => {
                let d = g.clone().reshaped(self.shape(*x).to_vec())?;
                self.accumulate(acc, *x, d);
            }
            Op::Permute { x, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                self.accumulate(acc, *x, permute_copy(g, &inverse));
            }
            Op::Slice { x, ranges } => {
                let mut d = Tensor::zeros(self.shape(*x).to_vec());
                scatter_slice(&mut d, g, ranges);
                self.accumulate(acc, *x, d);
            }
            Op::Concat { xs, axis } => {
                let mut start = 0;
                for &v in xs {
                    let d_ax = self.shape(v)[*axis];
                    let ranges: Vec<(usize, usize)> = node
                        .value
                        .shape()
                        .iter()
                        .enumerate()
                        .map(|(i, &dim)| if i == *axis { (start, start + d_ax) } else { (0, dim) })
                        .collect();
                    if self.needs(v) {
                        self.accumulate(acc, v, slice_copy(g, &ranges));
                    }
                    start += d_ax;
                }
            }
            Op::Conv1d { x, w, stride, pad, dil } => {
                let (dx, dw) = conv::conv1d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    *stride,
                    *pad,
                    *dil,
                    self.needs(*x),
                    self.needs(*w),
                )?;
                if let Some(dx) = dx {
                    self.accumulate(acc, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(acc, *w, dw);
                }
            }
            Op::Conv2d { x, w, stride, pad } => {
                let (dx, dw) = conv::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    *stride,
                    *pad,
                    self.needs(*x),
                    self.needs(*w),
                )?;
                if let Some(dx) = dx {
                    self.accumulate(acc, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(acc, *w, dw);
                }
            }
            Op::Conv3d { x, w, stride, pad } => {
                let (dx, dw) = conv::conv3d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    *stride,
                    *pad,
                    self.needs(*x),
                    self.needs(*w),
                )?;
                if let Some(dx) = dx {
                    self.accumulate(acc, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(acc, *w, dw);
                }
            }
            Op::MaxPool2d { x, argmax } => {
                let d = conv::maxpool2d_backward(self.shape(*x), g, argmax);
                self.accumulate(acc, *x, d);
            }
            Op::Custom { inputs, op, saved } => {
                let values: Vec<&Tensor<E>> = inputs.iter().map(|&v| &self.nodes[v.id].value).collect();
                let contribs = op.backward(g, saved, &values)?;
                if contribs.len() != inputs.len() {
                    return Err(Error::invalid(
                        "custom_backward",
                        format!("{} returned {} gradients for {} inputs", op.name(), contribs.len(), inputs.len()),
                    ));
                }
                for (&v, c) in inputs.iter().zip(contribs) {
                    if let Some(c) = c {
                        self.accumulate(acc, v, c);
                    }
                }
            }
        }
        Ok(())
    }
}

fn sigmoid_stable<E: Element>(x: E) -> E {
    if x >= E::ZERO {
        E::ONE.div(E::ONE.add(x.neg().exp()))
    } else {
        let e = x.exp();
        e.div(E::ONE.add(e))
    }
}

/// Elementwise combine of same-shape tensors (no broadcasting).
fn zip_map<E: Element>(a: &Tensor<E>, b: &Tensor<E>, f: impl Fn(E, E) -> E) -> Tensor<E> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

#[derive(Clone, Copy, PartialEq)]
enum SuffixKind {
    Unknown,
    Dense,
    Scalar,
}

/// Broadcasting elementwise combine. Finds the longest trailing run of axes
/// over which each operand is either dense (dims match the output) or fully
/// broadcast (all ones), does that run with a flat loop, and walks the
/// leading axes with counters.
pub(crate) fn binary_elementwise<E: Element>(
    op: &'static str,
    a: &Tensor<E>,
    b: &Tensor<E>,
    f: fn(E, E) -> E,
) -> Result<Tensor<E>> {
    if a.shape() == b.shape() {
        return Ok(zip_map(a, b, f));
    }
    let out_shape = broadcast_shapes(op, a.shape(), b.shape())?;
    let rank = out_shape.len();

    let dim_at = |shape: &[usize], i: usize| -> usize {
        let off = rank - shape.len();
        if i < off {
            1
        } else {
            shape[i - off]
        }
    };

    let mut a_kind = SuffixKind::Unknown;
    let mut b_kind = SuffixKind::Unknown;
    let mut split = rank;
    while split > 0 {
        let i = split - 1;
        let (da, db, d) = (dim_at(a.shape(), i), dim_at(b.shape(), i), out_shape[i]);
        let step = |kind: SuffixKind, dim: usize| -> Option<SuffixKind> {
            if d == 1 {
                return Some(kind);
            }
            if dim == d {
                match kind {
                    SuffixKind::Scalar => None,
                    _ => Some(SuffixKind::Dense),
                }
            } else {
                match kind {
                    SuffixKind::Dense => None,
                    _ => Some(SuffixKind::Scalar),
                }
            }
        };
        match (step(a_kind, da), step(b_kind, db)) {
            (Some(na), Some(nb)) => {
                a_kind = na;
                b_kind = nb;
                split = i;
            }
            _ => break,
        }
    }
    let inner: usize = out_shape[split..].iter().product();
    let outer: usize = out_shape[..split].iter().product();

    let a_str = broadcast_strides(a.shape(), &out_shape);
    let b_str = broadcast_strides(b.shape(), &out_shape);
    let lead = &out_shape[..split];

    let mut out = Tensor::zeros(out_shape.clone());
    let out_data = out.data_mut();
    let (ad, bd) = (a.data(), b.data());
    let a_dense = a_kind == SuffixKind::Dense;
    let b_dense = b_kind == SuffixKind::Dense;

    for o in 0..outer {
        // Decode the leading index to per-operand base offsets.
        let mut rem = o;
        let (mut a_base, mut b_base) = (0usize, 0usize);
        for i in (0..split).rev() {
            let idx = rem % lead[i];
            rem /= lead[i];
            a_base += idx * a_str[i];
            b_base += idx * b_str[i];
        }
        let dst = &mut out_data[o * inner..(o + 1) * inner];
        match (a_dense, b_dense) {
            (true, true) => {
                let ar = &ad[a_base..a_base + inner];
                let br = &bd[b_base..b_base + inner];
                for j in 0..inner {
                    dst[j] = f(ar[j], br[j]);
                }
            }
            (true, false) => {
                let ar = &ad[a_base..a_base + inner];
                let bv = bd[b_base];
                for j in 0..inner {
                    dst[j] = f(ar[j], bv);
                }
            }
            (false, true) => {
                let av = ad[a_base];
                let br = &bd[b_base..b_base + inner];
                for j in 0..inner {
                    dst[j] = f(av, br[j]);
                }
            }
            (false, false) => {
                let v = f(ad[a_base], bd[b_base]);
                dst.iter_mut().for_each(|d| *d = v);
            }
        }
    }
    Ok(out)
}

/// Sum `t` down to `target` under right-aligned broadcasting rules.
pub(crate) fn reduce_to_shape<E: Element>(t: &Tensor<E>, target: &[usize]) -> Tensor<E> {
    if t.shape() == target {
        return t.clone();
    }
    let rank = t.rank();
    let off = rank - target.len();
    let mut out: Tensor<E> = Tensor::zeros(target.to_vec());
    let t_shape = t.shape().to_vec();
    let tgt_strides = strides_of(target);
    // Output stride per input axis; 0 where the target broadcasts.
    let mut out_stride = vec![0usize; rank];
    for i in off..rank {
        if target[i - off] != 1 {
            out_stride[i] = tgt_strides[i - off];
        }
    }
    let out_data = out.data_mut();
    let mut idx = vec![0usize; rank];
    let mut o = 0usize;
    for &v in t.data() {
        out_data[o] = out_data[o].add(v);
        // Odometer increment, keeping o in sync.
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            o += out_stride[ax];
            if idx[ax] < t_shape[ax] {
                break;
            }
            o -= out_stride[ax] * t_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Sum over `axes`, keeping them as size-1 dims.
fn reduce_sum<E: Element>(t: &Tensor<E>, axes: &[usize]) -> Tensor<E> {
    let mut out_shape = t.shape().to_vec();
    for &ax in axes {
        out_shape[ax] = 1;
    }
    let rank = t.rank();
    let mut stride = strides_of(&out_shape);
    for &ax in axes {
        stride[ax] = 0;
    }
    let t_shape = t.shape().to_vec();
    let mut out: Tensor<E> = Tensor::zeros(out_shape);
    let out_data = out.data_mut();
    let mut idx = vec![0usize; rank];
    let mut o = 0usize;
    for &v in t.data() {
        out_data[o] = out_data[o].add(v);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            o += stride[ax];
            if idx[ax] < t_shape[ax] {
                break;
            }
            o -= stride[ax] * t_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Expand a reduced (keepdims) gradient back over `axes`, scaling each copy.
fn broadcast_back<E: Element>(g: &Tensor<E>, x_shape: &[usize], axes: &[usize], scale: E) -> Tensor<E> {
    let rank = x_shape.len();
    let g_strides = strides_of(g.shape());
    let mut stride = vec![0usize; rank];
    for i in 0..rank {
        stride[i] = g_strides[i];
    }
    for &ax in axes {
        stride[ax] = 0;
    }
    let g_data = g.data();
    let mut out: Tensor<E> = Tensor::zeros(x_shape.to_vec());
    let out_data = out.data_mut();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for slot in out_data.iter_mut() {
        *slot = g_data[src].mul(scale);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += stride[ax];
            if idx[ax] < x_shape[ax] {
                break;
            }
            src -= stride[ax] * x_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Reorder axes; `perm[i]` names the source axis that becomes output axis i.
pub(crate) fn permute_copy<E: Element>(t: &Tensor<E>, perm: &[usize]) -> Tensor<E> {
    let in_shape = t.shape();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let in_strides = strides_of(in_shape);
    // Source stride for each output axis.
    let stride: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = out_shape.len();
    let n = numel_of(&out_shape);
    let t_data = t.data();
    let mut out = Tensor::zeros(out_shape.clone());
    let out_data = out.data_mut();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for slot in out_data.iter_mut().take(n) {
        *slot = t_data[src];
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += stride[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= stride[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Copy the block described by per-axis [start, end) ranges.
pub(crate) fn slice_copy<E: Element>(t: &Tensor<E>, ranges: &[(usize, usize)]) -> Tensor<E> {
    let out_shape: Vec<usize> = ranges.iter().map(|&(s, e)| e - s).collect();
    let strides = strides_of(t.shape());
    let rank = ranges.len();
    let inner = if rank == 0 { 1 } else { out_shape[rank - 1] };
    let t_data = t.data();
    let mut out = Tensor::zeros(out_shape.clone());
    let out_total = out.numel();
    let out_data = out.data_mut();
    if rank == 0 {
        out_data[0] = t_data[0];
        return out;
    }
    let outer = out_total / inner;
    for o in 0..outer {
        let mut rem = o;
        let mut src = ranges[rank - 1].0 * strides[rank - 1];
        for ax in (0..rank - 1).rev() {
            let idx = rem % out_shape[ax];
            rem /= out_shape[ax];
            src += (ranges[ax].0 + idx) * strides[ax];
        }
        out_data[o * inner..(o + 1) * inner].copy_from_slice(&t_data[src..src + inner]);
    }
    out
}

/// Add `g` into the block of `dst` described by `ranges`.
fn scatter_slice<E: Element>(dst: &mut Tensor<E>, g: &Tensor<E>, ranges: &[(usize, usize)]) {
    let rank = ranges.len();
    let strides = strides_of(dst.shape());
    let g_shape = g.shape().to_vec();
    let inner = if rank == 0 { 1 } else { g_shape[rank - 1] };
    let dst_data = dst.data_mut();
    let g_data = g.data();
    if rank == 0 {
        dst_data[0] = dst_data[0].add(g_data[0]);
        return;
    }
    let outer = g.numel() / inner;
    for o in 0..outer {
        let mut rem = o;
        let mut base = ranges[rank - 1].0 * strides[rank - 1];
        for ax in (0..rank - 1).rev() {
            let idx = rem % g_shape[ax];
            rem /= g_shape[ax];
            base += (ranges[ax].0 + idx) * strides[ax];
        }
        let src = &g_data[o * inner..(o + 1) * inner];
        for (j, &v) in src.iter().enumerate() {
            dst_data[base + j] = dst_data[base + j].add(v);
        }
    }
}

#[cfg(test)]
mod tests;
