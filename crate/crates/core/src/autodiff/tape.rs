//! Define-by-run tape and the differentiable operator set.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles during a
//! forward pass. [`Tape::backward`] then walks the records in reverse and
//! produces a [`Gradients`] table. Tapes are meant to be short-lived: build a
//! new one for each forward pass.

use std::cell::{Ref, RefCell};

use super::gemm::{gemm, View};
use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{DsrError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// `(k-1)·dilation` zeros on the left only.
    Causal,
    /// Same total padding split evenly, the extra element on the left.
    Symmetric,
}

impl Padding {
    pub fn left(self, kernel: usize, dilation: usize) -> usize {
        let total = (kernel - 1) * dilation;
        match self {
            Padding::Causal => total,
            Padding::Symmetric => total - total / 2,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Sqrt(usize),
    Abs(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    SumLeading(usize),
    Broadcast(usize),
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Narrow {
        a: usize,
        axis: usize,
        start: usize,
    },
    Reshape(usize),
    Conv1d {
        x: usize,
        k: usize,
        b: Option<usize>,
        dilation: usize,
        pad_left: usize,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Operation record for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

fn fmt_shapes(shapes: &[&[usize]]) -> String {
    shapes
        .iter()
        .map(|s| format!("{s:?}"))
        .collect::<Vec<_>>()
        .join(" and ")
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A constant leaf; receives no gradient outside the tape.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    /// Registers a parameter. Parameters with `requires_grad == false` are
    /// recorded as constants.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        let p = store.get(id);
        let op = if p.requires_grad {
            Op::Param(id)
        } else {
            Op::Leaf
        };
        self.push(op, p.value.clone())
    }

    fn value_ref(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if root_value.len() != 1 {
            return Err(DsrError::shape(
                "backward",
                format!("root must be scalar, got {:?}", root_value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::full(root_value.shape(), 1.0));
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let params = nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(pid) => Some((i, pid)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }
}

/// Adjoint table produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    /// Gradient with respect to a recorded value; zero when unreachable.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match self.grads.get(var.id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&var.shape()),
        }
    }

    /// Adds parameter gradients into the store's `grad` buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(node, pid) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.get_mut(pid).grad.add_assign(g);
            }
        }
    }

    /// Zeroes every gradient buffer in `store`, then accumulates.
    pub fn write_into(&self, store: &mut ParamStore) {
        store.zero_grad();
        self.accumulate_into(store);
    }
}

fn accum(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn backprop_node(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let node = &nodes[id];
    let val = |i: usize| &nodes[i].value;
    match &node.op {
        Op::Leaf | Op::Param(_) => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            let mut ga = vec![0.0; m * k];
            gemm(View::new(g.data(), m, n), View::new(bv.data(), k, n).t(), &mut ga, 0.0);
            let mut gb = vec![0.0; k * n];
            gemm(View::new(av.data(), m, k).t(), View::new(g.data(), m, n), &mut gb, 0.0);
            accum(grads, *a, Tensor::new(av.shape().to_vec(), ga).unwrap());
            accum(grads, *b, Tensor::new(bv.shape().to_vec(), gb).unwrap());
        }
        Op::Linear { x, w, b } => {
            let (xv, wv) = (val(*x), val(*w));
            let (k, n) = (wv.shape()[0], wv.shape()[1]);
            let m = xv.len() / k;
            let mut gx = vec![0.0; m * k];
            gemm(View::new(g.data(), m, n), View::new(wv.data(), k, n).t(), &mut gx, 0.0);
            let mut gw = vec![0.0; k * n];
            gemm(View::new(xv.data(), m, k).t(), View::new(g.data(), m, n), &mut gw, 0.0);
            accum(grads, *x, Tensor::new(xv.shape().to_vec(), gx).unwrap());
            accum(grads, *w, Tensor::new(wv.shape().to_vec(), gw).unwrap());
            if let Some(b) = b {
                let mut gb = vec![0.0; n];
                for row in g.data().chunks_exact(n) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                accum(grads, *b, Tensor::new(val(*b).shape().to_vec(), gb).unwrap());
            }
        }
        Op::Add(a, b) => {
            accum(grads, *a, g.clone());
            accum(grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accum(grads, *a, g.clone());
            accum(grads, *b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            accum(grads, *a, zip_map(g, val(*b), |g, y| g * y));
            accum(grads, *b, zip_map(g, val(*a), |g, x| g * x));
        }
        Op::Scale(a, c) => accum(grads, *a, g.map(|v| v * c)),
        Op::AddScalar(a) => accum(grads, *a, g.clone()),
        Op::Relu(a) => accum(
            grads,
            *a,
            zip_map(g, val(*a), |g, x| if x > 0.0 { g } else { 0.0 }),
        ),
        Op::Tanh(a) => accum(grads, *a, zip_map(g, &node.value, |g, y| g * (1.0 - y * y))),
        Op::Sigmoid(a) => accum(grads, *a, zip_map(g, &node.value, |g, y| g * y * (1.0 - y))),
        Op::Exp(a) => accum(grads, *a, zip_map(g, &node.value, |g, y| g * y)),
        Op::Log(a) => accum(grads, *a, zip_map(g, val(*a), |g, x| g / x)),
        Op::Square(a) => accum(grads, *a, zip_map(g, val(*a), |g, x| 2.0 * g * x)),
        Op::Sqrt(a) => accum(grads, *a, zip_map(g, &node.value, |g, y| 0.5 * g / y)),
        Op::Abs(a) => accum(grads, *a, zip_map(g, val(*a), |g, x| g * x.signum())),
        Op::Clamp(a, lo, hi) => accum(
            grads,
            *a,
            zip_map(g, val(*a), |g, x| if x >= *lo && x <= *hi { g } else { 0.0 }),
        ),
        Op::Sum(a) => {
            let s = g.data()[0];
            accum(grads, *a, Tensor::full(val(*a).shape(), s));
        }
        Op::Mean(a) => {
            let av = val(*a);
            let s = g.data()[0] / av.len() as f64;
            accum(grads, *a, Tensor::full(av.shape(), s));
        }
        Op::SumLeading(a) => {
            let av = val(*a);
            let c = g.len();
            let mut out = Vec::with_capacity(av.len());
            for _ in 0..av.len() / c {
                out.extend_from_slice(g.data());
            }
            accum(grads, *a, Tensor::new(av.shape().to_vec(), out).unwrap());
        }
        Op::Broadcast(a) => {
            let av = val(*a);
            let c = av.len();
            let mut out = vec![0.0; c];
            for row in g.data().chunks_exact(c) {
                for (acc, v) in out.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            accum(grads, *a, Tensor::new(av.shape().to_vec(), out).unwrap());
        }
        Op::Concat { inputs, axis } => {
            let (outer, _, inner) = split_axis(g.shape(), *axis);
            let total = g.shape()[*axis];
            let mut offset = 0;
            for &inp in inputs {
                let iv = val(inp);
                let len = iv.shape()[*axis];
                let mut out = Vec::with_capacity(iv.len());
                for o in 0..outer {
                    let base = (o * total + offset) * inner;
                    out.extend_from_slice(&g.data()[base..base + len * inner]);
                }
                accum(grads, inp, Tensor::new(iv.shape().to_vec(), out).unwrap());
                offset += len;
            }
        }
        Op::Narrow { a, axis, start } => {
            let av = val(*a);
            let (outer, total, inner) = split_axis(av.shape(), *axis);
            let len = g.shape()[*axis];
            // Accumulate in place: per-step slicing of long sequences would
            // otherwise allocate a full-size buffer on every call.
            let slot = grads[*a].get_or_insert_with(|| Tensor::zeros(av.shape()));
            let od = slot.data_mut();
            for o in 0..outer {
                let dst = (o * total + start) * inner;
                let src = o * len * inner;
                for (acc, v) in od[dst..dst + len * inner]
                    .iter_mut()
                    .zip(&g.data()[src..src + len * inner])
                {
                    *acc += v;
                }
            }
        }
        Op::Reshape(a) => {
            let shape = val(*a).shape().to_vec();
            accum(grads, *a, g.clone().reshape(&shape).unwrap());
        }
        Op::Conv1d {
            x,
            k,
            b,
            dilation,
            pad_left,
        } => {
            let (xv, kv) = (val(*x), val(*k));
            let (gx, gk, gb) = conv1d_backward(xv, kv, g, *dilation, *pad_left);
            accum(grads, *x, gx);
            accum(grads, *k, gk);
            if let Some(b) = b {
                accum(grads, *b, gb);
            }
        }
    }
}

/// Rows of the unfolded input: `[B·T, K·C_in]`.
fn im2col(x: &Tensor, ksize: usize, dilation: usize, pad_left: usize) -> Vec<f64> {
    let (bsz, t_len, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let width = ksize * cin;
    let mut cols = vec![0.0; bsz * t_len * width];
    let xd = x.data();
    for b in 0..bsz {
        for t in 0..t_len {
            let row = &mut cols[(b * t_len + t) * width..(b * t_len + t + 1) * width];
            for j in 0..ksize {
                let src = (t + j * dilation) as isize - pad_left as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let s = (b * t_len + src as usize) * cin;
                row[j * cin..(j + 1) * cin].copy_from_slice(&xd[s..s + cin]);
            }
        }
    }
    cols
}

pub(crate) fn conv1d_forward(
    x: &Tensor,
    k: &Tensor,
    bias: Option<&Tensor>,
    dilation: usize,
    pad_left: usize,
) -> Tensor {
    let (bsz, t_len) = (x.shape()[0], x.shape()[1]);
    let (ksize, cin, cout) = (k.shape()[0], k.shape()[1], k.shape()[2]);
    let cols = im2col(x, ksize, dilation, pad_left);
    let rows = bsz * t_len;
    let mut out = vec![0.0; rows * cout];
    if let Some(b) = bias {
        for row in out.chunks_exact_mut(cout) {
            row.copy_from_slice(b.data());
        }
    }
    let beta = if bias.is_some() { 1.0 } else { 0.0 };
    gemm(
        View::new(&cols, rows, ksize * cin),
        View::new(k.data(), ksize * cin, cout),
        &mut out,
        beta,
    );
    Tensor::new(vec![bsz, t_len, cout], out).unwrap()
}

fn conv1d_backward(
    x: &Tensor,
    k: &Tensor,
    g: &Tensor,
    dilation: usize,
    pad_left: usize,
) -> (Tensor, Tensor, Tensor) {
    let (bsz, t_len, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ksize, cout) = (k.shape()[0], k.shape()[2]);
    let rows = bsz * t_len;
    let width = ksize * cin;
    let cols = im2col(x, ksize, dilation, pad_left);
    let mut gk = vec![0.0; width * cout];
    gemm(
        View::new(&cols, rows, width).t(),
        View::new(g.data(), rows, cout),
        &mut gk,
        0.0,
    );
    drop(cols);
    let mut gcols = vec![0.0; rows * width];
    gemm(
        View::new(g.data(), rows, cout),
        View::new(k.data(), width, cout).t(),
        &mut gcols,
        0.0,
    );
    let mut gx = vec![0.0; x.len()];
    for b in 0..bsz {
        for t in 0..t_len {
            let row = &gcols[(b * t_len + t) * width..(b * t_len + t + 1) * width];
            for j in 0..ksize {
                let src = (t + j * dilation) as isize - pad_left as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let s = (b * t_len + src as usize) * cin;
                for (acc, v) in gx[s..s + cin].iter_mut().zip(&row[j * cin..(j + 1) * cin]) {
                    *acc += v;
                }
            }
        }
    }
    let mut gb = vec![0.0; cout];
    for row in g.data().chunks_exact(cout) {
        for (acc, v) in gb.iter_mut().zip(row) {
            *acc += v;
        }
    }
    (
        Tensor::new(x.shape().to_vec(), gx).unwrap(),
        Tensor::new(k.shape().to_vec(), gk).unwrap(),
        Tensor::vector(gb),
    )
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_ref(self.id).shape().to_vec()
    }

    pub fn value(&self) -> Tensor {
        self.tape.value_ref(self.id).clone()
    }

    /// Borrow the forward value without copying.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.value_ref(self.id))
    }

    pub fn item(&self) -> Result<f64> {
        self.tape.value_ref(self.id).item()
    }

    /// Records the current value as a new constant, cutting the gradient path.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value())
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = self.tape.value_ref(self.id).map(f);
        self.tape.push(op, v)
    }

    fn same_shape(&self, other: &Var<'t>, op: &'static str) -> Result<()> {
        let (a, b) = (self.tape.value_ref(self.id), self.tape.value_ref(other.id));
        if a.shape() != b.shape() {
            return Err(DsrError::shape(op, fmt_shapes(&[a.shape(), b.shape()])));
        }
        Ok(())
    }

    fn binary(
        &self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.same_shape(&other, name)?;
        let v = zip_map(
            &self.tape.value_ref(self.id),
            &self.tape.value_ref(other.id),
            f,
        );
        Ok(self.tape.push(op, v))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |v| v * c)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |v| v + c)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |v| v.max(0.0))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.id), |v| v * v)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(Op::Sqrt(self.id), f64::sqrt)
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(Op::Abs(self.id), f64::abs)
    }

    /// Elementwise clamp; gradient passes only inside `[lo, hi]`.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Op::Clamp(self.id, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.tape.value_ref(self.id).sum();
        self.tape.push(Op::Sum(self.id), Tensor::scalar(s))
    }

    pub fn mean(self) -> Var<'t> {
        let v = self.tape.value_ref(self.id);
        let m = v.sum() / v.len() as f64;
        drop(v);
        self.tape.push(Op::Mean(self.id), Tensor::scalar(m))
    }

    /// Sums over every axis but the last: `[.., C] → [C]`.
    pub fn sum_leading(self) -> Var<'t> {
        let v = self.tape.value_ref(self.id);
        let c = v.last_dim();
        let mut out = vec![0.0; c];
        for row in v.data().chunks_exact(c) {
            for (acc, x) in out.iter_mut().zip(row) {
                *acc += x;
            }
        }
        drop(v);
        self.tape.push(Op::SumLeading(self.id), Tensor::vector(out))
    }

    /// Repeats a `[C]` (or `[1, C]`) value along new leading axes.
    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.tape.value_ref(self.id);
        let c = v.len();
        if shape.last().copied() != Some(c) {
            return Err(DsrError::shape(
                "broadcast",
                format!("{:?} to {:?}", v.shape(), shape),
            ));
        }
        let n: usize = shape.iter().product();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n / c {
            out.extend_from_slice(v.data());
        }
        drop(v);
        Ok(self
            .tape
            .push(Op::Broadcast(self.id), Tensor::new(shape.to_vec(), out)?))
    }

    /// 2-D matrix product `[m, k] · [k, n]`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.tape.value_ref(self.id), self.tape.value_ref(other.id));
        if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(DsrError::shape("matmul", fmt_shapes(&[a.shape(), b.shape()])));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(View::new(a.data(), m, k), View::new(b.data(), k, n), &mut out, 0.0);
        drop((a, b));
        Ok(self
            .tape
            .push(Op::MatMul(self.id, other.id), Tensor::new(vec![m, n], out)?))
    }

    /// Affine map over the trailing axis: `[.., k] · [k, n] + [n] → [.., n]`.
    pub fn linear(self, w: Var<'t>, b: Option<Var<'t>>) -> Result<Var<'t>> {
        let (xv, wv) = (self.tape.value_ref(self.id), self.tape.value_ref(w.id));
        if wv.ndim() != 2 || xv.last_dim() != wv.shape()[0] || xv.ndim() == 0 {
            return Err(DsrError::shape("linear", fmt_shapes(&[xv.shape(), wv.shape()])));
        }
        let (k, n) = (wv.shape()[0], wv.shape()[1]);
        let m = xv.len() / k;
        let mut out = vec![0.0; m * n];
        let mut beta = 0.0;
        if let Some(b) = b {
            let bv = self.tape.value_ref(b.id);
            if bv.len() != n {
                return Err(DsrError::shape(
                    "linear bias",
                    fmt_shapes(&[wv.shape(), bv.shape()]),
                ));
            }
            for row in out.chunks_exact_mut(n) {
                row.copy_from_slice(bv.data());
            }
            beta = 1.0;
        }
        gemm(View::new(xv.data(), m, k), View::new(wv.data(), k, n), &mut out, beta);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        drop((xv, wv));
        Ok(self.tape.push(
            Op::Linear {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
            },
            Tensor::new(shape, out)?,
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value().reshape(shape)?;
        Ok(self.tape.push(Op::Reshape(self.id), v))
    }

    /// Contiguous sub-range `[start, start+len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let v = self.tape.value_ref(self.id);
        if axis >= v.ndim() || start + len > v.shape()[axis] {
            return Err(DsrError::shape(
                "narrow",
                format!("{:?} axis {} range {}..{}", v.shape(), axis, start, start + len),
            ));
        }
        let (outer, total, inner) = split_axis(v.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * total + start) * inner;
            out.extend_from_slice(&v.data()[base..base + len * inner]);
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = len;
        drop(v);
        Ok(self.tape.push(
            Op::Narrow {
                a: self.id,
                axis,
                start,
            },
            Tensor::new(shape, out)?,
        ))
    }

    /// Element `index` along `axis`, with that axis removed.
    pub fn select(self, axis: usize, index: usize) -> Result<Var<'t>> {
        let mut shape = self.shape();
        let n = self.narrow(axis, index, 1)?;
        shape.remove(axis);
        n.reshape(&shape)
    }

    pub fn concat(vars: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = vars
            .first()
            .ok_or_else(|| DsrError::shape("concat", "no inputs"))?;
        let tape = first.tape;
        let values: Vec<Ref<'_, Tensor>> = vars.iter().map(|v| tape.value_ref(v.id)).collect();
        let ref_shape = values[0].shape();
        if axis >= ref_shape.len() {
            return Err(DsrError::shape("concat", format!("axis {axis} of {ref_shape:?}")));
        }
        for v in &values[1..] {
            let s = v.shape();
            let ok = s.len() == ref_shape.len()
                && s.iter()
                    .zip(ref_shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(DsrError::shape("concat", fmt_shapes(&[ref_shape, s])));
            }
        }
        let (outer, _, inner) = split_axis(ref_shape, axis);
        let total: usize = values.iter().map(|v| v.shape()[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let len = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = ref_shape.to_vec();
        shape[axis] = total;
        drop(values);
        Ok(tape.push(
            Op::Concat {
                inputs: vars.iter().map(|v| v.id).collect(),
                axis,
            },
            Tensor::new(shape, out)?,
        ))
    }

    /// Stacks equal-shaped values along a new axis.
    pub fn stack(vars: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let expanded = vars
            .iter()
            .map(|v| {
                let mut s = v.shape();
                if axis > s.len() {
                    return Err(DsrError::shape("stack", format!("axis {axis} of {s:?}")));
                }
                s.insert(axis, 1);
                v.reshape(&s)
            })
            .collect::<Result<Vec<_>>>()?;
        Var::concat(&expanded, axis)
    }

    /// Dilated 1-D convolution of a `[B, T, C_in]` sequence with a
    /// `[k, C_in, C_out]` kernel. Output length equals input length.
    pub fn conv1d(
        self,
        kernel: Var<'t>,
        bias: Option<Var<'t>>,
        dilation: usize,
        padding: Padding,
    ) -> Result<Var<'t>> {
        let (xv, kv) = (
            self.tape.value_ref(self.id),
            self.tape.value_ref(kernel.id),
        );
        if dilation == 0 {
            return Err(DsrError::invalid("conv1d: dilation must be positive"));
        }
        if xv.ndim() != 3 || kv.ndim() != 3 || xv.shape()[2] != kv.shape()[1] || kv.shape()[0] == 0
        {
            return Err(DsrError::shape("conv1d", fmt_shapes(&[xv.shape(), kv.shape()])));
        }
        if xv.shape()[1] == 0 {
            return Err(DsrError::invalid("conv1d: empty input sequence"));
        }
        let bv = bias.map(|b| self.tape.value_ref(b.id));
        if let Some(bv) = &bv {
            if bv.len() != kv.shape()[2] {
                return Err(DsrError::shape(
                    "conv1d bias",
                    fmt_shapes(&[kv.shape(), bv.shape()]),
                ));
            }
        }
        let pad_left = padding.left(kv.shape()[0], dilation);
        let out = conv1d_forward(&xv, &kv, bv.as_deref(), dilation, pad_left);
        drop((xv, kv, bv));
        Ok(self.tape.push(
            Op::Conv1d {
                x: self.id,
                k: kernel.id,
                b: bias.map(|b| b.id),
                dilation,
                pad_left,
            },
            out,
        ))
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{check_gradients, operator_cases};
    use proptest::prelude::*;

    fn seq(data: &[f64]) -> Tensor {
        Tensor::new(vec![1, data.len(), 1], data.to_vec()).unwrap()
    }

    #[test]
    fn relu_and_tanh_values() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        assert_eq!(x.relu().value().data(), &[0.0, 0.0, 2.0]);
        let z = tape.constant(Tensor::scalar(0.0));
        let t = z.tanh();
        assert_eq!(t.item().unwrap(), 0.0);
        let g = tape.backward(t).unwrap();
        assert_eq!(g.wrt(z).item().unwrap(), 1.0);
    }

    #[test]
    fn identity_matmul() {
        let tape = Tape::new();
        let m = Tensor::new(vec![3, 5], (0..15).map(|v| v as f64 * 0.3 - 2.0).collect()).unwrap();
        let i = tape.constant(Tensor::eye(3));
        let out = i.matmul(tape.constant(m.clone())).unwrap();
        assert_eq!(out.value(), m);
    }

    #[test]
    fn shape_errors_name_operator() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 2]));
        let err = a.matmul(b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]") && err.contains("[2, 2]"));
        assert!(a.add(b).unwrap_err().to_string().contains("add"));
        assert!(Var::concat(&[a, b], 0).is_err());
    }

    #[test]
    fn conv_identity_kernel() {
        let tape = Tape::new();
        let x = tape.constant(seq(&[0.5, -1.0, 3.0, 2.0]));
        let k = tape.constant(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
        for pad in [Padding::Causal, Padding::Symmetric] {
            let y = x.conv1d(k, None, 3, pad).unwrap();
            assert_eq!(y.value().data(), &[0.5, -1.0, 3.0, 2.0]);
        }
    }

    #[test]
    fn conv_causal_dilated_hand_value() {
        let tape = Tape::new();
        let x = tape.constant(seq(&[1.0, 2.0, 3.0, 4.0]));
        let k = tape.constant(Tensor::new(vec![2, 1, 1], vec![1.0, 1.0]).unwrap());
        let y = x.conv1d(k, None, 2, Padding::Causal).unwrap();
        assert_eq!(y.value().data(), &[1.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn conv_rejects_bad_arguments() {
        let tape = Tape::new();
        let x = tape.constant(seq(&[1.0, 2.0]));
        let k = tape.constant(Tensor::new(vec![2, 1, 1], vec![1.0, 1.0]).unwrap());
        assert!(x.conv1d(k, None, 0, Padding::Causal).is_err());
        let empty = tape.constant(Tensor::zeros(&[1, 0, 1]));
        assert!(empty.conv1d(k, None, 1, Padding::Causal).is_err());
    }

    #[test]
    fn symmetric_padding_puts_extra_on_left() {
        assert_eq!(Padding::Symmetric.left(2, 1), 1);
        assert_eq!(Padding::Symmetric.left(7, 4), 12);
        assert_eq!(Padding::Causal.left(7, 4), 24);
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(3.0));
        let loss = x.square();
        assert_eq!(tape.backward(loss).unwrap().wrt(x).item().unwrap(), 6.0);
    }

    #[test]
    fn unreachable_parameter_gets_zero() {
        let mut store = ParamStore::new();
        let a = store.insert("a", Tensor::vector(vec![1.0, 2.0]));
        let b = store.insert("b", Tensor::vector(vec![5.0]));
        store.get_mut(b).grad = Tensor::vector(vec![9.0]);
        let tape = Tape::new();
        let va = tape.param(&store, a);
        let _vb = tape.param(&store, b);
        let loss = va.square().sum();
        tape.backward(loss).unwrap().write_into(&mut store);
        assert_eq!(store.grad(a).data(), &[2.0, 4.0]);
        assert_eq!(store.grad(b).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.backward(x.tanh()).is_err());
    }

    #[test]
    fn tanh_network_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(11);
        let w = Tensor::new(vec![4, 4], (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let x = Tensor::new(vec![4, 1], (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let err = check_gradients(|_, v| Ok(v[0].matmul(v[1])?.tanh().sum()), &[w, x], 1e-5)
            .unwrap();
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn every_operator_matches_finite_differences() {
        for case in operator_cases(3) {
            let err = case.max_relative_error(1e-5).unwrap();
            assert!(err < 1e-4, "{}: max relative error {err}", case.name);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn causal_conv_never_looks_ahead(
            data in proptest::collection::vec(-2.0f64..2.0, 12),
            t in 0usize..12,
            bump in 0.1f64..3.0,
            dilation in 1usize..4,
        ) {
            let tape = Tape::new();
            let ker: Vec<f64> = (0..3 * 2).map(|i| (i as f64 * 1.3).cos()).collect();
            let k = tape.constant(Tensor::new(vec![3, 1, 2], ker).unwrap());
            let base = tape.constant(seq(&data)).conv1d(k, None, dilation, Padding::Causal).unwrap().value();
            let mut moved = data.clone();
            moved[t] += bump;
            let other = tape.constant(seq(&moved)).conv1d(k, None, dilation, Padding::Causal).unwrap().value();
            for s in 0..t {
                prop_assert_eq!(base.row(s), other.row(s));
            }
        }
    }
}
