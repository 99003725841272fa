//! Tape-free copies of the trained layers for fast inference.

use crate::autodiff::gemm::{gemm, View};
use crate::autodiff::tape::conv1d_forward;
use crate::autodiff::{sigmoid, ParamStore, Padding, Tensor};
use crate::error::{DsrError, Result};

use super::ConvSpec;

fn fetch(store: &ParamStore, name: &str) -> Result<Tensor> {
    store
        .by_name(name)
        .cloned()
        .ok_or_else(|| DsrError::invalid(format!("checkpoint lacks parameter '{name}'")))
}

/// Affine map `x·W + b` with `W: [k, n]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub k: usize,
    pub n: usize,
}

impl Dense {
    pub fn load(store: &ParamStore, w: &str, b: Option<&str>) -> Result<Self> {
        let wt = fetch(store, w)?;
        let (k, n) = (wt.shape()[0], wt.shape()[1]);
        let b = match b {
            Some(name) => fetch(store, name)?.into_data(),
            None => vec![0.0; n],
        };
        Ok(Self {
            w: wt.into_data(),
            b,
            k,
            n,
        })
    }

    /// Single row, writing `n` outputs.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        out[..self.n].copy_from_slice(&self.b);
        for (i, &xi) in x[..self.k].iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.w[i * self.n..(i + 1) * self.n];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
    }

    /// `rows × k` row-major input to `rows × n`.
    pub fn apply_rows(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows * self.n);
        for _ in 0..rows {
            out.extend_from_slice(&self.b);
        }
        gemm(View::new(x, rows, self.k), View::new(&self.w, self.k, self.n), &mut out, 1.0);
        out
    }
}

/// `x + W2·ReLU(W1·x + b1) + b2`.
#[derive(Clone, Debug)]
pub struct ResidualMlp {
    pub l1: Dense,
    pub l2: Dense,
}

impl ResidualMlp {
    pub fn load(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            l1: Dense::load(store, &format!("{prefix}.w1"), Some(&format!("{prefix}.b1")))?,
            l2: Dense::load(store, &format!("{prefix}.w2"), Some(&format!("{prefix}.b2")))?,
        })
    }

    pub fn apply(&self, z: &[f64], hidden: &mut Vec<f64>, out: &mut [f64]) {
        hidden.resize(self.l1.n, 0.0);
        self.l1.apply(z, hidden);
        hidden.iter_mut().for_each(|h| *h = h.max(0.0));
        self.l2.apply(hidden, out);
        for (o, zi) in out.iter_mut().zip(z) {
            *o += zi;
        }
    }
}

/// Two-layer ReLU perceptron without residual.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub l1: Dense,
    pub l2: Dense,
}

impl Mlp {
    pub fn load(store: &ParamStore, w1: &str, b1: &str, w2: &str, b2: &str) -> Result<Self> {
        Ok(Self {
            l1: Dense::load(store, w1, Some(b1))?,
            l2: Dense::load(store, w2, Some(b2))?,
        })
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let mut h = vec![0.0; self.l1.n];
        self.l1.apply(x, &mut h);
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        self.l2.apply(&h, out);
    }
}

#[derive(Clone, Debug)]
struct ConvLayer {
    dil_w: Tensor,
    dil_b: Tensor,
    mix_w: Tensor,
    mix_b: Tensor,
    dilation: usize,
}

/// Residual dilated convolution stack followed by a linear head.
#[derive(Clone, Debug)]
pub struct ConvEncoder {
    lift_w: Tensor,
    lift_b: Tensor,
    layers: Vec<ConvLayer>,
    kernel: usize,
    pub head: Option<Dense>,
}

impl ConvEncoder {
    pub fn load(store: &ParamStore, prefix: &str, spec: &ConvSpec, with_head: bool) -> Result<Self> {
        let f = |s: &str| fetch(store, &format!("{prefix}.{s}"));
        let layers = spec
            .dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                Ok(ConvLayer {
                    dil_w: f(&format!("l{i}.dil.w"))?,
                    dil_b: f(&format!("l{i}.dil.b"))?,
                    mix_w: f(&format!("l{i}.mix.w"))?,
                    mix_b: f(&format!("l{i}.mix.b"))?,
                    dilation: d,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let head = if with_head {
            Some(Dense::load(
                store,
                &format!("{prefix}.head.w"),
                Some(&format!("{prefix}.head.b")),
            )?)
        } else {
            None
        };
        Ok(Self {
            lift_w: f("lift.w")?,
            lift_b: f("lift.b")?,
            layers,
            kernel: spec.kernel,
            head,
        })
    }

    /// Conv features `[B, T, C]` of `x: [B, T, c_in]`.
    pub fn features(&self, x: &Tensor, padding: Padding) -> Tensor {
        let mut h = conv1d_forward(x, &self.lift_w, Some(&self.lift_b), 1, 0);
        for l in &self.layers {
            let pad = padding.left(self.kernel, l.dilation);
            let inner = conv1d_forward(&h, &l.dil_w, Some(&l.dil_b), l.dilation, pad)
                .map(|v| v.max(0.0));
            let inner = conv1d_forward(&inner, &l.mix_w, Some(&l.mix_b), 1, 0);
            h.add_assign(&inner);
        }
        h
    }

    /// Head outputs `[B·T, n]` flattened row-major.
    pub fn encode(&self, x: &Tensor, padding: Padding) -> Result<Vec<f64>> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| DsrError::invalid("encoder has no head"))?;
        let h = self.features(x, padding);
        let rows = h.len() / h.last_dim();
        Ok(head.apply_rows(h.data(), rows))
    }
}

/// LSTM cell with gate blocks ordered input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub gates: Dense,
    pub d_h: usize,
}

impl Lstm {
    pub fn load(store: &ParamStore, prefix: &str) -> Result<Self> {
        let gates = Dense::load(store, &format!("{prefix}.lstm.w"), Some(&format!("{prefix}.lstm.b")))?;
        let d_h = gates.n / 4;
        Ok(Self { gates, d_h })
    }

    /// Advances `(h, c)` in place on input `x`.
    pub fn step(&self, x: &[f64], h: &mut [f64], c: &mut [f64]) {
        let d_h = self.d_h;
        let mut inp = Vec::with_capacity(x.len() + d_h);
        inp.extend_from_slice(x);
        inp.extend_from_slice(h);
        let mut g = vec![0.0; 4 * d_h];
        self.gates.apply(&inp, &mut g);
        for j in 0..d_h {
            let i = sigmoid(g[j]);
            let f = sigmoid(g[d_h + j]);
            let cand = g[2 * d_h + j].tanh();
            let o = sigmoid(g[3 * d_h + j]);
            c[j] = f * c[j] + i * cand;
            h[j] = o * c[j].tanh();
        }
    }
}
