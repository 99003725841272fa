//! Plain-`f64` simulators of trained models.
//!
//! The [`Surrogate`] trait is the interface shared by evaluation and
//! attractor analysis; analytic maps implement it as well.

use super::plain::{ConvEncoder, Dense, Lstm, Mlp, ResidualMlp};
use super::{Model, ModelConfig, Variant};
use crate::autodiff::{Padding, Tensor, LOGVAR_MAX, LOGVAR_MIN};
use crate::error::{DsrError, Result};

/// A discrete-time stochastic map `z' = F(z, ε)` with observation `g(z)`.
/// Passing `ε = 0` gives the deterministic skeleton.
pub trait Surrogate {
    fn state_dim(&self) -> usize;
    /// Dimension of the standard-normal noise consumed per step.
    fn noise_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn step(&self, z: &[f64], eps: &[f64], out: &mut [f64]);
    fn observe(&self, z: &[f64], out: &mut [f64]);

    fn is_stochastic(&self) -> bool {
        self.noise_dim() > 0
    }
}

#[derive(Clone, Debug)]
enum Body {
    Pdsr {
        f: ResidualMlp,
        noise: f64,
        init: Option<Dense>,
        obs: Mlp,
        enc: ConvEncoder,
        causal: ConvEncoder,
    },
    Dkf {
        f: ResidualMlp,
        sigma_eps: f64,
        obs: Dense,
        enc: ConvEncoder,
        lstm: Lstm,
        head: Dense,
        causal: ConvEncoder,
    },
    Ar {
        enc: ConvEncoder,
        code: Dense,
        ic: Mlp,
        lstm: Lstm,
        head: Dense,
    },
}

/// Inference copy of a [`Model`].
#[derive(Clone, Debug)]
pub struct Simulator {
    pub config: ModelConfig,
    body: Body,
}

impl Simulator {
    pub fn new(model: &Model) -> Result<Self> {
        let c = &model.config;
        let p = &model.params;
        let body = match c.variant {
            Variant::Dpdsr | Variant::Spdsr => Body::Pdsr {
                f: ResidualMlp::load(p, "gen")?,
                noise: model.noise_scale(),
                init: if c.d_zhat < c.d_z {
                    Some(Dense::load(p, "gen.init.w", None)?)
                } else {
                    None
                },
                obs: Mlp::load(p, "obs.w1", "obs.b1", "obs.w2", "obs.b2")?,
                enc: ConvEncoder::load(p, "enc", &c.encoder, true)?,
                causal: ConvEncoder::load(&model.causal, "causal", &c.encoder, true)?,
            },
            Variant::Dkf => {
                let lv = p
                    .by_name("dkf.log_sigma_eps2")
                    .ok_or_else(|| DsrError::invalid("checkpoint lacks dkf.log_sigma_eps2"))?
                    .data()[0];
                Body::Dkf {
                    f: ResidualMlp::load(p, "gen")?,
                    sigma_eps: (0.5 * lv).exp(),
                    obs: Dense::load(p, "dkf.obs.w", Some("dkf.obs.b"))?,
                    enc: ConvEncoder::load(p, "dkf.enc", &c.encoder, false)?,
                    lstm: Lstm::load(p, "dkf.enc")?,
                    head: Dense::load(p, "dkf.enc.head.w", Some("dkf.enc.head.b"))?,
                    causal: ConvEncoder::load(&model.causal, "causal", &c.encoder, true)?,
                }
            }
            Variant::Arlstm => Body::Ar {
                enc: ConvEncoder::load(p, "ar.enc", &c.encoder, false)?,
                code: Dense::load(p, "ar.code.w", Some("ar.code.b"))?,
                ic: Mlp::load(p, "ar.ic.w1", "ar.ic.b1", "ar.ic.w2", "ar.ic.b2")?,
                lstm: Lstm::load(p, "ar")?,
                head: Dense::load(p, "ar.head.w", Some("ar.head.b"))?,
            },
        };
        Ok(Self {
            config: c.clone(),
            body,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    fn complete(&self, init: &Option<Dense>, zhat: &[f64]) -> Vec<f64> {
        let mut z = zhat.to_vec();
        if let Some(d) = init {
            let mut rest = vec![0.0; d.n];
            d.apply(zhat, &mut rest);
            z.extend(rest);
        }
        z
    }

    fn check_series(&self, series: &Tensor) -> Result<usize> {
        let s = series.shape();
        if s.len() != 2 || s[1] != self.config.d_x || s[0] == 0 {
            return Err(DsrError::shape(
                "simulator",
                format!("series {s:?}, expected [T, {}]", self.config.d_x),
            ));
        }
        Ok(s[0])
    }

    /// Initial conditions `[h_0; c_0; x_0]` from a past window `[T, d_x]`.
    fn ar_state(&self, window: &Tensor) -> Result<Vec<f64>> {
        let Body::Ar { enc, code, ic, .. } = &self.body else {
            return Err(DsrError::invalid("not an autoregressive model"));
        };
        let t_len = window.shape()[0];
        let x = window.clone().reshape(&[1, t_len, self.config.d_x])?;
        let feat = enc.features(&x, Padding::Causal);
        let last = feat.row(t_len - 1);
        let mut cvec = vec![0.0; code.n];
        code.apply(last, &mut cvec);
        let mut out = vec![0.0; self.state_dim()];
        ic.apply(&cvec, &mut out);
        Ok(out)
    }

    /// States of the encoder-embedded trajectory of `series: [T, d_x]` at
    /// the given time indices, using the non-causal encoder. For the
    /// autoregressive model, the state at `t` is estimated from the
    /// `t_past` samples ending at `t` (indices are raised to `t_past − 1`).
    pub fn states_at(&self, series: &Tensor, positions: &[usize]) -> Result<Vec<Vec<f64>>> {
        let t_len = self.check_series(series)?;
        if let Some(&p) = positions.iter().find(|&&p| p >= t_len) {
            return Err(DsrError::invalid(format!("position {p} beyond series of {t_len}")));
        }
        let x = series.clone().reshape(&[1, t_len, self.config.d_x])?;
        match &self.body {
            Body::Pdsr { enc, init, .. } => {
                let zhat = enc.encode(&x, Padding::Symmetric)?;
                let d = self.config.d_zhat;
                Ok(positions
                    .iter()
                    .map(|&p| self.complete(init, &zhat[p * d..(p + 1) * d]))
                    .collect())
            }
            Body::Dkf { .. } => {
                let means = self.dkf_posterior_mean(&x)?;
                let d = self.config.d_z;
                Ok(positions.iter().map(|&p| means[p * d..(p + 1) * d].to_vec()).collect())
            }
            Body::Ar { .. } => {
                let tp = self.config.t_past.min(t_len);
                positions
                    .iter()
                    .map(|&p| {
                        let end = p.max(tp - 1) + 1;
                        let rows = series.data()[(end - tp) * self.config.d_x..end * self.config.d_x].to_vec();
                        self.ar_state(&Tensor::new(vec![tp, self.config.d_x], rows)?)
                    })
                    .collect()
            }
        }
    }

    /// Full non-causal embedding, one state per time step (not available for
    /// the autoregressive model).
    pub fn embed(&self, series: &Tensor) -> Result<Vec<Vec<f64>>> {
        if matches!(self.body, Body::Ar { .. }) {
            return Err(DsrError::invalid("autoregressive model has no state embedding"));
        }
        let t_len = self.check_series(series)?;
        let all: Vec<usize> = (0..t_len).collect();
        self.states_at(series, &all)
    }

    /// Posterior means of the DKF encoder, `[T·d_z]` flattened.
    fn dkf_posterior_mean(&self, x: &Tensor) -> Result<Vec<f64>> {
        let Body::Dkf { enc, lstm, head, .. } = &self.body else {
            return Err(DsrError::invalid("not a DKF model"));
        };
        let feat = enc.features(x, Padding::Symmetric);
        let (t_len, ch, d) = (feat.shape()[1], feat.last_dim(), self.config.d_z);
        let mut h = vec![0.0; lstm.d_h];
        let mut c = vec![0.0; lstm.d_h];
        let mut prev = vec![0.0; d];
        let mut out = vec![0.0; 2 * d];
        let mut means = Vec::with_capacity(t_len * d);
        let mut inp = vec![0.0; ch + d];
        for t in 0..t_len {
            inp[..ch].copy_from_slice(feat.row(t));
            inp[ch..].copy_from_slice(&prev);
            lstm.step(&inp, &mut h, &mut c);
            head.apply(&h, &mut out);
            prev.copy_from_slice(&out[..d]);
            means.extend_from_slice(&prev);
        }
        Ok(means)
    }

    /// State at the last step of each window `[N, k, d_x]`, estimated from
    /// that window only with the causal encoder.
    pub fn causal_states(&self, windows: &Tensor) -> Result<Vec<Vec<f64>>> {
        let s = windows.shape();
        if s.len() != 3 || s[2] != self.config.d_x || s[1] == 0 {
            return Err(DsrError::shape(
                "causal_states",
                format!("windows {s:?}, expected [N, k, {}]", self.config.d_x),
            ));
        }
        let (n, k) = (s[0], s[1]);
        match &self.body {
            Body::Pdsr { causal, init, .. } => {
                let out = causal.encode(windows, Padding::Causal)?;
                let d = self.config.d_zhat;
                Ok((0..n)
                    .map(|i| {
                        let r = (i * k + k - 1) * d;
                        self.complete(init, &out[r..r + d])
                    })
                    .collect())
            }
            Body::Dkf { causal, .. } => {
                let out = causal.encode(windows, Padding::Causal)?;
                let d = self.config.d_z;
                Ok((0..n)
                    .map(|i| {
                        let r = (i * k + k - 1) * d;
                        out[r..r + d].to_vec()
                    })
                    .collect())
            }
            Body::Ar { .. } => {
                let tp = self.config.t_past.min(k);
                let dx = self.config.d_x;
                (0..n)
                    .map(|i| {
                        let base = (i * k + k - tp) * dx;
                        let rows = windows.data()[base..base + tp * dx].to_vec();
                        self.ar_state(&Tensor::new(vec![tp, dx], rows)?)
                    })
                    .collect()
            }
        }
    }
}

impl Surrogate for Simulator {
    fn state_dim(&self) -> usize {
        self.config.sim_state_dim()
    }

    fn noise_dim(&self) -> usize {
        match &self.body {
            Body::Pdsr { .. } => self.config.d_eps,
            Body::Dkf { .. } => self.config.d_z,
            Body::Ar { .. } => self.config.d_x,
        }
    }

    fn obs_dim(&self) -> usize {
        self.config.d_x
    }

    fn step(&self, z: &[f64], eps: &[f64], out: &mut [f64]) {
        let mut hidden = Vec::new();
        match &self.body {
            Body::Pdsr { f, noise, .. } => {
                f.apply(z, &mut hidden, out);
                if let (Some(e), Some(last)) = (eps.first(), out.last_mut()) {
                    *last += noise * e;
                }
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            Body::Dkf { f, sigma_eps, .. } => {
                f.apply(z, &mut hidden, out);
                for (o, e) in out.iter_mut().zip(eps) {
                    *o += sigma_eps * e;
                }
            }
            Body::Ar { lstm, head, .. } => {
                let (d_h, d) = (lstm.d_h, self.config.d_x);
                let (hc, x) = z.split_at(2 * d_h);
                let (h, c) = out.split_at_mut(d_h);
                h.copy_from_slice(&hc[..d_h]);
                let (c, xo) = c.split_at_mut(d_h);
                c.copy_from_slice(&hc[d_h..]);
                lstm.step(x, h, c);
                let mut o = vec![0.0; 2 * d];
                head.apply(h, &mut o);
                for j in 0..d {
                    let lv = o[d + j].clamp(LOGVAR_MIN, LOGVAR_MAX);
                    let e = eps.get(j).copied().unwrap_or(0.0);
                    xo[j] = o[j] + (0.5 * lv).exp() * e;
                }
            }
        }
    }

    fn observe(&self, z: &[f64], out: &mut [f64]) {
        match &self.body {
            Body::Pdsr { obs, .. } => obs.apply(z, out),
            Body::Dkf { obs, .. } => obs.apply(z, out),
            Body::Ar { lstm, .. } => out.copy_from_slice(&z[2 * lstm.d_h..]),
        }
    }
}
