//! Dilated convolution stacks, the state encoder and the autoregressive
//! noise posterior.

use rand::Rng;

use super::{Bound, ConvSpec, ModelConfig};
use crate::autodiff::{
    lstm_cell, ParamStore, Padding, Tensor, Var, HALF_LOG_2PI, LOGVAR_MAX, LOGVAR_MIN,
};
use crate::error::{DsrError, Result};
use crate::rng::{self, Rng64};

fn insert_kernel<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: String,
    k: usize,
    cin: usize,
    cout: usize,
    rng: &mut R,
) {
    let bound = 1.0 / ((k * cin) as f64).sqrt();
    let data = (0..k * cin * cout).map(|_| rng.gen_range(-bound..=bound)).collect();
    store.insert(name, Tensor::new(vec![k, cin, cout], data).expect("kernel shape"));
}

/// Input lift (1×1 conv to `channels`) followed by residual layers
/// `h ← h + mix(ReLU(dilated(h)))`.
pub fn init_conv_stack<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    c_in: usize,
    spec: &ConvSpec,
    rng: &mut R,
) {
    let c = spec.channels;
    insert_kernel(store, format!("{prefix}.lift.w"), 1, c_in, c, rng);
    store.insert_zeros(format!("{prefix}.lift.b"), &[c]);
    for i in 0..spec.dilations.len() {
        insert_kernel(store, format!("{prefix}.l{i}.dil.w"), spec.kernel, c, c, rng);
        store.insert_zeros(format!("{prefix}.l{i}.dil.b"), &[c]);
        insert_kernel(store, format!("{prefix}.l{i}.mix.w"), 1, c, c, rng);
        store.insert_zeros(format!("{prefix}.l{i}.mix.b"), &[c]);
    }
}

pub fn init_head<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    n_in: usize,
    n_out: usize,
    rng: &mut R,
) {
    store.insert_weight(format!("{prefix}.head.w"), n_in, n_out, rng);
    store.insert_zeros(format!("{prefix}.head.b"), &[n_out]);
}

pub fn init_lstm<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    d_in: usize,
    d_h: usize,
    rng: &mut R,
) {
    store.insert_weight(format!("{prefix}.lstm.w"), d_in + d_h, 4 * d_h, rng);
    store.insert_zeros(format!("{prefix}.lstm.b"), &[4 * d_h]);
}

/// `[B, T, c_in] → [B, T, channels]`, length preserving.
pub fn conv_stack<'t>(
    b: &Bound<'t, '_>,
    prefix: &str,
    spec: &ConvSpec,
    x: Var<'t>,
    padding: Padding,
) -> Result<Var<'t>> {
    let p = |s: &str| b.p(&format!("{prefix}.{s}"));
    let mut h = x.conv1d(p("lift.w")?, Some(p("lift.b")?), 1, padding)?;
    for (i, &d) in spec.dilations.iter().enumerate() {
        let inner = h
            .conv1d(p(&format!("l{i}.dil.w"))?, Some(p(&format!("l{i}.dil.b"))?), d, padding)?
            .relu()
            .conv1d(p(&format!("l{i}.mix.w"))?, Some(p(&format!("l{i}.mix.b"))?), 1, padding)?;
        h = h.add(inner)?;
    }
    Ok(h)
}

pub fn head<'t>(b: &Bound<'t, '_>, prefix: &str, h: Var<'t>) -> Result<Var<'t>> {
    h.linear(b.p(&format!("{prefix}.head.w"))?, Some(b.p(&format!("{prefix}.head.b"))?))
}

/// State estimates `ẑ: [B, T, d_ẑ]` from `x: [B, T, d_x]`.
///
/// With `causal = false`, `b` must be bound to the main store (symmetric
/// padding); with `causal = true`, to the causal store (left padding only).
pub fn encode_states<'t>(
    b: &Bound<'t, '_>,
    cfg: &ModelConfig,
    x: Var<'t>,
    causal: bool,
) -> Result<Var<'t>> {
    let (prefix, padding) = if causal {
        ("causal", Padding::Causal)
    } else {
        ("enc", Padding::Symmetric)
    };
    let h = conv_stack(b, prefix, &cfg.encoder, x, padding)?;
    head(b, prefix, h)
}

/// Repeats a `[B, ..]` value `m` times along the batch axis (sample-major).
pub fn replicate<'t>(v: Var<'t>, m: usize) -> Result<Var<'t>> {
    if m == 1 {
        return Ok(v);
    }
    Var::concat(&vec![v; m], 0)
}

/// Draws from an autoregressive diagonal-Gaussian posterior, all `[N, T, d]`.
pub struct PosteriorSample<'t> {
    pub eps: Var<'t>,
    pub mu: Var<'t>,
    /// Clamped log-variance.
    pub logvar: Var<'t>,
    /// Elementwise `log N(ε_t | μ_t, σ_t²)`.
    pub logq: Var<'t>,
    /// Standard-normal draws behind `eps`.
    pub xi: Tensor,
}

impl<'t> PosteriorSample<'t> {
    pub fn var(&self) -> Var<'t> {
        self.logvar.exp()
    }

    /// `Σ log q` over every element.
    pub fn total_logq(&self) -> Var<'t> {
        self.logq.sum()
    }
}

/// Shared autoregressive LSTM posterior over precomputed conv features
/// `feat: [N, T, C]`. Returns a sample of dimension `d`.
pub(crate) fn ar_posterior<'t>(
    b: &Bound<'t, '_>,
    prefix: &str,
    feat: Var<'t>,
    d: usize,
    d_h: usize,
    xi: Tensor,
) -> Result<PosteriorSample<'t>> {
    let tape = b.tape();
    let shape = feat.shape();
    let (n, t_len) = (shape[0], shape[1]);
    if xi.shape() != [n, t_len, d] {
        return Err(DsrError::shape(
            "ar_posterior",
            format!("noise {:?} for features {:?}", xi.shape(), shape),
        ));
    }
    let w = b.p(&format!("{prefix}.lstm.w"))?;
    let bias = b.p(&format!("{prefix}.lstm.b"))?;
    let hw = b.p(&format!("{prefix}.head.w"))?;
    let hb = b.p(&format!("{prefix}.head.b"))?;
    let mut h = tape.constant(Tensor::zeros(&[n, d_h]));
    let mut c = h;
    let mut prev = tape.constant(Tensor::zeros(&[n, d]));
    let (mut mus, mut lvs, mut eps) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..t_len {
        let inp = Var::concat(&[feat.select(1, t)?, prev], 1)?;
        (h, c) = lstm_cell(inp, h, c, w, bias)?;
        let out = h.linear(hw, Some(hb))?;
        let mu = out.narrow(1, 0, d)?;
        let lv = out.narrow(1, d, d)?.clamp(LOGVAR_MIN, LOGVAR_MAX);
        let xi_t = tape.constant(
            Tensor::new(vec![n, d], (0..n).flat_map(|i| {
                let base = (i * t_len + t) * d;
                xi.data()[base..base + d].to_vec()
            }).collect())?,
        );
        let e = mu.add(lv.scale(0.5).exp().mul(xi_t)?)?;
        mus.push(mu);
        lvs.push(lv);
        eps.push(e);
        prev = e;
    }
    let mu = Var::stack(&mus, 1)?;
    let logvar = Var::stack(&lvs, 1)?;
    let eps = Var::stack(&eps, 1)?;
    // log q = −½log 2π − ½ log σ² − ½ ξ², exact because (ε − μ)/σ = ξ.
    let quad = xi.map(|v| -0.5 * v * v - HALF_LOG_2PI);
    let logq = logvar.scale(-0.5).add(tape.constant(quad))?;
    Ok(PosteriorSample {
        eps,
        mu,
        logvar,
        logq,
        xi,
    })
}

/// Posterior over the noise sequence given `x: [B, T, d_x]` and
/// `ẑ: [B, T, d_ẑ]`, with `mc` independent samples per chunk stacked
/// sample-major into `N = mc·B` rows. Deterministic given `rng`.
pub fn encode_noise<'t>(
    b: &Bound<'t, '_>,
    cfg: &ModelConfig,
    x: Var<'t>,
    zhat: Var<'t>,
    mc: usize,
    rng: &mut Rng64,
) -> Result<PosteriorSample<'t>> {
    let inp = Var::concat(&[x, zhat], 2)?;
    let feat = conv_stack(b, "noise", &cfg.encoder, inp, Padding::Symmetric)?;
    let feat = replicate(feat, mc)?;
    let s = feat.shape();
    let xi = Tensor::new(
        vec![s[0], s[1], cfg.d_eps],
        rng::normals(rng, s[0] * s[1] * cfg.d_eps),
    )?;
    ar_posterior(b, "noise", feat, cfg.d_eps, cfg.lstm_state, xi)
}
