//! Autoregressive LSTM with scheduled sampling.

use rand::Rng;

use super::encoder::{conv_stack, head};
use super::{Bound, ModelConfig};
use crate::autodiff::{gaussian_nll_logvar, lstm_cell, Padding, Tensor, Var, LOGVAR_MAX, LOGVAR_MIN};
use crate::error::{DsrError, Result};
use crate::rng::{self, Rng64};

/// Gaussian predictions over the prediction window, all `[B, T_pred, d_x]`.
pub struct ArOutput<'t> {
    pub mu: Var<'t>,
    pub logvar: Var<'t>,
    /// Draws from the predictive distributions (no gradient).
    pub samples: Tensor,
    /// Data over the prediction window.
    pub target: Var<'t>,
}

impl<'t> ArOutput<'t> {
    pub fn sigma(&self) -> Var<'t> {
        self.logvar.scale(0.5).exp()
    }

    /// Negative log-likelihood of the prediction window, averaged over chunks.
    pub fn nll(&self) -> Result<Var<'t>> {
        let batch = self.target.shape()[0] as f64;
        Ok(gaussian_nll_logvar(self.target, self.mu, self.logvar)?.scale(1.0 / batch))
    }
}

/// `[h_0; c_0; x_0]` of shape `[B, 2·d_h + d_x]` from past windows
/// `x: [B, T_past, d_x]`.
pub fn initial_conditions<'t>(
    b: &Bound<'t, '_>,
    cfg: &ModelConfig,
    past: Var<'t>,
) -> Result<Var<'t>> {
    let feat = conv_stack(b, "ar.enc", &cfg.encoder, past, Padding::Causal)?;
    let last = feat.select(1, past.shape()[1] - 1)?;
    let code = last.linear(b.p("ar.code.w")?, Some(b.p("ar.code.b")?))?;
    let h = code.linear(b.p("ar.ic.w1")?, Some(b.p("ar.ic.b1")?))?.relu();
    h.linear(b.p("ar.ic.w2")?, Some(b.p("ar.ic.b2")?))
}

/// Rolls the LSTM over `x[:, T_past..T_past+T_pred]` from initial
/// conditions estimated on `x[:, ..T_past]`.
///
/// At each step the LSTM input is, independently per chunk, the previous
/// model draw with probability `gamma` and the previous data value
/// otherwise. The first input is the estimated `x_0`.
pub fn arlstm_rollout<'t>(
    b: &Bound<'t, '_>,
    cfg: &ModelConfig,
    x: Var<'t>,
    gamma: f64,
    t_past: usize,
    t_pred: usize,
    rng: &mut Rng64,
) -> Result<ArOutput<'t>> {
    let s = x.shape();
    if s.len() != 3 || s[2] != cfg.d_x {
        return Err(DsrError::shape("arlstm_rollout", format!("{s:?}, expected [B, T, {}]", cfg.d_x)));
    }
    if t_past == 0 || t_pred == 0 || t_past + t_pred > s[1] {
        return Err(DsrError::invalid(format!(
            "T_past = {t_past} plus T_pred = {t_pred} must fit the chunk of {}",
            s[1]
        )));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(DsrError::invalid(format!("sampling probability {gamma} outside [0, 1]")));
    }
    let (batch, d, d_h) = (s[0], cfg.d_x, cfg.lstm_state);
    let tape = b.tape();
    let ic = initial_conditions(b, cfg, x.narrow(1, 0, t_past)?)?;
    let mut h = ic.narrow(1, 0, d_h)?;
    let mut c = ic.narrow(1, d_h, d_h)?;
    let mut input = ic.narrow(1, 2 * d_h, d)?;
    let (w, bias) = (b.p("ar.lstm.w")?, b.p("ar.lstm.b")?);
    let (mut mus, mut lvs) = (Vec::with_capacity(t_pred), Vec::with_capacity(t_pred));
    let mut samples = Vec::with_capacity(batch * t_pred * d);
    let mut step_samples = Vec::with_capacity(t_pred);
    for i in 0..t_pred {
        (h, c) = lstm_cell(input, h, c, w, bias)?;
        let out = head(b, "ar", h)?;
        let mu = out.narrow(1, 0, d)?;
        let lv = out.narrow(1, d, d)?.clamp(LOGVAR_MIN, LOGVAR_MAX);
        let (mv, lvv) = (mu.value(), lv.value());
        let draw: Vec<f64> = mv
            .data()
            .iter()
            .zip(lvv.data())
            .map(|(m, l)| m + (0.5 * l).exp() * rng::normal(rng))
            .collect();
        let data = x.select(1, t_past + i)?;
        let mask: Vec<f64> = (0..batch)
            .flat_map(|_| {
                let take = rng.gen::<f64>() < gamma;
                std::iter::repeat(if take { 1.0 } else { 0.0 }).take(d)
            })
            .collect();
        let keep: Vec<f64> = mask.iter().map(|m| 1.0 - m).collect();
        let draw_t = Tensor::new(vec![batch, d], draw)?;
        let mixed_model = tape.constant(draw_t.clone()).mul(tape.constant(Tensor::new(vec![batch, d], mask)?))?;
        input = data.mul(tape.constant(Tensor::new(vec![batch, d], keep)?))?.add(mixed_model)?;
        mus.push(mu);
        lvs.push(lv);
        step_samples.push(draw_t);
    }
    for bi in 0..batch {
        for st in &step_samples {
            samples.extend_from_slice(st.row(bi));
        }
    }
    Ok(ArOutput {
        mu: Var::stack(&mus, 1)?,
        logvar: Var::stack(&lvs, 1)?,
        samples: Tensor::new(vec![batch, t_pred, d], samples)?,
        target: x.narrow(1, t_past, t_pred)?,
    })
}
