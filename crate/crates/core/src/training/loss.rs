//! Loss assembly for every variant.

use serde::Serialize;

use super::TrainingConfig;
use crate::autodiff::{gaussian_nll_iso, kl_diag_gaussian, Tensor, Var, HALF_LOG_2PI};
use crate::error::{DsrError, Result};
use crate::models::encoder::{encode_noise, encode_states, replicate, PosteriorSample};
use crate::models::generator::{observe, rollout_teacher_forced};
use crate::models::{arlstm_rollout, dkf_elbo, Bound, ModelConfig, Variant};
use crate::rng::Rng64;

/// Component values of one loss evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossComponents {
    pub rec_x: f64,
    pub rec_zhat: f64,
    pub kl: f64,
    pub reg_g: f64,
    pub reg_zhat: f64,
    pub total: f64,
}

impl LossComponents {
    pub fn is_finite(&self) -> bool {
        [self.rec_x, self.rec_zhat, self.kl, self.reg_g, self.reg_zhat, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Loss graph of one batch.
pub struct LossOutput<'t> {
    pub total: Var<'t>,
    pub rec_x: Var<'t>,
    pub rec_zhat: Option<Var<'t>>,
    pub kl: Option<Var<'t>>,
    pub reg_g: Option<Var<'t>>,
    pub reg_zhat: Option<Var<'t>>,
    /// Detached target for the causal encoder, `[B, T, causal_dim]`.
    pub causal_target: Option<Tensor>,
}

impl LossOutput<'_> {
    pub fn components(&self) -> Result<LossComponents> {
        let v = |x: Option<Var<'_>>| x.map_or(Ok(0.0), |x| x.item());
        Ok(LossComponents {
            rec_x: self.rec_x.item()?,
            rec_zhat: v(self.rec_zhat)?,
            kl: v(self.kl)?,
            reg_g: v(self.reg_g)?,
            reg_zhat: v(self.reg_zhat)?,
            total: self.total.item()?,
        })
    }
}

fn trimmed<'t>(v: Var<'t>, trim: usize) -> Result<Var<'t>> {
    let t = v.shape()[1];
    v.narrow(1, trim, t - 2 * trim)
}

/// Monte Carlo `KL(q ‖ N(0, I))` from the drawn samples, summed over the
/// time window `trim..T−trim` and averaged over the sample rows.
pub fn kl_autoregressive<'t>(sample: &PosteriorSample<'t>, trim: usize) -> Result<Var<'t>> {
    let shape = sample.eps.shape();
    if 2 * trim >= shape[1] {
        return Err(DsrError::invalid(format!("trim {trim} leaves no steps of {}", shape[1])));
    }
    let rows = shape[0] as f64;
    let logq = trimmed(sample.logq, trim)?.sum();
    let eps = trimmed(sample.eps, trim)?;
    let n = eps.with_value(|v| v.len()) as f64;
    // log N(ε | 0, 1) summed: −½Σε² − n·½log 2π
    let logp = eps.square().sum().scale(-0.5).add_scalar(-n * HALF_LOG_2PI);
    Ok(logq.sub(logp)?.scale(1.0 / rows))
}

/// `α_g·(Σ|W^g_1| + Σ|W^g_2|)`.
fn l1_observation<'t>(b: &Bound<'t, '_>, alpha: f64) -> Result<Var<'t>> {
    let w1 = b.p("obs.w1")?.abs().sum();
    let w2 = b.p("obs.w2")?.abs().sum();
    Ok(w1.add(w2)?.scale(alpha))
}

/// `α_ẑ·KL(N(μ, diag σ²) ‖ N(0, I))` with per-component moments of `ẑ`
/// over batch and time.
fn zhat_moments_penalty<'t>(zhat: Var<'t>, alpha: f64) -> Result<Var<'t>> {
    let s = zhat.shape();
    let rows = (s[0] * s[1]) as f64;
    let mu = zhat.sum_leading().scale(1.0 / rows);
    let centred = zhat.sub(mu.broadcast_to(&s)?)?;
    let var = centred.square().sum_leading().scale(1.0 / rows).clamp(1e-12, f64::MAX);
    Ok(kl_diag_gaussian(mu, var)?.scale(alpha))
}

/// DPDSR loss (or SPDSR when the model has no noise path) for
/// `x: [B, T, d_x]`, summed over the trimmed window and averaged over the
/// `B·M` sample rows.
pub fn dpdsr_loss<'t>(
    b: &Bound<'t, '_>,
    mc: &ModelConfig,
    cfg: &TrainingConfig,
    x: Var<'t>,
    rng: &mut Rng64,
) -> Result<LossOutput<'t>> {
    let s = x.shape();
    let (batch, t_len) = (s[0], s[1]);
    if 2 * cfg.trim >= t_len {
        return Err(DsrError::invalid(format!("trim {} leaves no steps of {t_len}", cfg.trim)));
    }
    let zhat = encode_states(b, mc, x, false)?;
    let stochastic = mc.variant == Variant::Dpdsr;
    let m = if stochastic { cfg.mc_samples } else { 1 };
    let post = if stochastic {
        Some(encode_noise(b, mc, x, zhat, m, rng)?)
    } else {
        None
    };
    let zrep = replicate(zhat, m)?;
    let xrep = replicate(x, m)?;
    let zt = rollout_teacher_forced(b, mc, zrep, post.as_ref().map(|p| p.eps), cfg.tau)?;
    let xhat = observe(b, zt)?;
    let rows = (batch * m) as f64;
    let a = cfg.trim;
    let rec_x = gaussian_nll_iso(trimmed(xrep, a)?, trimmed(xhat, a)?, cfg.log_sigma_eta2.exp())?
        .scale(1.0 / rows);
    let zsim = zt.narrow(2, 0, mc.d_zhat)?;
    let rec_zhat = gaussian_nll_iso(trimmed(zrep, a)?, trimmed(zsim, a)?, cfg.log_sigma_zhat2().exp())?
        .scale(1.0 / rows);
    let kl = post.as_ref().map(|p| kl_autoregressive(p, a)).transpose()?;
    let reg_g = l1_observation(b, cfg.alpha_g)?;
    let reg_zhat = zhat_moments_penalty(zhat, cfg.alpha_zhat)?;
    let mut total = rec_x.add(rec_zhat)?;
    if let Some(k) = kl {
        total = total.add(k)?;
    }
    total = total.add(reg_g)?.add(reg_zhat)?;
    Ok(LossOutput {
        total,
        rec_x,
        rec_zhat: Some(rec_zhat),
        kl,
        reg_g: Some(reg_g),
        reg_zhat: Some(reg_zhat),
        causal_target: Some(zhat.value()),
    })
}

/// Training loss of any variant on one batch.
pub fn batch_loss<'t>(
    b: &Bound<'t, '_>,
    mc: &ModelConfig,
    cfg: &TrainingConfig,
    x: Var<'t>,
    rng: &mut Rng64,
) -> Result<LossOutput<'t>> {
    match mc.variant {
        Variant::Dpdsr | Variant::Spdsr => dpdsr_loss(b, mc, cfg, x, rng),
        Variant::Dkf => {
            let o = dkf_elbo(b, mc, x, cfg.log_sigma_eta2, cfg.trim, rng)?;
            Ok(LossOutput {
                total: o.total,
                rec_x: o.rec,
                rec_zhat: None,
                kl: Some(o.kl),
                reg_g: None,
                reg_zhat: None,
                causal_target: Some(o.mu.value()),
            })
        }
        Variant::Arlstm => {
            let o = arlstm_rollout(b, mc, x, cfg.gamma, cfg.t_past, cfg.t_pred, rng)?;
            let nll = o.nll()?;
            Ok(LossOutput {
                total: nll,
                rec_x: nll,
                rec_zhat: None,
                kl: None,
                reg_g: None,
                reg_zhat: None,
                causal_target: None,
            })
        }
    }
}

/// `mean_b ‖F(x_b) − F_c(x_b)‖₂` between the causal encoder output and a
/// detached target, `b` bound to the causal store.
pub fn causal_loss<'t>(
    b: &Bound<'t, '_>,
    mc: &ModelConfig,
    x: Var<'t>,
    target: &Tensor,
) -> Result<Var<'t>> {
    let out = encode_states(b, mc, x, true)?;
    let s = out.shape();
    if s != target.shape() {
        return Err(DsrError::shape("causal_loss", format!("{s:?} vs {:?}", target.shape())));
    }
    let diff = out.sub(b.tape().constant(target.clone()))?;
    let per = s[1] * s[2];
    let mut norms = Vec::with_capacity(s[0]);
    for i in 0..s[0] {
        let d = diff.select(0, i)?.reshape(&[per])?;
        norms.push(d.square().sum().sqrt());
    }
    Ok(Var::stack(&norms, 0)?.mean())
}
