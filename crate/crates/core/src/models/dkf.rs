//! Deep Kalman filter: states as latent variables, one-step transition prior.

use super::encoder::{ar_posterior, conv_stack};
use super::generator::residual_mlp;
use super::{Bound, ModelConfig};
use crate::autodiff::{gaussian_nll_iso, Padding, Tensor, Var, HALF_LOG_2PI};
use crate::error::{DsrError, Result};
use crate::rng::{self, Rng64};

pub struct DkfOutput<'t> {
    /// Posterior sample `[B, T, d_z]`.
    pub z: Var<'t>,
    pub mu: Var<'t>,
    pub logvar: Var<'t>,
    /// `Σ log q − log p(z)` over the trimmed window, per chunk.
    pub kl: Var<'t>,
    /// `−log p(x | z)` over the trimmed window, per chunk.
    pub rec: Var<'t>,
    pub total: Var<'t>,
}

/// NLL of `x` under `N(mu, exp(lv)·I)` with a trainable scalar `lv`.
fn nll_scalar_logvar<'t>(x: Var<'t>, mu: Var<'t>, lv: Var<'t>) -> Result<Var<'t>> {
    let n = x.with_value(|v| v.len()) as f64;
    let lv = lv.reshape(&[])?;
    let quad = x.sub(mu)?.square().sum();
    Ok(quad
        .mul(lv.neg().exp())?
        .add(lv.scale(n))?
        .scale(0.5)
        .add_scalar(n * HALF_LOG_2PI))
}

/// Single-sample ELBO estimate for `x: [B, T, d_x]`, normalized per chunk.
///
/// Every term is restricted to time indices `trim..T−trim`; the first state
/// of that window takes the `N(0, I)` prior.
pub fn dkf_elbo<'t>(
    b: &Bound<'t, '_>,
    cfg: &ModelConfig,
    x: Var<'t>,
    log_sigma_eta2: f64,
    trim: usize,
    rng: &mut Rng64,
) -> Result<DkfOutput<'t>> {
    let s = x.shape();
    if s.len() != 3 || s[2] != cfg.d_x {
        return Err(DsrError::shape("dkf_elbo", format!("{s:?}, expected [B, T, {}]", cfg.d_x)));
    }
    let (batch, t_len, d) = (s[0], s[1], cfg.d_z);
    if 2 * trim >= t_len {
        return Err(DsrError::invalid(format!("trim {trim} leaves no steps of {t_len}")));
    }
    let feat = conv_stack(b, "dkf.enc", &cfg.encoder, x, Padding::Symmetric)?;
    let xi = Tensor::new(vec![batch, t_len, d], rng::normals(rng, batch * t_len * d))?;
    let post = ar_posterior(b, "dkf.enc", feat, d, cfg.lstm_state, xi)?;

    let len = t_len - 2 * trim;
    let z = post.eps.narrow(1, trim, len)?;
    let logq = post.logq.narrow(1, trim, len)?.sum();
    let z0 = z.select(1, 0)?;
    let zeros = b.tape().constant(Tensor::zeros(&[batch, d]));
    let mut logp = gaussian_nll_iso(z0, zeros, 1.0)?.neg();
    if len > 1 {
        let prev = z.narrow(1, 0, len - 1)?;
        let next = z.narrow(1, 1, len - 1)?;
        let pred = residual_mlp(b, "gen", prev)?;
        let trans = nll_scalar_logvar(next, pred, b.p("dkf.log_sigma_eps2")?)?;
        logp = logp.sub(trans)?;
    }
    let xhat = z.linear(b.p("dkf.obs.w")?, Some(b.p("dkf.obs.b")?))?;
    let rec = gaussian_nll_iso(x.narrow(1, trim, len)?, xhat, log_sigma_eta2.exp())?;

    let norm = 1.0 / batch as f64;
    let kl = logq.sub(logp)?.scale(norm);
    let rec = rec.scale(norm);
    let total = kl.add(rec)?;
    Ok(DkfOutput {
        z: post.eps,
        mu: post.mu,
        logvar: post.logvar,
        kl,
        rec,
        total,
    })
}
