//! Composite building blocks: LSTM cell and Gaussian likelihood terms.

use std::f64::consts::PI;

use super::tape::Var;
use crate::error::{DsrError, Result};

/// Lower/upper bound applied to every emitted log-variance.
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// `½·log(2π)`, the per-component Gaussian NLL floor at unit variance.
pub const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// One step of a standard LSTM cell over a batch.
///
/// `x: [N, d_in]`, `h, c: [N, d_h]`, `w: [d_in + d_h, 4·d_h]`, `b: [4·d_h]`.
/// Gate column blocks are ordered input, forget, candidate, output.
pub fn lstm_cell<'t>(
    x: Var<'t>,
    h: Var<'t>,
    c: Var<'t>,
    w: Var<'t>,
    b: Var<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let hs = h.shape();
    let d_h = *hs.last().unwrap_or(&0);
    if c.shape() != hs {
        return Err(DsrError::shape(
            "lstm_cell",
            format!("h {:?} and c {:?}", hs, c.shape()),
        ));
    }
    let ws = w.shape();
    if ws.len() != 2 || ws[1] != 4 * d_h {
        return Err(DsrError::shape(
            "lstm_cell",
            format!("weights {ws:?} for state size {d_h}"),
        ));
    }
    let gates = Var::concat(&[x, h], 1)?.linear(w, Some(b))?;
    let i = gates.narrow(1, 0, d_h)?.sigmoid();
    let f = gates.narrow(1, d_h, d_h)?.sigmoid();
    let g = gates.narrow(1, 2 * d_h, d_h)?.tanh();
    let o = gates.narrow(1, 3 * d_h, d_h)?.sigmoid();
    let c_next = f.mul(c)?.add(i.mul(g)?)?;
    let h_next = o.mul(c_next.tanh())?;
    Ok((h_next, c_next))
}

fn check_positive(var: Var<'_>, op: &'static str) -> Result<()> {
    var.with_value(|v| {
        if v.data().iter().all(|&s| s > 0.0) {
            Ok(())
        } else {
            Err(DsrError::invalid(format!("{op}: variance must be positive")))
        }
    })
}

/// Summed Gaussian negative log-likelihood
/// `Σ ½·log(2π·var) + (x − mu)² / (2·var)`.
pub fn gaussian_nll<'t>(x: Var<'t>, mu: Var<'t>, var: Var<'t>) -> Result<Var<'t>> {
    check_positive(var, "gaussian_nll")?;
    let quad = x.sub(mu)?.square();
    let inv = var.ln().neg().exp();
    let log_term = var.scale(2.0 * PI).ln();
    Ok(log_term.add(quad.mul(inv)?)?.scale(0.5).sum())
}

/// Gaussian NLL with the variance given as a log-variance tensor.
pub fn gaussian_nll_logvar<'t>(x: Var<'t>, mu: Var<'t>, logvar: Var<'t>) -> Result<Var<'t>> {
    let quad = x.sub(mu)?.square();
    let n = quad.with_value(|v| v.len()) as f64;
    let weighted = quad.mul(logvar.neg().exp())?;
    Ok(weighted
        .add(logvar)?
        .sum()
        .scale(0.5)
        .add_scalar(n * HALF_LOG_2PI))
}

/// Gaussian NLL with a fixed isotropic variance.
pub fn gaussian_nll_iso<'t>(x: Var<'t>, mu: Var<'t>, var: f64) -> Result<Var<'t>> {
    if var <= 0.0 || !var.is_finite() {
        return Err(DsrError::invalid("gaussian_nll: variance must be positive"));
    }
    let quad = x.sub(mu)?.square().sum();
    let n = x.with_value(|v| v.len()) as f64;
    Ok(quad
        .scale(0.5 / var)
        .add_scalar(0.5 * n * (2.0 * PI * var).ln()))
}

/// `KL(N(mu, diag var) ‖ N(0, I)) = ½·Σ(var + mu² − 1 − log var)`.
pub fn kl_diag_gaussian<'t>(mu: Var<'t>, var: Var<'t>) -> Result<Var<'t>> {
    check_positive(var, "kl_diag_gaussian")?;
    let inner = var.add(mu.square())?.sub(var.ln())?.add_scalar(-1.0);
    Ok(inner.sum().scale(0.5))
}
