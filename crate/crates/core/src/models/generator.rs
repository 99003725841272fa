//! Evolution map, observation map and the teacher-forced rollout.

use rand::Rng;

use super::{Bound, ModelConfig};
use crate::autodiff::{ParamStore, Tensor, Var};
use crate::error::{DsrError, Result};

/// `f(z) = z + W2·ReLU(W1·z + b1) + b2` parameters under `prefix`.
pub fn init_evolution<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    d_z: usize,
    hidden: usize,
    rng: &mut R,
) {
    store.insert_weight(format!("{prefix}.w1"), d_z, hidden, rng);
    store.insert_zeros(format!("{prefix}.b1"), &[hidden]);
    store.insert_weight(format!("{prefix}.w2"), hidden, d_z, rng);
    store.insert_zeros(format!("{prefix}.b2"), &[d_z]);
}

/// Residual MLP `f` over the trailing axis, without the outer tanh.
pub fn residual_mlp<'t>(b: &Bound<'t, '_>, prefix: &str, z: Var<'t>) -> Result<Var<'t>> {
    let p = |s: &str| b.p(&format!("{prefix}.{s}"));
    let h = z.linear(p("w1")?, Some(p("b1")?))?.relu();
    z.add(h.linear(p("w2")?, Some(p("b2")?))?)
}

/// The `d_ε × d_z` transpose of `B`: zeros except the entry feeding the
/// last state component.
fn noise_matrix<'t>(b: &Bound<'t, '_>, cfg: &ModelConfig) -> Result<Option<Var<'t>>> {
    if !b.has("gen.noise") {
        return Ok(None);
    }
    let s = b.p("gen.noise")?.reshape(&[1, 1])?;
    let row = if cfg.d_z > 1 {
        let zeros = b.tape().constant(Tensor::zeros(&[1, cfg.d_z - 1]));
        Var::concat(&[zeros, s], 1)?
    } else {
        s
    };
    if cfg.d_eps == 1 {
        return Ok(Some(row));
    }
    let pad = b.tape().constant(Tensor::zeros(&[cfg.d_eps - 1, cfg.d_z]));
    Ok(Some(Var::concat(&[row, pad], 0)?))
}

fn check_state(z: Var<'_>, cfg: &ModelConfig, op: &'static str) -> Result<()> {
    let s = z.shape();
    if s.len() != 2 || s[1] != cfg.d_z {
        return Err(DsrError::shape(op, format!("state {s:?}, expected [N, {}]", cfg.d_z)));
    }
    Ok(())
}

fn step_with<'t>(
    b: &Bound<'t, '_>,
    z: Var<'t>,
    eps: Option<Var<'t>>,
    bmat: Option<Var<'t>>,
) -> Result<Var<'t>> {
    let f = residual_mlp(b, "gen", z)?;
    let pre = match (eps, bmat) {
        (Some(e), Some(m)) => f.add(e.linear(m, None)?)?,
        _ => f,
    };
    Ok(pre.tanh())
}

/// `tanh(f(z) + B·ε)` for `z: [N, d_z]`, `ε: [N, d_ε]`. Without `ε`, or for
/// a model without noise injection, the noise term is omitted.
pub fn evolve_step<'t>(
    b: &Bound<'t, '_>,
    cfg: &ModelConfig,
    z: Var<'t>,
    eps: Option<Var<'t>>,
) -> Result<Var<'t>> {
    check_state(z, cfg, "evolve_step")?;
    if let Some(e) = eps {
        let s = e.shape();
        if s.len() != 2 || s[0] != z.shape()[0] || s[1] != cfg.d_eps {
            return Err(DsrError::shape(
                "evolve_step",
                format!("noise {s:?} for state {:?}", z.shape()),
            ));
        }
    }
    let bmat = noise_matrix(b, cfg)?;
    step_with(b, z, eps, bmat)
}

/// `g(z) = W2·ReLU(W1·z + b1) + b2` over the trailing axis.
pub fn observe<'t>(b: &Bound<'t, '_>, z: Var<'t>) -> Result<Var<'t>> {
    let h = z.linear(b.p("obs.w1")?, Some(b.p("obs.b1")?))?.relu();
    h.linear(b.p("obs.w2")?, Some(b.p("obs.b2")?))
}

/// `[ẑ_0; f_init(ẑ_0)]`, or `ẑ_0` when the encoder covers every component.
pub fn initial_state<'t>(b: &Bound<'t, '_>, cfg: &ModelConfig, zhat0: Var<'t>) -> Result<Var<'t>> {
    if cfg.d_zhat < cfg.d_z {
        let rest = zhat0.linear(b.p("gen.init.w")?, None)?;
        Var::concat(&[zhat0, rest], 1)
    } else {
        Ok(zhat0)
    }
}

/// Teacher-forced rollout `z̃: [N, T, d_z]` from `ẑ: [N, T, d_ẑ]` and
/// optional noise `ε: [N, T, d_ε]`.
///
/// `z̃_{t+1} = tanh(f(u_t) + B·ε_t)` with `u_t = [ẑ_t; z̃_t[d_ẑ..]]` when
/// `t mod τ = 0` and `u_t = z̃_t` otherwise.
pub fn rollout_teacher_forced<'t>(
    b: &Bound<'t, '_>,
    cfg: &ModelConfig,
    zhat: Var<'t>,
    eps: Option<Var<'t>>,
    tau: usize,
) -> Result<Var<'t>> {
    if tau == 0 {
        return Err(DsrError::invalid("teacher forcing interval must be at least 1"));
    }
    let s = zhat.shape();
    if s.len() != 3 || s[2] != cfg.d_zhat || s[1] == 0 {
        return Err(DsrError::shape(
            "rollout_teacher_forced",
            format!("estimates {s:?}, expected [N, T, {}]", cfg.d_zhat),
        ));
    }
    let t_len = s[1];
    if let Some(e) = eps {
        let es = e.shape();
        if es.len() != 3 || es[0] != s[0] || es[1] != t_len || es[2] != cfg.d_eps {
            return Err(DsrError::shape(
                "rollout_teacher_forced",
                format!("noise {es:?} for estimates {s:?}"),
            ));
        }
    }
    let bmat = noise_matrix(b, cfg)?;
    let free = cfg.d_z - cfg.d_zhat;
    let mut z = initial_state(b, cfg, zhat.select(1, 0)?)?;
    let mut out = Vec::with_capacity(t_len);
    out.push(z);
    for t in 0..t_len - 1 {
        let input = if t % tau == 0 {
            let zt = zhat.select(1, t)?;
            if free > 0 {
                Var::concat(&[zt, z.narrow(1, cfg.d_zhat, free)?], 1)?
            } else {
                zt
            }
        } else {
            z
        };
        let e = eps.map(|e| e.select(1, t)).transpose()?;
        z = step_with(b, input, e, bmat)?;
        out.push(z);
    }
    Var::stack(&out, 1)
}
