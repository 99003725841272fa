//! Generative models, encoders and the variant architectures.
//!
//! A [`Model`] owns two parameter stores: the main store (generative
//! network, encoders) and a separate store for the causal auxiliary encoder,
//! which has its own optimizer. Never bind both stores to one tape.

pub mod arlstm;
pub mod checkpoint;
pub mod dkf;
pub mod encoder;
pub mod generator;
pub mod inference;
pub mod plain;

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{DsrError, Result};
use crate::rng;

pub use arlstm::{arlstm_rollout, ArOutput};
pub use checkpoint::{list_checkpoints, load_checkpoint, save_checkpoint, CheckpointManifest};
pub use dkf::{dkf_elbo, DkfOutput};
pub use encoder::{encode_noise, encode_states, PosteriorSample};
pub use generator::{evolve_step, observe, rollout_teacher_forced};
pub use inference::{Simulator, Surrogate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Dpdsr,
    Spdsr,
    Dkf,
    Arlstm,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Dpdsr => "dpdsr",
            Variant::Spdsr => "spdsr",
            Variant::Dkf => "dkf",
            Variant::Arlstm => "arlstm",
        }
    }

    pub fn is_stochastic(self) -> bool {
        !matches!(self, Variant::Spdsr)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = DsrError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "dpdsr" => Variant::Dpdsr,
            "spdsr" => Variant::Spdsr,
            "dkf" => Variant::Dkf,
            "arlstm" | "ar-lstm" => Variant::Arlstm,
            other => return Err(DsrError::invalid(format!("unknown variant '{other}'"))),
        })
    }
}

/// Dilated convolution stack layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self {
            channels: 24,
            kernel: 7,
            dilations: vec![1, 2, 4, 8, 16, 32, 64],
        }
    }
}

impl ConvSpec {
    /// `1 + (k − 1)·Σ dilations`.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * self.dilations.iter().sum::<usize>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub d_x: usize,
    pub d_z: usize,
    /// Number of state components estimated by the encoder.
    pub d_zhat: usize,
    pub d_eps: usize,
    /// Hidden width of the evolution MLP.
    pub hidden: usize,
    /// Hidden width of the observation MLP.
    pub obs_hidden: usize,
    pub encoder: ConvSpec,
    pub lstm_state: usize,
    /// Initial value of the nonzero entry of the noise injection matrix.
    pub noise_scale_init: f64,
    /// Initial `log σ_ε²` of the DKF transition prior.
    pub dkf_log_sigma_eps2: f64,
    /// AR-LSTM initial-condition code size and MLP width.
    pub code_dim: usize,
    pub ic_hidden: usize,
    /// AR-LSTM context length used to estimate initial conditions.
    #[serde(default = "default_t_past")]
    pub t_past: usize,
}

fn default_t_past() -> usize {
    100
}

impl ModelConfig {
    pub fn new(variant: Variant, d_x: usize, d_z: usize) -> Self {
        let (d_zhat, d_eps) = match variant {
            Variant::Dpdsr => (d_z.saturating_sub(1).max(1), 1),
            Variant::Spdsr => (d_z.saturating_sub(1).max(1), 0),
            Variant::Dkf => (d_z, d_z),
            Variant::Arlstm => (0, d_x),
        };
        Self {
            variant,
            d_x,
            d_z,
            d_zhat,
            d_eps,
            hidden: 256,
            obs_hidden: 32,
            encoder: ConvSpec::default(),
            lstm_state: 32,
            noise_scale_init: 0.1,
            dkf_log_sigma_eps2: -4.0,
            code_dim: 8,
            ic_hidden: 64,
            t_past: default_t_past(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DsrError::invalid(m));
        if self.d_x == 0 || self.d_z == 0 {
            return bad(format!("d_x = {} and d_z = {} must be positive", self.d_x, self.d_z));
        }
        match self.variant {
            Variant::Dpdsr | Variant::Spdsr => {
                if self.d_zhat == 0 || self.d_zhat > self.d_z {
                    return bad(format!("d_zhat = {} must lie in 1..={}", self.d_zhat, self.d_z));
                }
            }
            Variant::Dkf | Variant::Arlstm => {}
        }
        if self.encoder.kernel == 0 || self.encoder.channels == 0 {
            return bad("encoder kernel and channels must be positive".into());
        }
        if self.encoder.dilations.iter().any(|&d| d == 0) {
            return bad("encoder dilations must be positive".into());
        }
        Ok(())
    }

    /// Dimension of the causal encoder's output.
    pub fn causal_dim(&self) -> usize {
        match self.variant {
            Variant::Dpdsr | Variant::Spdsr => self.d_zhat,
            Variant::Dkf => self.d_z,
            Variant::Arlstm => 0,
        }
    }

    /// Dimension of the state advanced by the inference-time simulator.
    pub fn sim_state_dim(&self) -> usize {
        match self.variant {
            Variant::Arlstm => 2 * self.lstm_state + self.d_x,
            _ => self.d_z,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub causal: ParamStore,
}

impl Model {
    /// Initializes weights uniformly in `±1/√fan_in`, biases at zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, "model-init");
        let mut params = ParamStore::new();
        let mut causal = ParamStore::new();
        let c = &config;
        match c.variant {
            Variant::Dpdsr | Variant::Spdsr => {
                generator::init_evolution(&mut params, "gen", c.d_z, c.hidden, &mut r);
                if c.variant == Variant::Dpdsr {
                    params.insert("gen.noise", Tensor::vector(vec![c.noise_scale_init]));
                }
                if c.d_zhat < c.d_z {
                    params.insert_weight("gen.init.w", c.d_zhat, c.d_z - c.d_zhat, &mut r);
                }
                params.insert_weight("obs.w1", c.d_z, c.obs_hidden, &mut r);
                params.insert_zeros("obs.b1", &[c.obs_hidden]);
                params.insert_weight("obs.w2", c.obs_hidden, c.d_x, &mut r);
                params.insert_zeros("obs.b2", &[c.d_x]);
                encoder::init_conv_stack(&mut params, "enc", c.d_x, &c.encoder, &mut r);
                encoder::init_head(&mut params, "enc", c.encoder.channels, c.d_zhat, &mut r);
                if c.variant == Variant::Dpdsr {
                    encoder::init_conv_stack(&mut params, "noise", c.d_x + c.d_zhat, &c.encoder, &mut r);
                    encoder::init_lstm(&mut params, "noise", c.encoder.channels + c.d_eps, c.lstm_state, &mut r);
                    encoder::init_head(&mut params, "noise", c.lstm_state, 2 * c.d_eps, &mut r);
                }
            }
            Variant::Dkf => {
                generator::init_evolution(&mut params, "gen", c.d_z, c.hidden, &mut r);
                params.insert_weight("dkf.obs.w", c.d_z, c.d_x, &mut r);
                params.insert_zeros("dkf.obs.b", &[c.d_x]);
                params.insert("dkf.log_sigma_eps2", Tensor::vector(vec![c.dkf_log_sigma_eps2]));
                encoder::init_conv_stack(&mut params, "dkf.enc", c.d_x, &c.encoder, &mut r);
                encoder::init_lstm(&mut params, "dkf.enc", c.encoder.channels + c.d_z, c.lstm_state, &mut r);
                encoder::init_head(&mut params, "dkf.enc", c.lstm_state, 2 * c.d_z, &mut r);
            }
            Variant::Arlstm => {
                encoder::init_conv_stack(&mut params, "ar.enc", c.d_x, &c.encoder, &mut r);
                params.insert_weight("ar.code.w", c.encoder.channels, c.code_dim, &mut r);
                params.insert_zeros("ar.code.b", &[c.code_dim]);
                params.insert_weight("ar.ic.w1", c.code_dim, c.ic_hidden, &mut r);
                params.insert_zeros("ar.ic.b1", &[c.ic_hidden]);
                params.insert_weight("ar.ic.w2", c.ic_hidden, 2 * c.lstm_state + c.d_x, &mut r);
                params.insert_zeros("ar.ic.b2", &[2 * c.lstm_state + c.d_x]);
                encoder::init_lstm(&mut params, "ar", c.d_x, c.lstm_state, &mut r);
                encoder::init_head(&mut params, "ar", c.lstm_state, 2 * c.d_x, &mut r);
            }
        }
        if c.causal_dim() > 0 {
            let mut rc = rng::stream(seed, "causal-init");
            encoder::init_conv_stack(&mut causal, "causal", c.d_x, &c.encoder, &mut rc);
            encoder::init_head(&mut causal, "causal", c.encoder.channels, c.causal_dim(), &mut rc);
        }
        Ok(Self {
            config,
            params,
            causal,
        })
    }

    pub fn bind<'t, 's>(&'s self, tape: &'t Tape) -> Bound<'t, 's> {
        Bound::new(tape, &self.params)
    }

    pub fn bind_causal<'t, 's>(&'s self, tape: &'t Tape) -> Bound<'t, 's> {
        Bound::new(tape, &self.causal)
    }

    /// Noise injection entry, 0 for deterministic variants.
    pub fn noise_scale(&self) -> f64 {
        self.params
            .by_name("gen.noise")
            .map_or(0.0, |t| t.data()[0])
    }
}

/// Parameters of one store registered lazily on a tape, each at most once.
pub struct Bound<'t, 's> {
    tape: &'t Tape,
    store: &'s ParamStore,
    cache: RefCell<HashMap<usize, Var<'t>>>,
}

impl<'t, 's> Bound<'t, 's> {
    pub fn new(tape: &'t Tape, store: &'s ParamStore) -> Self {
        Self {
            tape,
            store,
            cache: RefCell::new(HashMap::new()),
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn has(&self, name: &str) -> bool {
        self.store.id(name).is_some()
    }

    pub fn p(&self, name: &str) -> Result<Var<'t>> {
        let id = self.store.expect_id(name)?;
        let mut cache = self.cache.borrow_mut();
        Ok(*cache
            .entry(id.0)
            .or_insert_with(|| self.tape.param(self.store, id)))
    }

    pub fn value(&self, name: &str) -> Result<&'s Tensor> {
        Ok(self.store.value(self.store.expect_id(name)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn receptive_field_of_default_stack() {
        assert_eq!(ConvSpec::default().receptive_field(), 763);
    }

    #[test]
    fn every_variant_initializes() {
        for v in [Variant::Dpdsr, Variant::Spdsr, Variant::Dkf, Variant::Arlstm] {
            let mut cfg = ModelConfig::new(v, 1, 4);
            cfg.hidden = 8;
            let m = Model::new(cfg, 0).unwrap();
            assert!(m.params.len() > 0);
            assert_eq!(m.causal.is_empty(), v == Variant::Arlstm);
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("gtf".parse::<Variant>().is_err());
    }

    #[test]
    fn biases_start_at_zero() {
        let m = Model::new(ModelConfig::new(Variant::Dpdsr, 1, 3), 1).unwrap();
        for (_, p) in m.params.iter() {
            if p.name.ends_with(".b") || p.name.contains(".b1") || p.name.contains(".b2") {
                assert!(p.value.data().iter().all(|&v| v == 0.0), "{}", p.name);
            }
        }
        let bound = 1.0 / 3f64.sqrt();
        let w1 = m.params.by_name("gen.w1").unwrap();
        assert!(w1.data().iter().all(|v| v.abs() <= bound));
    }
}
