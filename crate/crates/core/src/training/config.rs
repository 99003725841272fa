use serde::{Deserialize, Serialize};

use crate::error::{DsrError, Result};
use crate::models::{ConvSpec, ModelConfig, Variant};

/// Everything needed to reproduce one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub variant: Variant,
    pub d_z: usize,
    /// Encoder-estimated state components; `None` picks the variant default.
    pub d_zhat: Option<usize>,
    pub hidden: usize,
    pub encoder: ConvSpec,
    pub tau: usize,
    pub log_sigma_eta2: f64,
    pub alpha_g: f64,
    pub alpha_zhat: f64,
    pub chunk: usize,
    pub batch: usize,
    pub trim: usize,
    pub mc_samples: usize,
    pub iterations: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_milestones: Vec<usize>,
    pub clip: f64,
    pub checkpoint_every: usize,
    pub seed: u64,
    /// Co-train the causal encoder after each main update.
    pub train_causal: bool,
    /// Initial log transition variance of the DKF prior.
    pub dkf_log_sigma_eps2: f64,
    /// AR-LSTM scheduled-sampling probability and window split.
    pub gamma: f64,
    pub t_past: usize,
    pub t_pred: usize,
    pub noise_scale_init: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Dpdsr,
            d_z: 8,
            d_zhat: None,
            hidden: 256,
            encoder: ConvSpec::default(),
            tau: 20,
            log_sigma_eta2: -2.0,
            alpha_g: 0.3,
            alpha_zhat: 0.001,
            chunk: 300,
            batch: 16,
            trim: 50,
            mc_samples: 4,
            iterations: 30_000,
            lr: 1e-3,
            lr_decay: 0.3,
            lr_milestones: vec![10_000, 20_000],
            clip: 100.0,
            checkpoint_every: 5000,
            seed: 0,
            train_causal: true,
            dkf_log_sigma_eps2: -4.0,
            gamma: 0.0,
            t_past: 100,
            t_pred: 50,
            noise_scale_init: 0.1,
        }
    }
}

impl TrainingConfig {
    /// `log σ_ẑ² = log σ_η² + 2`.
    pub fn log_sigma_zhat2(&self) -> f64 {
        self.log_sigma_eta2 + 2.0
    }

    /// Shrinks iterations, schedule breakpoints and checkpoint spacing by
    /// `factor`, keeping their proportions.
    pub fn scaled(mut self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(DsrError::invalid(format!("scale {factor} outside (0, 1]")));
        }
        let s = |n: usize| ((n as f64 * factor).round() as usize).max(1);
        self.iterations = s(self.iterations);
        self.lr_milestones = self.lr_milestones.iter().map(|&m| s(m)).collect();
        self.checkpoint_every = s(self.checkpoint_every);
        Ok(self)
    }

    pub fn lr_at(&self, iteration: usize) -> f64 {
        let drops = self.lr_milestones.iter().filter(|&&m| iteration >= m).count();
        self.lr * self.lr_decay.powi(drops as i32)
    }

    /// Monte Carlo samples actually drawn (one for deterministic variants).
    pub fn effective_mc(&self) -> usize {
        match self.variant {
            Variant::Dpdsr => self.mc_samples,
            _ => 1,
        }
    }

    /// Window length drawn from the series per chunk.
    pub fn window(&self) -> usize {
        match self.variant {
            Variant::Arlstm => self.t_past + self.t_pred,
            _ => self.chunk,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.tau < 1 {
            bad.push("tau must be at least 1".to_string());
        }
        if 2 * self.trim >= self.chunk {
            bad.push(format!("trim {} must be below chunk/2 = {}", self.trim, self.chunk / 2));
        }
        if self.mc_samples < 1 {
            bad.push("mc_samples must be at least 1".into());
        }
        if self.batch < 1 || self.iterations < 1 || self.checkpoint_every < 1 {
            bad.push("batch, iterations and checkpoint_every must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.clip > 0.0) {
            bad.push("lr and clip must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            bad.push(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if self.variant == Variant::Arlstm && (self.t_past == 0 || self.t_pred == 0) {
            bad.push("t_past and t_pred must be positive".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(DsrError::invalid(bad.join("; ")))
        }
    }

    pub fn model_config(&self, d_x: usize) -> ModelConfig {
        let mut c = ModelConfig::new(self.variant, d_x, self.d_z);
        if let Some(d) = self.d_zhat {
            if matches!(self.variant, Variant::Dpdsr | Variant::Spdsr) {
                c.d_zhat = d;
            }
        }
        c.hidden = self.hidden;
        c.encoder = self.encoder.clone();
        c.noise_scale_init = self.noise_scale_init;
        c.dkf_log_sigma_eps2 = self.dkf_log_sigma_eps2;
        c.t_past = self.t_past;
        c
    }
}

/// Hyperparameter axes of a sweep. Each variant reads the axes it has.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub tau: Vec<usize>,
    pub log_sigma_eta2: Vec<f64>,
    pub dkf_log_sigma_eps2: Vec<f64>,
    pub gamma: Vec<f64>,
    pub t_pred: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    /// Grid used for each variant in the benchmark.
    pub fn default_for(variant: Variant) -> Self {
        let base = Self {
            tau: vec![1],
            log_sigma_eta2: vec![-2.0],
            dkf_log_sigma_eps2: vec![-4.0],
            gamma: vec![0.0],
            t_pred: vec![50],
            seeds: (0..4).collect(),
        };
        match variant {
            Variant::Dpdsr | Variant::Spdsr => Self {
                tau: vec![1, 10, 20, 40, 60, 80, 100, 200],
                log_sigma_eta2: vec![-4.0, -2.0, 0.0],
                ..base
            },
            Variant::Dkf => Self {
                log_sigma_eta2: vec![-4.0, -2.0, 0.0],
                dkf_log_sigma_eps2: vec![-8.0, -6.0, -4.0, -2.0],
                ..base
            },
            Variant::Arlstm => Self {
                gamma: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
                t_pred: vec![20, 50, 100, 200],
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("tau", self.tau.is_empty()),
            ("log_sigma_eta2", self.log_sigma_eta2.is_empty()),
            ("dkf_log_sigma_eps2", self.dkf_log_sigma_eps2.is_empty()),
            ("gamma", self.gamma.is_empty()),
            ("t_pred", self.t_pred.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        let names: Vec<&str> = empty.iter().filter(|e| e.1).map(|e| e.0).collect();
        if names.is_empty() {
            Ok(())
        } else {
            Err(DsrError::invalid(format!("empty sweep axes: {}", names.join(", "))))
        }
    }

    /// Every hyperparameter cell (without seeds) applied to `base`.
    pub fn cells(&self, base: &TrainingConfig) -> Vec<TrainingConfig> {
        let mut out = Vec::new();
        match base.variant {
            Variant::Dpdsr | Variant::Spdsr => {
                for &tau in &self.tau {
                    for &s in &self.log_sigma_eta2 {
                        out.push(TrainingConfig { tau, log_sigma_eta2: s, ..base.clone() });
                    }
                }
            }
            Variant::Dkf => {
                for &s in &self.log_sigma_eta2 {
                    for &e in &self.dkf_log_sigma_eps2 {
                        out.push(TrainingConfig {
                            log_sigma_eta2: s,
                            dkf_log_sigma_eps2: e,
                            ..base.clone()
                        });
                    }
                }
            }
            Variant::Arlstm => {
                for &g in &self.gamma {
                    for &t in &self.t_pred {
                        out.push(TrainingConfig { gamma: g, t_pred: t, ..base.clone() });
                    }
                }
            }
        }
        out
    }

    pub fn runs(&self, base: &TrainingConfig) -> usize {
        self.cells(base).len() * self.seeds.len()
    }
}
