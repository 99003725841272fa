//! Model-driven evaluations: short-term prediction, long generation and the
//! noise-usage diagnostic.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::dynsys::dataset::{chunk_starts, windows_at, TimeSeriesDataset};
use crate::error::{DsrError, Result};
use crate::models::encoder::{encode_noise, encode_states};
use crate::models::{dkf_elbo, Model, Simulator, Surrogate, Variant};
use crate::rng::{self, Rng64};
use crate::training::kl_autoregressive;

/// Maps observation windows `[N, k, d_x]` to the state at each window's
/// last step, using only that window.
pub trait StateEstimator {
    fn causal_states(&self, windows: &Tensor) -> Result<Vec<Vec<f64>>>;
}

impl StateEstimator for Simulator {
    fn causal_states(&self, windows: &Tensor) -> Result<Vec<Vec<f64>>> {
        Simulator::causal_states(self, windows)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionOptions {
    /// Prediction horizon.
    pub n: usize,
    /// Warmup length fed to the causal encoder.
    pub k: usize,
    pub noise_draws: usize,
    pub chunks: usize,
    pub seed: u64,
}

impl Default for PredictionOptions {
    fn default() -> Self {
        Self {
            n: 20,
            k: 256,
            noise_draws: 20,
            chunks: 2000,
            seed: 0,
        }
    }
}

fn standard_normals(rng: &mut Rng64, out: &mut [f64]) {
    for v in out {
        *v = rng::normal(rng);
    }
}

/// `PE_n`: mean over chunks and noise draws of `(1/n)·Σ_i ‖x_{k+i} − x̃_{k+i}‖`,
/// where `x̃` is simulated from the causal state estimate after `k` steps
/// with prior noise. Deterministic models use a single draw.
pub fn prediction_error<S: Surrogate + StateEstimator>(
    model: &S,
    data: &TimeSeriesDataset,
    opts: &PredictionOptions,
) -> Result<f64> {
    if opts.n == 0 || opts.k == 0 || opts.chunks == 0 || opts.noise_draws == 0 {
        return Err(DsrError::invalid("prediction_error: n, k, chunks and draws must be positive"));
    }
    let window = opts.k + opts.n;
    if window > data.len() {
        return Err(DsrError::invalid(format!(
            "prediction chunk of {window} exceeds series of {}",
            data.len()
        )));
    }
    let mut pick = rng::stream(opts.seed, "pe-chunks");
    let starts = chunk_starts(data.len(), window, opts.chunks, &mut pick)?;
    let draws = if model.is_stochastic() { opts.noise_draws } else { 1 };
    let (dz, de, dx) = (model.state_dim(), model.noise_dim(), model.obs_dim());
    let mut noise_rng = rng::stream(opts.seed, "pe-noise");
    let mut total = 0.0;
    let (mut z, mut next) = (vec![0.0; dz], vec![0.0; dz]);
    let mut eps = vec![0.0; de];
    let mut obs = vec![0.0; dx];
    const BATCH: usize = 64;
    for group in starts.chunks(BATCH) {
        let warm = windows_at(data, opts.k, group);
        let states = model.causal_states(&warm)?;
        for (&s0, state) in group.iter().zip(&states) {
            for _ in 0..draws {
                z.copy_from_slice(state);
                let mut err = 0.0;
                for i in 1..=opts.n {
                    standard_normals(&mut noise_rng, &mut eps);
                    model.step(&z, &eps, &mut next);
                    std::mem::swap(&mut z, &mut next);
                    model.observe(&z, &mut obs);
                    let truth = data.row(s0 + opts.k - 1 + i);
                    err += obs.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                }
                total += err / opts.n as f64;
            }
        }
    }
    Ok(total / (starts.len() * draws) as f64)
}

/// Free-running simulation from `z0`, returning `length` observations
/// (the first one is `g(z0)`), row-major `[length, d_x]`. Noise is drawn from
/// the prior when `stochastic`, otherwise zero.
pub fn simulate_observations<S: Surrogate + ?Sized>(
    model: &S,
    z0: &[f64],
    length: usize,
    stochastic: bool,
    rng: &mut Rng64,
) -> Result<Vec<f64>> {
    let (dz, dx) = (model.state_dim(), model.obs_dim());
    if z0.len() != dz {
        return Err(DsrError::shape("simulate", format!("state of {} for dimension {dz}", z0.len())));
    }
    let mut out = Vec::with_capacity(length * dx);
    let mut z = z0.to_vec();
    let mut next = vec![0.0; dz];
    let mut eps = vec![0.0; model.noise_dim()];
    let mut obs = vec![0.0; dx];
    for t in 0..length {
        model.observe(&z, &mut obs);
        out.extend_from_slice(&obs);
        if t + 1 == length {
            break;
        }
        if stochastic {
            standard_normals(rng, &mut eps);
        }
        model.step(&z, &eps, &mut next);
        std::mem::swap(&mut z, &mut next);
    }
    Ok(out)
}

/// Generates `length` observations from a random point of the
/// encoder-embedded training trajectory.
pub fn generate_long(sim: &Simulator, train: &TimeSeriesDataset, length: usize, seed: u64) -> Result<Vec<f64>> {
    let mut r = rng::stream(seed, "generate");
    let pos = rand::Rng::gen_range(&mut r, 0..train.len());
    let series = Tensor::new(vec![train.len(), train.dim], train.values.clone())?;
    let z0 = sim.states_at(&series, &[pos])?.remove(0);
    simulate_observations(sim, &z0, length, sim.is_stochastic(), &mut r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlOptions {
    pub chunks: usize,
    pub chunk_len: usize,
    pub trim: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for KlOptions {
    fn default() -> Self {
        Self {
            chunks: 64,
            chunk_len: 300,
            trim: 50,
            mc_samples: 4,
            seed: 0,
        }
    }
}

/// `KL_ε`: Monte Carlo KL of the noise posterior from the prior, summed
/// over the trimmed window and averaged over chunks. Exactly 0 for models
/// without a noise posterior; for the DKF it is the state-posterior KL term.
pub fn kl_usage(model: &Model, data: &TimeSeriesDataset, opts: &KlOptions) -> Result<f64> {
    let cfg = &model.config;
    if !matches!(cfg.variant, Variant::Dpdsr | Variant::Dkf) {
        return Ok(0.0);
    }
    if opts.chunks == 0 {
        return Err(DsrError::invalid("kl_usage needs at least one chunk"));
    }
    let len = opts.chunk_len.min(data.len());
    let trim = opts.trim.min(len.saturating_sub(1) / 2);
    let mut pick = rng::stream(opts.seed, "kl-chunks");
    let starts = chunk_starts(data.len(), len, opts.chunks, &mut pick)?;
    let mut sampler = rng::stream(opts.seed, "kl-sampler");
    let mut total = 0.0;
    const BATCH: usize = 16;
    for group in starts.chunks(BATCH) {
        let x = windows_at(data, len, group);
        let tape = Tape::new();
        let b = model.bind(&tape);
        let xv = tape.constant(x);
        let kl = match cfg.variant {
            Variant::Dpdsr => {
                let zhat = encode_states(&b, cfg, xv, false)?;
                let post = encode_noise(&b, cfg, xv, zhat, opts.mc_samples.max(1), &mut sampler)?;
                kl_autoregressive(&post, trim)?.item()?
            }
            _ => dkf_elbo(&b, cfg, xv, 0.0, trim, &mut sampler)?.kl.item()?,
        };
        total += kl * group.len() as f64;
    }
    Ok(total / starts.len() as f64)
}
