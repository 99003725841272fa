//! Dataset container, benchmark generators, file format and chunk sampling.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::ode::{integrate_rk45, Rk45Options, Trajectory};
use super::sde::integrate_euler_maruyama;
use super::systems::{CellCycle, ChaoticRnn, ConnectivityScaling, DoubleWell, Lorenz};
use crate::autodiff::Tensor;
use crate::error::{DsrError, Result};
use crate::fsio;
use crate::rng;
use crate::signal::mean_std;

/// Fraction of extra simulated time discarded before sampling starts.
pub const WARMUP_FRACTION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Lorenz,
    Cell,
    DoubleWell,
    Rnn,
    Neuron,
    Ecg,
}

impl DatasetKind {
    pub const SYNTHETIC: [DatasetKind; 4] = [Self::Lorenz, Self::Cell, Self::DoubleWell, Self::Rnn];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Lorenz => "lorenz",
            Self::Cell => "cell",
            Self::DoubleWell => "doublewell",
            Self::Rnn => "rnn",
            Self::Neuron => "neuron",
            Self::Ecg => "ecg",
        }
    }

    pub fn is_synthetic(self) -> bool {
        Self::SYNTHETIC.contains(&self)
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = DsrError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "lorenz" => Self::Lorenz,
            "cell" => Self::Cell,
            "doublewell" => Self::DoubleWell,
            "rnn" => Self::Rnn,
            "neuron" => Self::Neuron,
            "ecg" => Self::Ecg,
            other => return Err(DsrError::invalid(format!("unknown dataset '{other}'"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Per-channel statistics removed before the series was stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// One split of a normalized observation series, row-major `T × d_x`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesDataset {
    pub name: String,
    pub dt: f64,
    pub dim: usize,
    pub values: Vec<f64>,
    pub split: Split,
    pub normalization: Normalization,
    pub seed: Option<u64>,
    pub generator_params: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    name: String,
    dt: f64,
    shape: [usize; 2],
    split: Split,
    normalization: Normalization,
    seed: Option<u64>,
    generator_params: serde_json::Value,
}

impl TimeSeriesDataset {
    pub fn len(&self) -> usize {
        self.values.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn kind(&self) -> Result<DatasetKind> {
        self.name.parse()
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.dim).copied().collect()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    /// Whole split as a `[1, T, d_x]` tensor.
    pub fn as_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.len(), self.dim], self.values.clone()).expect("dataset shape")
    }

    /// Writes `<stem>.bin`, `<stem>.json` and `<stem>.csv`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let sidecar = Sidecar {
            name: self.name.clone(),
            dt: self.dt,
            shape: [self.len(), self.dim],
            split: self.split,
            normalization: self.normalization.clone(),
            seed: self.seed,
            generator_params: self.generator_params.clone(),
        };
        fsio::write_atomic(&with_ext(stem, "bin"), &fsio::f64s_to_le_bytes(&self.values))?;
        fsio::write_atomic(
            &with_ext(stem, "json"),
            serde_json::to_string_pretty(&sidecar)?.as_bytes(),
        )?;
        let mut csv = String::from("t");
        for c in 0..self.dim {
            csv.push_str(&format!(",x{c}"));
        }
        csv.push('\n');
        for t in 0..self.len() {
            csv.push_str(&t.to_string());
            for v in self.row(t) {
                csv.push(',');
                csv.push_str(&v.to_string());
            }
            csv.push('\n');
        }
        fsio::write_atomic(&with_ext(stem, "csv"), csv.as_bytes())
    }

    /// Loads from any of the three files sharing `stem` (the extension is ignored).
    pub fn load(path: &Path) -> Result<Self> {
        let json_path = with_ext(path, "json");
        let bin_path = with_ext(path, "bin");
        let sidecar: Sidecar = serde_json::from_slice(&std::fs::read(&json_path)?)?;
        let values = fsio::le_bytes_to_f64s(&std::fs::read(&bin_path)?, &bin_path)?;
        if values.len() != sidecar.shape[0] * sidecar.shape[1] {
            return Err(DsrError::Format {
                path: bin_path,
                reason: format!(
                    "{} values for declared shape {:?}",
                    values.len(),
                    sidecar.shape
                ),
            });
        }
        Ok(Self {
            name: sidecar.name,
            dt: sidecar.dt,
            dim: sidecar.shape[1],
            values,
            split: sidecar.split,
            normalization: sidecar.normalization,
            seed: sidecar.seed,
            generator_params: sidecar.generator_params,
        })
    }

    /// Conventional file stem `<dir>/<name>_<split>`.
    pub fn stem_in(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}_{}", self.name, self.split.as_str()))
    }
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut p = stem.to_path_buf();
    let keep = matches!(
        p.extension().and_then(|e| e.to_str()),
        Some("bin" | "json" | "csv")
    );
    if keep {
        p.set_extension(ext);
    } else {
        let mut s = p.into_os_string();
        s.push(".");
        s.push(ext);
        p = PathBuf::from(s);
    }
    p
}

/// Normalizes a `T × dim` series with full-series statistics and cuts it
/// into equal train and test halves.
pub fn normalize_and_split(
    name: &str,
    dt: f64,
    dim: usize,
    mut values: Vec<f64>,
    seed: Option<u64>,
    generator_params: serde_json::Value,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    let t = values.len() / dim;
    if t < 2 || values.len() != t * dim {
        return Err(DsrError::invalid(format!(
            "{name}: series of {} values cannot be split into two {dim}-channel halves",
            values.len()
        )));
    }
    let mut norm = Normalization {
        mean: vec![],
        std: vec![],
    };
    for c in 0..dim {
        let col: Vec<f64> = values.iter().skip(c).step_by(dim).copied().collect();
        let (m, s) = mean_std(&col);
        if !(s > 1e-12 * m.abs().max(1.0)) || !s.is_finite() {
            return Err(DsrError::Degenerate(format!(
                "{name}: channel {c} has zero variance (mean {m}, std {s})"
            )));
        }
        norm.mean.push(m);
        norm.std.push(s);
    }
    for (i, v) in values.iter_mut().enumerate() {
        let c = i % dim;
        *v = (*v - norm.mean[c]) / norm.std[c];
    }
    let half = t / 2;
    let make = |split, rows: &[f64]| TimeSeriesDataset {
        name: name.to_string(),
        dt,
        dim,
        values: rows.to_vec(),
        split,
        normalization: norm.clone(),
        seed,
        generator_params: generator_params.clone(),
    };
    let train = make(Split::Train, &values[..half * dim]);
    let test = make(Split::Test, &values[half * dim..2 * half * dim]);
    Ok((train, test))
}

/// Total number of stored samples at a given scale, rounded to an even count.
pub fn scaled_length(full_length: usize, scale: f64) -> Result<usize> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(DsrError::invalid(format!("scale must be positive, got {scale}")));
    }
    let n = ((full_length as f64 * scale / 2.0).round() as usize) * 2;
    if n < 4 {
        return Err(DsrError::invalid(format!(
            "scale {scale} leaves fewer than 4 samples"
        )));
    }
    Ok(n)
}

fn observed(tr: &Trajectory, c: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    tr.channel(c).into_iter().map(f).collect()
}

fn sample_ode<S: super::ode::OdeSystem>(
    sys: &S,
    y0: &[f64],
    n: usize,
    dt: f64,
    opts: &Rk45Options,
) -> Result<Trajectory> {
    let warmup = WARMUP_FRACTION * n as f64 * dt;
    integrate_rk45(sys, y0, 0.0, warmup, dt, n, opts)
}

/// Simulates one of the four synthetic benchmarks and returns normalized
/// `(train, test)` splits. `scale` multiplies the simulated duration.
pub fn generate_dataset(
    kind: DatasetKind,
    seed: u64,
    scale: f64,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    let name = kind.as_str();
    match kind {
        DatasetKind::Lorenz => {
            let sys = Lorenz::default();
            let (dt, n) = (0.05, scaled_length(200_000, scale)?);
            let opts = Rk45Options::default();
            let tr = sample_ode(&sys, &[1.0, 1.0, 1.0], n, dt, &opts)?;
            let params = json!({
                "system": sys, "duration": n as f64 * dt, "sample_dt": dt,
                "warmup_fraction": WARMUP_FRACTION, "initial_state": [1.0, 1.0, 1.0],
                "rtol": opts.rtol, "atol": opts.atol, "observed": "x", "scale": scale,
            });
            normalize_and_split(name, dt, 1, observed(&tr, 0, |v| v), Some(seed), params)
        }
        DatasetKind::Cell => {
            let sys = CellCycle::default();
            let (dt, n) = (5.0, scaled_length(160_000, scale)?);
            let opts = Rk45Options {
                max_step: 0.04,
                ..Rk45Options::default()
            };
            let tr = sample_ode(&sys, &[0.5; 6], n, dt, &opts)?;
            let params = json!({
                "system": sys, "duration": n as f64 * dt, "sample_dt": dt,
                "warmup_fraction": WARMUP_FRACTION, "initial_state": vec![0.5; 6],
                "rtol": opts.rtol, "atol": opts.atol, "max_step": opts.max_step,
                "observed": "C1", "scale": scale,
            });
            normalize_and_split(name, dt, 1, observed(&tr, 0, |v| v), Some(seed), params)
        }
        DatasetKind::DoubleWell => {
            let sys = DoubleWell::default();
            let (step, every) = (0.2, 10usize);
            let n = scaled_length(200_000, scale)?;
            let warmup_steps = ((WARMUP_FRACTION * (n * every) as f64) as usize).div_ceil(every) * every;
            let total_steps = warmup_steps + (n - 1) * every;
            let mut noise = rng::stream(seed, "doublewell-noise");
            let tr = integrate_euler_maruyama(&sys, &[1.0; 5], step, total_steps, every, &mut noise)?;
            let skip = warmup_steps / every;
            let obs: Vec<f64> = tr.channel(4)[skip..].to_vec();
            debug_assert_eq!(obs.len(), n);
            let params = json!({
                "system": sys, "step": step, "downsample": every,
                "duration": (n * every) as f64 * step, "warmup_fraction": WARMUP_FRACTION,
                "initial_state": vec![1.0; 5], "observed": "z5", "scale": scale,
            });
            normalize_and_split(name, step * every as f64, 1, obs, Some(seed), params)
        }
        DatasetKind::Rnn => generate_rnn(seed, scale, 1000, 2.0, ConnectivityScaling::GSquaredOverN),
        DatasetKind::Neuron | DatasetKind::Ecg => Err(DsrError::invalid(format!(
            "'{name}' is an external recording; use preprocess_external"
        ))),
    }
}

/// Chaotic rate network benchmark with explicit size, gain and scaling.
pub fn generate_rnn(
    seed: u64,
    scale: f64,
    n_neurons: usize,
    g: f64,
    scaling: ConnectivityScaling,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    let (dt, n) = (0.5, scaled_length(200_000, scale)?);
    let net = ChaoticRnn::sample(
        n_neurons,
        g,
        scaling,
        &mut rng::stream(seed, "rnn-connectivity"),
    );
    let h0 = rng::normals(&mut rng::stream(seed, "rnn-initial-state"), n_neurons);
    let opts = Rk45Options::default();
    let tr = sample_ode(&net, &h0, n, dt, &opts)?;
    let params = json!({
        "n": n_neurons, "g": g, "connectivity_scaling": scaling,
        "connectivity_variance": scaling.variance(g, n_neurons),
        "duration": n as f64 * dt, "sample_dt": dt, "warmup_fraction": WARMUP_FRACTION,
        "initial_state": "N(0,1)", "rtol": opts.rtol, "atol": opts.atol,
        "observed": "tanh(h1)", "scale": scale,
    });
    normalize_and_split("rnn", dt, 1, observed(&tr, 0, f64::tanh), Some(seed), params)
}

/// Uniformly drawn window starts in `0..=len − window`.
pub fn chunk_starts(len: usize, window: usize, count: usize, rng: &mut rng::Rng64) -> Result<Vec<usize>> {
    if window == 0 || window > len {
        return Err(DsrError::invalid(format!(
            "chunk length {window} does not fit a series of length {len}"
        )));
    }
    Ok((0..count).map(|_| rng.gen_range(0..=len - window)).collect())
}

/// `count` random windows of length `window`, as a `[count, window, d_x]`
/// tensor. Deterministic given `seed`.
pub fn chunk(ds: &TimeSeriesDataset, window: usize, count: usize, seed: u64) -> Result<Tensor> {
    let mut r = rng::stream(seed, "chunk");
    chunk_with(ds, window, count, &mut r)
}

pub fn chunk_with(
    ds: &TimeSeriesDataset,
    window: usize,
    count: usize,
    rng: &mut rng::Rng64,
) -> Result<Tensor> {
    let starts = chunk_starts(ds.len(), window, count, rng)?;
    Ok(windows_at(ds, window, &starts))
}

pub fn windows_at(ds: &TimeSeriesDataset, window: usize, starts: &[usize]) -> Tensor {
    let d = ds.dim;
    let mut data = Vec::with_capacity(starts.len() * window * d);
    for &s in starts {
        data.extend_from_slice(&ds.values[s * d..(s + window) * d]);
    }
    Tensor::new(vec![starts.len(), window, d], data).expect("window shape")
}
