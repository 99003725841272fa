use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{isi_distance, score, spectral_distance, wasserstein_1d, Measures};
use super::predict::{generate_long, kl_usage, prediction_error, KlOptions, PredictionOptions};
use crate::dynsys::dataset::TimeSeriesDataset;
use crate::error::{DsrError, Result};
use crate::models::{Model, Simulator};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: String,
    pub model: String,
    pub checkpoint: Option<usize>,
    pub generation_length: usize,
    pub d_d: f64,
    pub d_s: f64,
    pub pe_20: Option<f64>,
    pub d_isi: Option<f64>,
    pub score: f64,
    pub kl_eps: f64,
    /// Welch segment length actually used for `D_s`.
    pub spectral_segment: usize,
}

impl EvaluationReport {
    pub const CSV_HEADER: &'static str =
        "dataset,model,checkpoint,generation_length,d_d,d_s,pe_20,d_isi,score,kl_eps,spectral_segment";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.dataset,
            self.model,
            self.checkpoint.map_or(String::new(), |c| c.to_string()),
            self.generation_length,
            self.d_d,
            self.d_s,
            opt(self.pe_20),
            opt(self.d_isi),
            self.score,
            self.kl_eps,
            self.spectral_segment
        );
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub length: usize,
    pub prediction: PredictionOptions,
    pub kl: KlOptions,
    /// Skip `PE_n` (reported missing); useful when its weight is zero.
    pub skip_prediction: bool,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            length: 40_000,
            prediction: PredictionOptions::default(),
            kl: KlOptions::default(),
            skip_prediction: false,
            seed: 0,
        }
    }
}

/// Per-channel Wasserstein distance between row-major `[T, d]` series,
/// averaged over channels.
pub fn state_space_distance(a: &[f64], b: &[f64], d: usize) -> Result<f64> {
    let mut s = 0.0;
    for c in 0..d {
        let ca: Vec<f64> = a.iter().skip(c).step_by(d).copied().collect();
        let cb: Vec<f64> = b.iter().skip(c).step_by(d).copied().collect();
        s += wasserstein_1d(&ca, &cb)?;
    }
    Ok(s / d as f64)
}

/// Per-channel averages of the spectral and interspike distances.
fn channel_measures(gen: &[f64], test: &[f64], d: usize) -> Result<(f64, usize, Option<f64>)> {
    let (mut ds, mut seg, mut isi, mut isi_ok) = (0.0, usize::MAX, 0.0, true);
    for c in 0..d {
        let ga: Vec<f64> = gen.iter().skip(c).step_by(d).copied().collect();
        let ta: Vec<f64> = test.iter().skip(c).step_by(d).copied().collect();
        let sd = spectral_distance(&ga, &ta)?;
        ds += sd.value;
        seg = seg.min(sd.segment);
        match isi_distance(&ga, &ta)? {
            Some(v) => isi += v,
            None => isi_ok = false,
        }
    }
    Ok((ds / d as f64, seg, isi_ok.then_some(isi / d as f64)))
}

/// Generates a long trajectory and evaluates every measure against `test`.
/// Returns the report and the generated series.
pub fn evaluate(
    model: &Model,
    train: &TimeSeriesDataset,
    test: &TimeSeriesDataset,
    label: &str,
    checkpoint: Option<usize>,
    opts: &EvalOptions,
) -> Result<(EvaluationReport, Vec<f64>)> {
    if train.dim != model.config.d_x || test.dim != model.config.d_x {
        return Err(DsrError::invalid("dataset dimension does not match the model"));
    }
    let sim = Simulator::new(model)?;
    let gen = generate_long(&sim, train, opts.length, opts.seed)?;
    if gen.iter().any(|v| !v.is_finite()) {
        return Err(DsrError::NonFinite("generated trajectory".into()));
    }
    let d = test.dim;
    let d_d = state_space_distance(&gen, &test.values, d)?;
    let (d_s, segment, d_isi) = channel_measures(&gen, &test.values, d)?;
    let pe = if opts.skip_prediction {
        None
    } else {
        Some(prediction_error(&sim, test, &opts.prediction)?)
    };
    let kl_eps = kl_usage(model, test, &opts.kl)?;
    let measures = Measures { d_d: Some(d_d), d_s: Some(d_s), pe, d_isi };
    let kind = test.kind()?;
    Ok((
        EvaluationReport {
            dataset: test.name.clone(),
            model: label.to_string(),
            checkpoint,
            generation_length: opts.length,
            d_d,
            d_s,
            pe_20: pe,
            d_isi,
            score: score(&measures, kind)?,
            kl_eps,
            spectral_segment: segment,
        },
        gen,
    ))
}
