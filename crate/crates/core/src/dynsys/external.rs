//! Preprocessing of the external neuron and ECG recordings.

use serde_json::json;

use super::dataset::{normalize_and_split, DatasetKind, TimeSeriesDataset};
use crate::error::{DsrError, Result};
use crate::signal::gaussian_smooth;

pub const NEURON_RATE_HZ: f64 = 5000.0;
pub const NEURON_DISCARD_HEAD: usize = 600;
pub const NEURON_DISCARD_TAIL: usize = 1200;
pub const NEURON_SMOOTH_MS: f64 = 0.2;
pub const ECG_RATE_HZ: f64 = 700.0;
pub const ECG_DOWNSAMPLE: usize = 4;

/// Turns a raw single-channel recording into normalized `(train, test)` halves.
///
/// Neuron: trims the unstimulated head and tail, smooths with a Gaussian of
/// 0.2 ms. ECG: takes every fourth sample. `raw` is the whole recording
/// (train and test halves back to back).
pub fn preprocess_external(
    raw: &[f64],
    kind: DatasetKind,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(DsrError::NonFinite(format!("{kind} recording contains NaN or inf")));
    }
    match kind {
        DatasetKind::Neuron => {
            let discard = NEURON_DISCARD_HEAD + NEURON_DISCARD_TAIL;
            if raw.len() < discard + 4 {
                return Err(DsrError::invalid(format!(
                    "neuron recording of {} samples is shorter than the {discard}-sample discard window",
                    raw.len()
                )));
            }
            let kept = &raw[NEURON_DISCARD_HEAD..raw.len() - NEURON_DISCARD_TAIL];
            let sigma = NEURON_SMOOTH_MS * 1e-3 * NEURON_RATE_HZ;
            let smooth = gaussian_smooth(kept, sigma);
            let params = json!({
                "raw_length": raw.len(), "sample_rate_hz": NEURON_RATE_HZ,
                "discard_head": NEURON_DISCARD_HEAD, "discard_tail": NEURON_DISCARD_TAIL,
                "smoothing_sigma_samples": sigma,
            });
            normalize_and_split("neuron", 1.0 / NEURON_RATE_HZ, 1, smooth, None, params)
        }
        DatasetKind::Ecg => {
            if raw.len() < 2 * ECG_DOWNSAMPLE * 2 {
                return Err(DsrError::invalid(format!(
                    "ecg recording of {} samples is too short",
                    raw.len()
                )));
            }
            let half = raw.len() / 2;
            let mut down: Vec<f64> = raw[..half].iter().step_by(ECG_DOWNSAMPLE).copied().collect();
            down.extend(raw[half..2 * half].iter().step_by(ECG_DOWNSAMPLE));
            let rate = ECG_RATE_HZ / ECG_DOWNSAMPLE as f64;
            let params = json!({
                "raw_length": raw.len(), "raw_rate_hz": ECG_RATE_HZ,
                "downsample": ECG_DOWNSAMPLE, "sample_rate_hz": rate,
            });
            normalize_and_split("ecg", 1.0 / rate, 1, down, None, params)
        }
        other => Err(DsrError::invalid(format!(
            "'{other}' is a synthetic benchmark; use generate_dataset"
        ))),
    }
}

/// Reads a recording stored as one number per line (blank lines and `#`
/// comments skipped; the first field of comma-separated rows is used).
pub fn read_text_series(path: &std::path::Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let field = line.split([',', ' ', '\t']).find(|s| !s.is_empty()).unwrap_or("");
        match field.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if out.is_empty() => continue,
            Err(_) => {
                return Err(DsrError::Format {
                    path: path.to_path_buf(),
                    reason: format!("line {}: cannot parse '{field}'", i + 1),
                })
            }
        }
    }
    Ok(out)
}
