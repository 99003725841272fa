//! Mutual-information delay selection and fixed-dimension delay embedding.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{DsrError, Result};

pub const DEFAULT_MAX_LAG: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub delay: usize,
    pub dimension: usize,
}

impl EmbeddingSpec {
    pub fn new(delay: usize, dimension: usize) -> Result<Self> {
        if delay == 0 || dimension == 0 {
            return Err(DsrError::invalid(format!(
                "embedding needs delay ≥ 1 and dimension ≥ 1, got {delay} and {dimension}"
            )));
        }
        Ok(Self { delay, dimension })
    }
}

/// Result of [`mi_delay`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MiDelay {
    pub lag: usize,
    /// Set when no strict minimum was found and `lag` fell back to `max_lag`.
    pub no_minimum: bool,
    /// `mi[τ]` for τ = 0..=max_lag+1, in nats.
    pub mi: Vec<f64>,
    pub bins: usize,
}

/// Equiprobable bin index of every sample: ranks cut into `bins` equal groups
/// (ties broken by position).
pub fn quantile_bins(x: &[f64], bins: usize) -> Vec<usize> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut out = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = rank * bins / n;
    }
    out
}

pub fn bin_count(n: usize) -> usize {
    ((n as f64 / 5.0).sqrt().ceil() as usize).max(2)
}

/// Plug-in MI estimate (nats) between the bin sequences `a` and `b`.
pub fn mutual_information(a: &[usize], b: &[usize], bins: usize) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let mut joint = vec![0u32; bins * bins];
    let mut pa = vec![0u32; bins];
    let mut pb = vec![0u32; bins];
    for (&i, &j) in a.iter().zip(b) {
        joint[i * bins + j] += 1;
        pa[i] += 1;
        pb[j] += 1;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j];
            if c > 0 {
                let c = c as f64;
                mi += c / nf * (c * nf / (pa[i] as f64 * pb[j] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// MI between `x_t` and `x_{t+lag}` under one shared binning.
pub fn lagged_mi(bins_of: &[usize], lag: usize, bins: usize) -> f64 {
    let n = bins_of.len();
    if lag >= n {
        return 0.0;
    }
    mutual_information(&bins_of[..n - lag], &bins_of[lag..], bins)
}

/// First strict local minimum of the lagged self-information over lags
/// `1..=max_lag`.
///
/// A lag whose MI is already within twice the plug-in estimator bias
/// `(bins − 1)² / (2N)` counts as the noise floor and is returned at once.
pub fn mi_delay(series: &[f64], max_lag: usize) -> Result<MiDelay> {
    if max_lag == 0 {
        return Err(DsrError::invalid("max_lag must be at least 1"));
    }
    if series.len() < 2 * max_lag {
        return Err(DsrError::invalid(format!(
            "series of length {} is shorter than 2·max_lag = {}",
            series.len(),
            2 * max_lag
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(DsrError::NonFinite("mi_delay input".into()));
    }
    let bins = bin_count(series.len());
    let b = quantile_bins(series, bins);
    let mi: Vec<f64> = (0..=max_lag + 1).map(|lag| lagged_mi(&b, lag, bins)).collect();
    for lag in 1..=max_lag {
        let n = (series.len() - lag) as f64;
        let floor = 2.0 * ((bins - 1) * (bins - 1)) as f64 / (2.0 * n);
        if mi[lag] <= floor {
            return Ok(MiDelay { lag, no_minimum: false, mi, bins });
        }
        if mi[lag - 1] > mi[lag] && mi[lag] < mi[lag + 1] {
            return Ok(MiDelay { lag, no_minimum: false, mi, bins });
        }
    }
    log::warn!("no strict mutual-information minimum up to lag {max_lag}");
    Ok(MiDelay {
        lag: max_lag,
        no_minimum: true,
        mi,
        bins,
    })
}

/// Rows `(x_t, x_{t+τ}, …, x_{t+(d−1)τ})` as a `[T − (d−1)τ, d]` tensor.
pub fn delay_embed(series: &[f64], spec: EmbeddingSpec) -> Result<Tensor> {
    let EmbeddingSpec { delay, dimension } = EmbeddingSpec::new(spec.delay, spec.dimension)?;
    let span = (dimension - 1) * delay;
    if series.len() <= span {
        return Err(DsrError::invalid(format!(
            "series of length {} too short for delay {delay} and dimension {dimension}",
            series.len()
        )));
    }
    let rows = series.len() - span;
    let mut data = Vec::with_capacity(rows * dimension);
    for t in 0..rows {
        for k in 0..dimension {
            data.push(series[t + k * delay]);
        }
    }
    Tensor::new(vec![rows, dimension], data)
}
