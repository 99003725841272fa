//! Distribution, spectrum and spike-timing distances and the composite score.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dynsys::DatasetKind;
use crate::error::{DsrError, Result};
use crate::signal::gaussian_smooth;

/// Welch segment length used for power spectra.
pub const WELCH_SEGMENT: usize = 4096;
/// Gaussian smoothing of the spectra, in frequency bins.
pub const SPECTRUM_SMOOTHING: f64 = 2.0;
pub const PEAK_HEIGHT: f64 = 2.0;
pub const PEAK_PROMINENCE: f64 = 1.0;

/// First Wasserstein distance between two empirical distributions,
/// `∫|F_u − F_v|`.
pub fn wasserstein_1d(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.is_empty() || v.is_empty() {
        return Err(DsrError::invalid("wasserstein_1d: empty sample set"));
    }
    if u.iter().chain(v).any(|x| !x.is_finite()) {
        return Err(DsrError::NonFinite("wasserstein_1d input".into()));
    }
    let mut a = u.to_vec();
    let mut b = v.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut dist = 0.0;
    let mut prev = a[0].min(b[0]);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        dist += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(dist)
}

/// Hellinger distance `(1/√2)·‖√p − √q‖₂` of two distributions.
pub fn hellinger(p: &[f64], q: &[f64]) -> f64 {
    let s: f64 = p
        .iter()
        .zip(q)
        .map(|(a, b)| (a.max(0.0).sqrt() - b.max(0.0).sqrt()).powi(2))
        .sum();
    (0.5 * s).sqrt().min(1.0)
}

/// One-sided Welch power spectrum (arbitrary scale).
pub struct Welch {
    pub segment: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Welch {
    pub fn new(segment: usize) -> Self {
        // periodic Hann window
        let window = (0..segment)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / segment as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(segment);
        Self { segment, window, fft }
    }

    /// Segments with 50% overlap, each mean-removed and Hann-windowed.
    pub fn psd(&self, x: &[f64]) -> Vec<f64> {
        let n = self.segment;
        let step = (n / 2).max(1);
        let bins = n / 2 + 1;
        let mut acc = vec![0.0; bins];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut start = 0;
        while start + n <= x.len() {
            let seg = &x[start..start + n];
            let mean = seg.iter().sum::<f64>() / n as f64;
            for (k, c) in buf.iter_mut().enumerate() {
                *c = Complex::new((seg[k] - mean) * self.window[k], 0.0);
            }
            self.fft.process(&mut buf);
            for (a, c) in acc.iter_mut().zip(&buf) {
                *a += c.norm_sqr();
            }
            start += step;
        }
        acc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralDistance {
    pub value: f64,
    pub segment: usize,
    /// The segment was shortened because a series was too short.
    pub reduced: bool,
}

fn normalized_spectrum(w: &Welch, x: &[f64]) -> Vec<f64> {
    let p = gaussian_smooth(&w.psd(x), SPECTRUM_SMOOTHING);
    let s: f64 = p.iter().sum();
    if s > 0.0 {
        p.iter().map(|v| v / s).collect()
    } else {
        vec![1.0 / p.len() as f64; p.len()]
    }
}

/// Hellinger distance between smoothed, normalized Welch spectra.
pub fn spectral_distance(a: &[f64], b: &[f64]) -> Result<SpectralDistance> {
    let shortest = a.len().min(b.len());
    if shortest < 2 {
        return Err(DsrError::invalid("spectral_distance: series shorter than two samples"));
    }
    let (segment, reduced) = if shortest >= WELCH_SEGMENT {
        (WELCH_SEGMENT, false)
    } else {
        let p = 1usize << (usize::BITS - 1 - shortest.leading_zeros());
        log::warn!("spectral_distance: segment reduced to {p} for series of {shortest}");
        (p, true)
    };
    let w = Welch::new(segment);
    let value = hellinger(&normalized_spectrum(&w, a), &normalized_spectrum(&w, b));
    Ok(SpectralDistance { value, segment, reduced })
}

/// Topographic prominence of the sample at `p`: its height above the
/// higher of the two lowest points between it and higher terrain (or the
/// series edge) on either side.
pub fn prominence(x: &[f64], p: usize) -> f64 {
    let h = x[p];
    let mut left = h;
    for &v in x[..p].iter().rev() {
        if v > h {
            break;
        }
        left = left.min(v);
    }
    let mut right = h;
    for &v in &x[p + 1..] {
        if v > h {
            break;
        }
        right = right.min(v);
    }
    h - left.max(right)
}

/// Strict local maxima at least `height` high with prominence at least
/// `min_prominence`.
pub fn find_peaks(x: &[f64], height: f64, min_prominence: f64) -> Vec<usize> {
    (1..x.len().saturating_sub(1))
        .filter(|&i| x[i] > x[i - 1] && x[i] > x[i + 1] && x[i] >= height)
        .filter(|&i| prominence(x, i) >= min_prominence)
        .collect()
}

/// Successive index differences between detected peaks.
pub fn interspike_intervals(x: &[f64]) -> Vec<f64> {
    let peaks = find_peaks(x, PEAK_HEIGHT, PEAK_PROMINENCE);
    peaks.windows(2).map(|w| (w[1] - w[0]) as f64).collect()
}

/// Wasserstein distance between interspike-interval distributions, `None`
/// when either series has fewer than two peaks.
pub fn isi_distance(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    let (ia, ib) = (interspike_intervals(a), interspike_intervals(b));
    if ia.is_empty() || ib.is_empty() {
        return Ok(None);
    }
    wasserstein_1d(&ia, &ib).map(Some)
}

/// Reconstruction measures of one model; `None` marks a missing value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Measures {
    pub d_d: Option<f64>,
    pub d_s: Option<f64>,
    pub pe: Option<f64>,
    pub d_isi: Option<f64>,
}

/// Score weights `(D_d, D_s, PE_20, D_ISI)` per benchmark.
pub fn score_weights(kind: DatasetKind) -> [f64; 4] {
    match kind {
        DatasetKind::Lorenz | DatasetKind::Cell => [1.0, 1.0, 1.0, 0.0],
        DatasetKind::DoubleWell | DatasetKind::Rnn | DatasetKind::Neuron => [1.0, 1.0, 0.2, 0.0],
        DatasetKind::Ecg => [1.0, 1.0, 1.0, 0.05],
    }
}

/// Weighted sum of the measures; a missing measure is allowed only at
/// zero weight.
pub fn score(m: &Measures, kind: DatasetKind) -> Result<f64> {
    let w = score_weights(kind);
    let vals = [("D_d", m.d_d), ("D_s", m.d_s), ("PE_20", m.pe), ("D_ISI", m.d_isi)];
    let mut s = 0.0;
    for (wi, (name, v)) in w.iter().zip(vals) {
        match v {
            Some(v) if *wi != 0.0 => s += wi * v,
            Some(_) => {}
            None if *wi == 0.0 => {}
            None => return Err(DsrError::MissingMeasure(name)),
        }
    }
    Ok(s)
}
