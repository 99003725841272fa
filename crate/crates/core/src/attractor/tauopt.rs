use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{DsrError, Result};

/// Cap on τ_opt: the longest trajectory segment used in training.
pub const TAU_OPT_MAX: f64 = 200.0;

/// Predictability time `log 2 / λ` for a positive exponent, else the cap.
pub fn tau_opt(lambda_max: f64) -> f64 {
    if lambda_max > 0.0 {
        (std::f64::consts::LN_2 / lambda_max).min(TAU_OPT_MAX)
    } else {
        TAU_OPT_MAX
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub tau: f64,
    /// Slope of the interpolated τ_opt curve at the crossing.
    pub slope: f64,
    pub attracting: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauOptCurve {
    pub tau: Vec<f64>,
    pub lambda_max: Vec<f64>,
    pub tau_opt: Vec<f64>,
    pub crossings: Vec<Crossing>,
    /// Attracting fixed points of `τ ↦ τ_opt(τ)`.
    pub fixed_points: Vec<f64>,
}

impl TauOptCurve {
    pub fn csv(&self) -> String {
        let mut s = String::from("tau,lambda_max,tau_opt\n");
        for i in 0..self.tau.len() {
            let _ = writeln!(s, "{},{},{}", self.tau[i], self.lambda_max[i], self.tau_opt[i]);
        }
        s
    }
}

/// Builds the curve from `(τ, λ_max)` pairs and locates the diagonal
/// crossings of its piecewise-linear interpolation. Crossings with slope
/// strictly below 1 are attracting.
pub fn tau_opt_curve(points: &[(f64, f64)]) -> Result<TauOptCurve> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.dedup_by(|a, b| a.0 == b.0);
    if pts.len() < 2 {
        return Err(DsrError::invalid("tau_opt_curve needs at least two distinct τ values"));
    }
    if pts.iter().any(|p| !p.0.is_finite() || p.1.is_nan()) {
        return Err(DsrError::NonFinite("tau_opt_curve input".into()));
    }
    let tau: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let lambda_max: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let y: Vec<f64> = lambda_max.iter().map(|&l| tau_opt(l)).collect();
    let g: Vec<f64> = y.iter().zip(&tau).map(|(a, b)| a - b).collect();
    let slope = |i: usize| (y[i + 1] - y[i]) / (tau[i + 1] - tau[i]);
    let mut crossings = Vec::new();
    let last = tau.len() - 1;
    for i in 0..=last {
        if g[i] == 0.0 {
            let s = slope(i.min(last - 1));
            crossings.push(Crossing { tau: tau[i], slope: s, attracting: s < 1.0 });
        }
        if i < last && g[i] * g[i + 1] < 0.0 {
            let s = slope(i);
            let t = tau[i] + g[i] / (g[i] - g[i + 1]) * (tau[i + 1] - tau[i]);
            crossings.push(Crossing { tau: t, slope: s, attracting: s < 1.0 });
        }
    }
    let fixed_points = crossings.iter().filter(|c| c.attracting).map(|c| c.tau).collect();
    Ok(TauOptCurve { tau, lambda_max, tau_opt: y, crossings, fixed_points })
}
