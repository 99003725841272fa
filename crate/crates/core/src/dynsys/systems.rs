//! Benchmark systems with their published parameter values.

use serde::{Deserialize, Serialize};

use super::ode::OdeSystem;
use super::sde::SdeSystem;
use crate::rng::{self, Rng64};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Lorenz {
    pub s: f64,
    pub r: f64,
    pub b: f64,
}

impl Default for Lorenz {
    fn default() -> Self {
        Self {
            s: 10.0,
            r: 28.0,
            b: 2.667,
        }
    }
}

impl OdeSystem for Lorenz {
    fn dim(&self) -> usize {
        3
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let (x, yy, z) = (y[0], y[1], y[2]);
        dy[0] = self.s * (yy - x);
        dy[1] = self.r * x - yy - x * z;
        dy[2] = x * yy - self.b * z;
    }
}

/// Two coupled mitotic oscillators (six variables: C1, M1, X1, C2, M2, X2).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CellCycle {
    pub v_m1: f64,
    pub v_i: f64,
    pub k_small: f64,
    pub v_2: f64,
    pub v_m3: f64,
    pub v_4: f64,
    pub k_c: f64,
    pub v_d: f64,
    pub k_d: f64,
    pub k_deg: f64,
    pub k_im: f64,
}

impl Default for CellCycle {
    fn default() -> Self {
        Self {
            v_m1: 0.3,
            v_i: 0.05,
            k_small: 0.01,
            v_2: 0.15,
            v_m3: 0.1,
            v_4: 0.05,
            k_c: 0.5,
            v_d: 0.025,
            k_d: 0.02,
            k_deg: 0.001,
            k_im: 0.65,
        }
    }
}

impl CellCycle {
    /// Right-hand side of one oscillator driven by the other's M.
    fn oscillator(&self, c: f64, m: f64, x: f64, m_other: f64) -> [f64; 3] {
        let k = self.k_small;
        let v1 = c / (self.k_c + c) * self.v_m1;
        let v3 = m * self.v_m3;
        [
            self.v_i * self.k_im / (self.k_im + m_other)
                - self.v_d * x * c / (self.k_d + c)
                - self.k_deg * c,
            v1 * (1.0 - m) / (k + 1.0 - m) - self.v_2 * m / (k + m),
            v3 * (1.0 - x) / (k + 1.0 - x) - self.v_4 * x / (k + x),
        ]
    }
}

impl OdeSystem for CellCycle {
    fn dim(&self) -> usize {
        6
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let a = self.oscillator(y[0], y[1], y[2], y[4]);
        let b = self.oscillator(y[3], y[4], y[5], y[1]);
        dy[..3].copy_from_slice(&a);
        dy[3..].copy_from_slice(&b);
    }
}

/// Bistable cubic SDE in `z1` followed by four exponential smoothing stages.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DoubleWell {
    pub alpha: f64,
    /// Variance σ² of the additive noise on `z1`.
    pub noise_variance: f64,
}

impl Default for DoubleWell {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            noise_variance: 0.2,
        }
    }
}

impl DoubleWell {
    pub fn with_noise_variance(noise_variance: f64) -> Self {
        Self {
            noise_variance,
            ..Self::default()
        }
    }
}

impl SdeSystem for DoubleWell {
    fn dim(&self) -> usize {
        5
    }

    fn drift(&self, z: &[f64], out: &mut [f64]) {
        out[0] = -z[0] * z[0] * z[0] + z[0];
        for i in 1..5 {
            out[i] = self.alpha * (z[i - 1] - z[i]);
        }
    }

    fn diffusion(&self) -> Vec<f64> {
        let mut s = vec![0.0; 5];
        s[0] = self.noise_variance.sqrt();
        s
    }
}

/// How the connectivity variance of [`ChaoticRnn`] scales with `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectivityScaling {
    /// `Var J_ij = g / n²`.
    GOverNSquared,
    /// `Var J_ij = g² / n`, the classical chaotic-network convention.
    GSquaredOverN,
}

impl ConnectivityScaling {
    pub fn variance(self, g: f64, n: usize) -> f64 {
        let n = n as f64;
        match self {
            Self::GOverNSquared => g / (n * n),
            Self::GSquaredOverN => g * g / n,
        }
    }
}

/// Randomly connected rate network `ḣ = −h + J·tanh(h)`.
#[derive(Clone, Debug)]
pub struct ChaoticRnn {
    pub n: usize,
    pub g: f64,
    pub scaling: ConnectivityScaling,
    /// Row-major `n × n`.
    pub j: Vec<f64>,
}

impl ChaoticRnn {
    pub fn sample(n: usize, g: f64, scaling: ConnectivityScaling, rng: &mut Rng64) -> Self {
        let sd = scaling.variance(g, n).sqrt();
        let j = (0..n * n).map(|_| sd * rng::normal(rng)).collect();
        Self { n, g, scaling, j }
    }
}

impl OdeSystem for ChaoticRnn {
    fn dim(&self) -> usize {
        self.n
    }

    fn rhs(&self, _t: f64, h: &[f64], dh: &mut [f64]) {
        let phi: Vec<f64> = h.iter().map(|v| v.tanh()).collect();
        for (i, (d, hi)) in dh.iter_mut().zip(h).enumerate() {
            let row = &self.j[i * self.n..(i + 1) * self.n];
            *d = -hi + row.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::ode::{integrate_rk45, Rk45Options};
    use crate::dynsys::sde::integrate_euler;

    #[test]
    fn lorenz_stays_bounded() {
        let tr = integrate_rk45(
            &Lorenz::default(),
            &[1.0, 1.0, 1.0],
            0.0,
            0.0,
            0.05,
            2001,
            &Rk45Options::default(),
        )
        .unwrap();
        let max_x = tr.channel(0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_x < 25.0 && max_x > 10.0, "max |x| = {max_x}");
    }

    #[test]
    fn double_well_skeleton_has_two_attracting_states() {
        let sys = DoubleWell::with_noise_variance(0.0);
        let mut seen_pos = false;
        let mut seen_neg = false;
        for k in 0..21 {
            let z1 = -2.0 + 0.2 * k as f64;
            if z1.abs() < 1e-9 {
                continue;
            }
            for &rest in &[-1.5, 0.0, 1.5] {
                let z0 = [z1, rest, rest, -rest, rest];
                let path = integrate_euler(&sys, &z0, 0.2, 2000);
                let last = &path[path.len() - 5..];
                let target = z1.signum();
                for v in last {
                    assert!((v - target).abs() < 1e-6, "{z0:?} -> {last:?}");
                }
                seen_pos |= target > 0.0;
                seen_neg |= target < 0.0;
            }
        }
        assert!(seen_pos && seen_neg);
        // ±0.5 converge to ±1
        for s in [0.5, -0.5] {
            let path = integrate_euler(&sys, &[s; 5], 0.2, 1000);
            assert!((path[path.len() - 1] - s.signum()).abs() < 1e-6);
        }
        let mut f = [0.0; 5];
        for root in [-1.0, 0.0, 1.0] {
            sys.drift(&[root; 5], &mut f);
            assert!(f.iter().all(|v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn rnn_connectivity_variance() {
        let mut rng = rng::stream(5, "rnn-connectivity");
        let net = ChaoticRnn::sample(1000, 2.0, ConnectivityScaling::GOverNSquared, &mut rng);
        let n = net.j.len() as f64;
        let mean = net.j.iter().sum::<f64>() / n;
        let var = net.j.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let want = 2.0 / 1e6;
        assert!((var - want).abs() / want < 0.1, "var {var}");
    }

    #[test]
    fn cell_cycle_drift_is_finite_on_unit_box() {
        let sys = CellCycle::default();
        let mut dy = [0.0; 6];
        for k in 0..=10 {
            let v = k as f64 / 10.0;
            sys.rhs(0.0, &[v; 6], &mut dy);
            assert!(dy.iter().all(|d| d.is_finite()));
        }
    }
}
