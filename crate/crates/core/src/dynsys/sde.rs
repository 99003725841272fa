//! Euler–Maruyama integration of additive-noise SDEs.

use super::ode::Trajectory;
use crate::error::{DsrError, Result};
use crate::rng::{self, Rng64};

/// `dz = drift(z) dt + diag(σ) dW`, with `σ_i = 0` on deterministic channels.
pub trait SdeSystem {
    fn dim(&self) -> usize;
    fn drift(&self, z: &[f64], out: &mut [f64]);
    /// Per-channel noise amplitude σ.
    fn diffusion(&self) -> Vec<f64>;
}

/// Runs `n_steps` Euler–Maruyama steps of size `dt` from `z0`, recording the
/// state before the first step and after every `record_every`-th step.
///
/// Standard-normal draws are taken only for channels with nonzero σ, in
/// channel order, once per step.
pub fn integrate_euler_maruyama<S: SdeSystem + ?Sized>(
    sys: &S,
    z0: &[f64],
    dt: f64,
    n_steps: usize,
    record_every: usize,
    rng: &mut Rng64,
) -> Result<Trajectory> {
    if dt <= 0.0 || !dt.is_finite() {
        return Err(DsrError::invalid(format!("time step must be positive, got {dt}")));
    }
    if record_every == 0 {
        return Err(DsrError::invalid("record interval must be positive"));
    }
    let n = sys.dim();
    if z0.len() != n {
        return Err(DsrError::invalid(format!(
            "initial state has {} components, system has {n}",
            z0.len()
        )));
    }
    let sigma = sys.diffusion();
    let stochastic: Vec<(usize, f64)> = sigma
        .iter()
        .enumerate()
        .filter(|(_, s)| **s != 0.0)
        .map(|(i, s)| (i, s * dt.sqrt()))
        .collect();
    let mut z = z0.to_vec();
    let mut f = vec![0.0; n];
    let mut states = Vec::with_capacity((n_steps / record_every + 1) * n);
    states.extend_from_slice(&z);
    for step in 1..=n_steps {
        sys.drift(&z, &mut f);
        for (zi, fi) in z.iter_mut().zip(&f) {
            *zi += fi * dt;
        }
        for &(i, amp) in &stochastic {
            z[i] += amp * rng::normal(rng);
        }
        if step % record_every == 0 {
            if !z.iter().all(|v| v.is_finite()) {
                return Err(DsrError::Integration {
                    t: step as f64 * dt,
                    reason: "state became non-finite".into(),
                });
            }
            states.extend_from_slice(&z);
        }
    }
    Ok(Trajectory {
        t0: 0.0,
        dt: dt * record_every as f64,
        dim: n,
        states,
    })
}

/// Forward Euler, the zero-noise reference.
pub fn integrate_euler<S: SdeSystem + ?Sized>(sys: &S, z0: &[f64], dt: f64, n_steps: usize) -> Vec<f64> {
    let n = sys.dim();
    let mut z = z0.to_vec();
    let mut f = vec![0.0; n];
    let mut out = z.clone();
    for _ in 0..n_steps {
        sys.drift(&z, &mut f);
        for i in 0..n {
            z[i] += f[i] * dt;
        }
        out.extend_from_slice(&z);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::systems::DoubleWell;

    struct Decay(f64);
    impl SdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn drift(&self, z: &[f64], out: &mut [f64]) {
            out[0] = -z[0];
        }
        fn diffusion(&self) -> Vec<f64> {
            vec![self.0]
        }
    }

    #[test]
    fn single_noise_free_step() {
        let mut rng = rng::stream(0, "t");
        let tr = integrate_euler_maruyama(&Decay(0.0), &[1.0], 0.2, 1, 1, &mut rng).unwrap();
        assert!((tr.state(1)[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_path() {
        let run = || {
            let mut rng = rng::stream(42, "em");
            integrate_euler_maruyama(&Decay(0.5), &[1.0], 0.01, 500, 1, &mut rng).unwrap()
        };
        assert_eq!(run().states, run().states);
    }

    #[test]
    fn zero_noise_equals_forward_euler_bitwise() {
        let sys = DoubleWell::with_noise_variance(0.0);
        let z0 = [0.3, -0.1, 0.2, 0.0, 0.7];
        let mut rng = rng::stream(1, "em");
        let em = integrate_euler_maruyama(&sys, &z0, 0.2, 300, 1, &mut rng).unwrap();
        let eu = integrate_euler(&sys, &z0, 0.2, 300);
        assert_eq!(em.states.len(), eu.len());
        assert!(em.states.iter().zip(&eu).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn bad_step_rejected() {
        let mut rng = rng::stream(0, "t");
        assert!(integrate_euler_maruyama(&Decay(0.0), &[1.0], 0.0, 1, 1, &mut rng).is_err());
        assert!(integrate_euler_maruyama(&Decay(0.0), &[1.0], -0.1, 1, 1, &mut rng).is_err());
    }
}
