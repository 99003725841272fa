//! Adaptive Dormand–Prince 5(4) integration with dense output.

use crate::error::{DsrError, Result};

/// Autonomous or time-dependent vector field `dy/dt = f(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

#[derive(Clone, Copy, Debug)]
pub struct Rk45Options {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    /// Steps below this size abort the integration.
    pub min_step: f64,
}

impl Default for Rk45Options {
    fn default() -> Self {
        Self {
            rtol: 1e-3,
            atol: 1e-6,
            max_step: f64::INFINITY,
            min_step: 1e-12,
        }
    }
}

/// Uniformly sampled trajectory, row-major `len × dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub dim: usize,
    pub states: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    /// Column `c` as a series.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.states.iter().skip(c).step_by(self.dim).copied().collect()
    }
}

const C: [f64; 6] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0];
const A: [[f64; 5]; 6] = [
    [0.0; 5],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ],
];
const B: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
/// Difference between the 5th- and embedded 4th-order weights (7 stages, FSAL).
const E: [f64; 7] = [
    -71.0 / 57600.0,
    0.0,
    71.0 / 16695.0,
    -71.0 / 1920.0,
    17253.0 / 339200.0,
    -22.0 / 525.0,
    1.0 / 40.0,
];
/// Coefficients of the 4th-order continuous extension.
const P: [[f64; 4]; 7] = [
    [
        1.0,
        -8048581381.0 / 2820520608.0,
        8663915743.0 / 2820520608.0,
        -12715105075.0 / 11282082432.0,
    ],
    [0.0, 0.0, 0.0, 0.0],
    [
        0.0,
        131558114200.0 / 32700410799.0,
        -68118460800.0 / 10900136933.0,
        87487479700.0 / 32700410799.0,
    ],
    [
        0.0,
        -1754552775.0 / 470086768.0,
        14199869525.0 / 1410260304.0,
        -10690763975.0 / 1880347072.0,
    ],
    [
        0.0,
        127303824393.0 / 49829197408.0,
        -318862633887.0 / 49829197408.0,
        701980252875.0 / 199316789632.0,
    ],
    [
        0.0,
        -282668133.0 / 205662961.0,
        2019193451.0 / 616988883.0,
        -1453857185.0 / 822651844.0,
    ],
    [
        0.0,
        40617522.0 / 29380423.0,
        -110615467.0 / 29380423.0,
        69997945.0 / 29380423.0,
    ],
];

fn rms_norm(v: &[f64], scale: &[f64]) -> f64 {
    let s: f64 = v.iter().zip(scale).map(|(a, s)| (a / s).powi(2)).sum();
    (s / v.len() as f64).sqrt()
}

fn initial_step<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    opts: &Rk45Options,
) -> f64 {
    let n = y0.len();
    let scale: Vec<f64> = y0.iter().map(|y| opts.atol + y.abs() * opts.rtol).collect();
    let d0 = rms_norm(y0, &scale);
    let d1 = rms_norm(f0, &scale);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let mut f1 = vec![0.0; n];
    sys.rhs(t0 + h0, &y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms_norm(&diff, &scale) / h0;
    let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    (100.0 * h0).min(h1).min(opts.max_step)
}

/// Integrates from `t0` and returns `n_samples` states at
/// `t_first + k·sample_dt`, with `t_first ≥ t0`.
pub fn integrate_rk45<S: OdeSystem + ?Sized>(
    sys: &S,
    y0: &[f64],
    t0: f64,
    t_first: f64,
    sample_dt: f64,
    n_samples: usize,
    opts: &Rk45Options,
) -> Result<Trajectory> {
    let n = sys.dim();
    if y0.len() != n {
        return Err(DsrError::invalid(format!(
            "initial state has {} components, system has {n}",
            y0.len()
        )));
    }
    if sample_dt <= 0.0 || t_first < t0 {
        return Err(DsrError::invalid("sampling grid must be forward in time"));
    }
    let mut states = Vec::with_capacity(n_samples * n);
    let t_end = t_first + sample_dt * n_samples.saturating_sub(1) as f64;
    let mut next = 0usize;
    let sample_time = |k: usize| t_first + k as f64 * sample_dt;

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    sys.rhs(t, &y, &mut k[0]);
    let mut h = initial_step(sys, t, &y, &k[0], opts);
    let mut y_new = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut scale = vec![0.0; n];

    while next < n_samples && sample_time(next) <= t {
        states.extend_from_slice(&y);
        next += 1;
    }

    while next < n_samples {
        if !y.iter().all(|v| v.is_finite()) {
            return Err(DsrError::Integration {
                t,
                reason: "state became non-finite".into(),
            });
        }
        h = h.min(opts.max_step).min((t_end - t).max(opts.min_step));
        if h < opts.min_step {
            return Err(DsrError::Integration {
                t,
                reason: format!("step size underflow ({h:e})"),
            });
        }
        for s in 1..6 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += h * A[s][j] * kj[i];
                }
                tmp[i] = acc;
            }
            sys.rhs(t + C[s] * h, &tmp, &mut k[s]);
        }
        for i in 0..n {
            y_new[i] = y[i] + h * (0..6).map(|s| B[s] * k[s][i]).sum::<f64>();
        }
        sys.rhs(t + h, &y_new, &mut k[6]);
        for i in 0..n {
            err[i] = h * (0..7).map(|s| E[s] * k[s][i]).sum::<f64>();
            scale[i] = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
        }
        let err_norm = rms_norm(&err, &scale);
        if err_norm <= 1.0 && err_norm.is_finite() {
            let t_new = t + h;
            while next < n_samples && sample_time(next) <= t_new {
                let x = (sample_time(next) - t) / h;
                let powers = [x, x * x, x * x * x, x * x * x * x];
                for i in 0..n {
                    let q: f64 = (0..7)
                        .map(|s| k[s][i] * (0..4).map(|p| P[s][p] * powers[p]).sum::<f64>())
                        .sum();
                    tmp[i] = y[i] + h * q;
                }
                states.extend_from_slice(&tmp);
                next += 1;
            }
            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            k.swap(0, 6);
            let factor = if err_norm == 0.0 {
                10.0
            } else {
                (0.9 * err_norm.powf(-0.2)).min(10.0)
            };
            h *= factor;
        } else {
            let factor = if err_norm.is_finite() {
                (0.9 * err_norm.powf(-0.2)).max(0.2)
            } else {
                0.2
            };
            h *= factor;
        }
    }
    Ok(Trajectory {
        t0: t_first,
        dt: sample_dt,
        dim: n,
        states,
    })
}
