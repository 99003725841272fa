//! Attractors of a model's deterministic skeleton, maximal Lyapunov
//! exponents and the τ_opt diagnostic of the forcing interval.

mod lyapunov;
mod tauopt;

pub use lyapunov::{forced_lyapunov, max_lyapunov};
pub use tauopt::{tau_opt, tau_opt_curve, Crossing, TauOptCurve, TAU_OPT_MAX};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::dynsys::dataset::TimeSeriesDataset;
use crate::dynsys::SdeSystem;
use crate::error::{DsrError, Result};
use crate::models::Surrogate;
use crate::rng;

/// A deterministic map `z ↦ F(z)`.
pub trait Map {
    fn dim(&self) -> usize;
    fn apply(&self, z: &[f64], out: &mut [f64]);
}

/// Noise-free evolution of a surrogate model.
pub struct Skeleton<'a, S: ?Sized> {
    model: &'a S,
    zeros: Vec<f64>,
}

impl<'a, S: Surrogate + ?Sized> Skeleton<'a, S> {
    pub fn new(model: &'a S) -> Self {
        Self { zeros: vec![0.0; model.noise_dim()], model }
    }
}

impl<S: Surrogate + ?Sized> Map for Skeleton<'_, S> {
    fn dim(&self) -> usize {
        self.model.state_dim()
    }
    fn apply(&self, z: &[f64], out: &mut [f64]) {
        self.model.step(z, &self.zeros, out);
    }
}

/// Drift of an SDE integrated by `substeps` forward-Euler steps of `dt`,
/// i.e. the zero-noise skeleton at one sampling period.
pub struct EulerFlow<'a, S: ?Sized> {
    pub system: &'a S,
    pub dt: f64,
    pub substeps: usize,
}

impl<S: SdeSystem + ?Sized> Map for EulerFlow<'_, S> {
    fn dim(&self) -> usize {
        self.system.dim()
    }
    fn apply(&self, z: &[f64], out: &mut [f64]) {
        let mut f = vec![0.0; z.len()];
        out.copy_from_slice(z);
        for _ in 0..self.substeps {
            self.system.drift(out, &mut f);
            for (o, d) in out.iter_mut().zip(&f) {
                *o += d * self.dt;
            }
        }
    }
}

/// Closure-backed map, mostly for tests and analytic systems.
pub struct FnMap<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64])> Map for FnMap<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, z: &[f64], out: &mut [f64]) {
        (self.f)(z, out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttractorClass {
    Chaotic,
    LimitCycle,
    FixedPoint,
}

impl AttractorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Chaotic => "chaotic",
            Self::LimitCycle => "limit_cycle",
            Self::FixedPoint => "fixed_point",
        }
    }
}

/// Chaotic for a positive exponent, otherwise a fixed point when the
/// trajectory's spread is below `tol`, otherwise a limit cycle.
pub fn classify(spread: f64, lambda_max: f64, tol: f64) -> AttractorClass {
    if lambda_max > 0.0 {
        AttractorClass::Chaotic
    } else if spread < tol {
        AttractorClass::FixedPoint
    } else {
        AttractorClass::LimitCycle
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttractorOptions {
    pub init_points: usize,
    pub warmup: usize,
    pub length: usize,
    /// Final points kept per trajectory for the nearest-point distances.
    pub compare_points: usize,
    pub quantile: f64,
    pub tol_fixed: f64,
    pub tol_other: f64,
    pub lyapunov_steps: usize,
    pub lyapunov_burn_in: usize,
    pub delta0: f64,
    pub seed: u64,
}

impl Default for AttractorOptions {
    fn default() -> Self {
        Self {
            init_points: 100,
            warmup: 1000,
            length: 20_000,
            compare_points: 2000,
            quantile: 0.8,
            tol_fixed: 1e-5,
            tol_other: 1e-1,
            lyapunov_steps: 1000,
            lyapunov_burn_in: 0,
            delta0: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attractor {
    pub class: AttractorClass,
    pub lambda_max: f64,
    pub basin_fraction: f64,
    /// Indices of the initial points that converged here.
    pub members: Vec<usize>,
    /// Largest per-coordinate range over the representative trajectory.
    pub spread: f64,
    /// Final stretch of the representative trajectory.
    pub trajectory: Vec<Vec<f64>>,
}

impl Attractor {
    /// Coordinate-wise mean of the representative trajectory.
    pub fn center(&self) -> Vec<f64> {
        let d = self.trajectory.first().map_or(0, Vec::len);
        let mut c = vec![0.0; d];
        for p in &self.trajectory {
            for (a, v) in c.iter_mut().zip(p) {
                *a += v;
            }
        }
        let n = self.trajectory.len().max(1) as f64;
        c.iter_mut().for_each(|v| *v /= n);
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttractorReport {
    pub options: AttractorOptions,
    pub attractors: Vec<Attractor>,
}

impl AttractorReport {
    /// Long-format plotting table: `attractor,step,z0,z1,…`.
    pub fn trajectories_csv(&self) -> String {
        let d = self
            .attractors
            .first()
            .and_then(|a| a.trajectory.first())
            .map_or(0, Vec::len);
        let mut s = String::from("attractor,step");
        for i in 0..d {
            let _ = write!(s, ",z{i}");
        }
        s.push('\n');
        for (k, a) in self.attractors.iter().enumerate() {
            for (t, p) in a.trajectory.iter().enumerate() {
                let _ = write!(s, "{k},{t}");
                for v in p {
                    let _ = write!(s, ",{v}");
                }
                s.push('\n');
            }
        }
        s
    }
}

struct Run {
    points: Vec<Vec<f64>>,
    spread: f64,
    last: Vec<f64>,
}

fn simulate<M: Map + ?Sized>(map: &M, z0: &[f64], opts: &AttractorOptions) -> Result<Run> {
    let d = map.dim();
    if z0.len() != d {
        return Err(DsrError::shape("find_attractors", format!("initial point of {} for dimension {d}", z0.len())));
    }
    let mut z = z0.to_vec();
    let mut next = vec![0.0; d];
    for _ in 0..opts.warmup {
        map.apply(&z, &mut next);
        std::mem::swap(&mut z, &mut next);
    }
    // a contiguous tail rather than a strided sample, so that periodic
    // orbits are not aliased onto a subset of their phases
    let keep_from = opts.length.saturating_sub(opts.compare_points.max(1));
    let (mut lo, mut hi) = (z.clone(), z.clone());
    let mut points = Vec::with_capacity(opts.length - keep_from);
    for t in 0..opts.length {
        if t >= keep_from {
            points.push(z.clone());
        }
        map.apply(&z, &mut next);
        std::mem::swap(&mut z, &mut next);
        for i in 0..d {
            lo[i] = lo[i].min(z[i]);
            hi[i] = hi[i].max(z[i]);
        }
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(DsrError::NonFinite("skeleton trajectory escaped".into()));
    }
    let spread = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
    Ok(Run { points, spread, last: z })
}

/// Linear-interpolation quantile of unsorted values.
fn quantile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < v.len() {
        v[i] * (1.0 - frac) + v[i + 1] * frac
    } else {
        v[i]
    }
}

/// `q`-quantile over the points of `a` of the distance to the nearest
/// point of `b`.
pub fn directed_distance(a: &[Vec<f64>], b: &[Vec<f64>], q: f64) -> f64 {
    let nearest: Vec<f64> = a
        .iter()
        .map(|p| {
            b.iter()
                .map(|r| p.iter().zip(r).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    quantile(nearest, q)
}

/// `max(d_{a→b}, d_{b→a})`.
pub fn attractor_distance(a: &[Vec<f64>], b: &[Vec<f64>], q: f64) -> f64 {
    directed_distance(a, b, q).max(directed_distance(b, a, q))
}

/// Simulates the skeleton from every initial point, discards the warmup,
/// merges trajectories closer than the tolerance (the fixed-point tolerance
/// when either side has collapsed) and classifies each attractor.
pub fn find_attractors<M: Map + ?Sized>(
    map: &M,
    inits: &[Vec<f64>],
    opts: &AttractorOptions,
) -> Result<Vec<Attractor>> {
    if inits.is_empty() {
        return Err(DsrError::invalid("find_attractors needs at least one initial point"));
    }
    let runs: Vec<Run> = inits.iter().map(|z0| simulate(map, z0, opts)).collect::<Result<_>>()?;
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        let fixed = run.spread < opts.tol_fixed;
        let home = groups.iter_mut().find(|g| {
            let rep = &runs[g[0]];
            let tol = if fixed || rep.spread < opts.tol_fixed { opts.tol_fixed } else { opts.tol_other };
            attractor_distance(&run.points, &rep.points, opts.quantile) <= tol
        });
        match home {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    let n = inits.len() as f64;
    let mut out = Vec::with_capacity(groups.len());
    for (k, members) in groups.into_iter().enumerate() {
        let rep = &runs[members[0]];
        let mut r = rng::substream(opts.seed, "lyapunov", k as u64);
        let lambda_max = max_lyapunov(map, &rep.last, opts.lyapunov_steps, opts.lyapunov_burn_in, opts.delta0, &mut r)?;
        out.push(Attractor {
            class: classify(rep.spread, lambda_max, opts.tol_fixed),
            lambda_max,
            basin_fraction: members.len() as f64 / n,
            members,
            spread: rep.spread,
            trajectory: rep.points.clone(),
        });
    }
    Ok(out)
}

/// `count` states of the encoder-embedded training trajectory at random
/// time indices.
pub fn initial_points(
    states_at: impl Fn(&Tensor, &[usize]) -> Result<Vec<Vec<f64>>>,
    train: &TimeSeriesDataset,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut r = rng::stream(seed, "attractor-inits");
    let positions: Vec<usize> = (0..count).map(|_| rand::Rng::gen_range(&mut r, 0..train.len())).collect();
    let series = Tensor::new(vec![train.len(), train.dim], train.values.clone())?;
    states_at(&series, &positions)
}

/// λ_max of a trained model's skeleton along its own forced embedding of
/// the first `steps + 1` samples of `data`.
pub fn model_forced_lambda(
    sim: &crate::models::Simulator,
    data: &TimeSeriesDataset,
    tau: usize,
    steps: usize,
    seed: u64,
) -> Result<f64> {
    use crate::models::Variant;
    let len = (steps + 1).min(data.len());
    let series = Tensor::new(vec![len, data.dim], data.values[..len * data.dim].to_vec())?;
    let teacher = sim.embed(&series)?;
    let forced = match sim.variant() {
        Variant::Dpdsr | Variant::Spdsr => sim.config.d_zhat,
        _ => sim.config.d_z,
    };
    let mut r = rng::stream(seed, "forced-lyapunov");
    forced_lyapunov(&Skeleton::new(sim), &teacher, forced, tau, 1e-8, &mut r)
}
