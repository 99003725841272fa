use super::Map;
use crate::error::{DsrError, Result};
use crate::rng::{self, Rng64};

fn random_direction(rng: &mut Rng64, d: usize) -> Vec<f64> {
    loop {
        let v = rng::normals(rng, d);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Tracks a perturbed copy at distance `delta0` from the reference and
/// records `log(‖δ‖/δ₀)` after each step before renormalizing.
struct Tracker {
    delta0: f64,
    dir: Vec<f64>,
    pert: Vec<f64>,
    pert_next: Vec<f64>,
    sum: f64,
    count: usize,
}

impl Tracker {
    fn new(z: &[f64], delta0: f64, rng: &mut Rng64) -> Self {
        let dir = random_direction(rng, z.len());
        let pert = z.iter().zip(&dir).map(|(a, u)| a + delta0 * u).collect();
        Self { delta0, dir, pert, pert_next: vec![0.0; z.len()], sum: 0.0, count: 0 }
    }

    /// `reference` is the new reference state `F(z)`.
    fn step<M: Map + ?Sized>(&mut self, map: &M, reference: &[f64], record: bool) -> Result<()> {
        map.apply(&self.pert, &mut self.pert_next);
        for ((u, p), r) in self.dir.iter_mut().zip(&self.pert_next).zip(reference) {
            *u = p - r;
        }
        let n = norm(&self.dir);
        if !n.is_finite() {
            return Err(DsrError::NonFinite("perturbed trajectory".into()));
        }
        if n > 0.0 {
            self.dir.iter_mut().for_each(|u| *u /= n);
        }
        if record {
            // a perturbation collapsed below rounding counts as maximal contraction
            self.sum += (n.max(f64::MIN_POSITIVE) / self.delta0).ln();
            self.count += 1;
        }
        Ok(())
    }

    fn reattach(&mut self, reference: &[f64]) {
        for ((p, r), u) in self.pert.iter_mut().zip(reference).zip(&self.dir) {
            *p = r + self.delta0 * u;
        }
    }

    fn mean(&self) -> f64 {
        self.sum / self.count.max(1) as f64
    }
}

/// Maximal Lyapunov exponent in nats per step by the two-trajectory
/// rescaling method, averaged over `steps` steps after `burn_in`.
pub fn max_lyapunov<M: Map + ?Sized>(
    map: &M,
    z0: &[f64],
    steps: usize,
    burn_in: usize,
    delta0: f64,
    rng: &mut Rng64,
) -> Result<f64> {
    if steps == 0 || delta0 <= 0.0 {
        return Err(DsrError::invalid("max_lyapunov needs steps > 0 and delta0 > 0"));
    }
    let mut z = z0.to_vec();
    let mut next = vec![0.0; z.len()];
    let mut tr = Tracker::new(&z, delta0, rng);
    for t in 0..burn_in + steps {
        map.apply(&z, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(DsrError::NonFinite(format!("reference trajectory at step {t}")));
        }
        tr.step(map, &next, t >= burn_in)?;
        std::mem::swap(&mut z, &mut next);
        tr.reattach(&z);
    }
    Ok(tr.mean())
}

/// Maximal Lyapunov exponent along a trajectory forced every `tau` steps:
/// the first `forced_dims` coordinates of the reference are replaced by the
/// teacher state, and the perturbed copy is re-attached to the forced
/// reference along its current direction.
pub fn forced_lyapunov<M: Map + ?Sized>(
    map: &M,
    teacher: &[Vec<f64>],
    forced_dims: usize,
    tau: usize,
    delta0: f64,
    rng: &mut Rng64,
) -> Result<f64> {
    if tau == 0 || teacher.len() < 2 {
        return Err(DsrError::invalid("forced_lyapunov needs tau ≥ 1 and two teacher states"));
    }
    let d = map.dim();
    if teacher.iter().any(|s| s.len() != d) || forced_dims > d {
        return Err(DsrError::shape("forced_lyapunov", format!("teacher states for dimension {d}")));
    }
    let mut z = teacher[0].clone();
    let mut next = vec![0.0; d];
    let mut tr = Tracker::new(&z, delta0, rng);
    for (t, target) in teacher.iter().enumerate().skip(1) {
        map.apply(&z, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(DsrError::NonFinite(format!("forced trajectory at step {t}")));
        }
        tr.step(map, &next, true)?;
        if t % tau == 0 {
            next[..forced_dims].copy_from_slice(&target[..forced_dims]);
        }
        std::mem::swap(&mut z, &mut next);
        tr.reattach(&z);
    }
    Ok(tr.mean())
}
