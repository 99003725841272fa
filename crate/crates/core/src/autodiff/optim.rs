//! Adam optimizer and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::Tensor;
use crate::error::{DsrError, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn ensure_moments<'a>(&mut self, shapes: impl Iterator<Item = &'a [usize]> + Clone) -> Result<()> {
        if self.m.is_empty() {
            self.m = shapes.map(Tensor::zeros).collect();
            self.v = self.m.clone();
            return Ok(());
        }
        let n = shapes.clone().count();
        if self.m.len() != n || self.m.iter().zip(shapes).any(|(m, s)| m.shape() != s) {
            return Err(DsrError::shape(
                "adam_step",
                "parameter set changed between steps".to_string(),
            ));
        }
        Ok(())
    }

    fn apply(&self, m: &mut Tensor, v: &mut Tensor, p: &mut Tensor, g: &Tensor) {
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }

    /// Bias-corrected Adam update of `params` in place.
    ///
    /// Moment buffers are allocated lazily on the first call.
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(DsrError::shape(
                "adam_step",
                format!("{} parameters vs {} gradients", params.len(), grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(DsrError::shape(
                    "adam_step",
                    format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape()),
                ));
            }
        }
        let shapes: Vec<Vec<usize>> = params.iter().map(|p| p.shape().to_vec()).collect();
        self.ensure_moments(shapes.iter().map(|s| s.as_slice()))?;
        self.step += 1;
        let mut m = std::mem::take(&mut self.m);
        let mut v = std::mem::take(&mut self.v);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.apply(&mut m[i], &mut v[i], p, g);
        }
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// Applies one step to every trainable parameter of `store` using its
    /// accumulated gradients.
    pub fn step_store(&mut self, store: &mut ParamStore) -> Result<()> {
        let shapes: Vec<Vec<usize>> = store
            .iter()
            .filter(|(_, p)| p.requires_grad)
            .map(|(_, p)| p.value.shape().to_vec())
            .collect();
        self.ensure_moments(shapes.iter().map(|s| s.as_slice()))?;
        self.step += 1;
        let mut m = std::mem::take(&mut self.m);
        let mut v = std::mem::take(&mut self.v);
        for (i, p) in store.iter_mut().filter(|p| p.requires_grad).enumerate() {
            let crate::autodiff::Parameter { value, grad, .. } = p;
            self.apply(&mut m[i], &mut v[i], value, grad);
        }
        self.m = m;
        self.v = v;
        Ok(())
    }
}

/// Global L2 norm over a set of gradient tensors.
pub fn global_norm<'a>(grads: impl IntoIterator<Item = &'a Tensor>) -> f64 {
    grads.into_iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

/// Rescales `grads` by `threshold / N` when their global norm `N` exceeds
/// `threshold`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut Tensor], threshold: f64) -> f64 {
    let norm = global_norm(grads.iter().map(|g| &**g));
    if norm > threshold && norm.is_finite() {
        let s = threshold / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

/// [`clip_global_norm`] over the gradient buffers of a parameter store.
pub fn clip_store(store: &mut ParamStore, threshold: f64) -> f64 {
    let mut grads: Vec<&mut Tensor> = store
        .iter_mut()
        .filter(|p| p.requires_grad)
        .map(|p| &mut p.grad)
        .collect();
    clip_global_norm(&mut grads, threshold)
}
