use super::layer::ParamStore;
use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Adam moments for every tensor in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    /// Default moments (β1 = 0.9, β2 = 0.999, ε = 1e-8) shaped like `store`.
    pub fn new(store: &ParamStore) -> Self {
        Self::with_betas(store, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(store: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = |s: &ParamStore| {
            s.ids()
                .map(|id| {
                    let (r, c) = s.value(id).shape();
                    Matrix::zeros(r, c)
                })
                .collect::<Vec<_>>()
        };
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            first: zeros(store),
            second: zeros(store),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &Matrix {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &Matrix {
        &self.second[index]
    }
}

/// One bias-corrected Adam update using the gradients currently held in `store`.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.first.len() != store.len() {
        return Err(Error::Shape(format!(
            "optimizer tracks {} tensors, store has {}",
            state.first.len(),
            store.len()
        )));
    }
    if let Some(name) = store.first_non_finite_grad() {
        return Err(Error::Training(format!("non-finite gradient in `{name}`")));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let g = store.grad(id).clone();
        let m = &mut state.first[k];
        let v = &mut state.second[k];
        let theta = store.value_mut(id);
        for (((p, gv), mv), vv) in theta
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.as_mut_slice())
            .zip(v.as_mut_slice())
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// `lr0 · ½(1 + cos(π·epoch/total))`, decaying to zero at `total`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64) -> f64 {
    if total_epochs == 0 {
        return lr0;
    }
    let progress = epoch.min(total_epochs) as f64 / total_epochs as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the factor that was applied (1.0 when untouched).
pub fn clip_global_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if !(norm > max_norm) {
        return 1.0;
    }
    let scale = max_norm / norm;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.grad_mut(id).scale_in_place(scale);
    }
    scale
}
