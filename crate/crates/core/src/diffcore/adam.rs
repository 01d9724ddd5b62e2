use super::params::ParamStore;
use crate::error::{Error, Result};

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    first: ParamStore,
    second: ParamStore,
}

impl AdamState {
    /// Defaults β1=0.9, β2=0.999, ε=1e-8.
    pub fn new(params: &ParamStore, lr: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
        }
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        })
    }

    pub fn first_moments(&self) -> &ParamStore {
        &self.first
    }

    pub fn second_moments(&self) -> &ParamStore {
        &self.second
    }

    /// One update. A non-finite gradient aborts before anything changes.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<()> {
        params.check_aligned(grads)?;
        params.check_aligned(&self.first)?;
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::Numeric(format!("gradient block {name}")));
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.epsilon);

        for (((_, p), (_, g)), ((_, m), (_, v))) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((p, &g), m), v) in p
                .values_mut()
                .iter_mut()
                .zip(g.values())
                .zip(m.values_mut())
                .zip(v.values_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        if let Some((name, _)) = params.iter().find(|(_, p)| !p.is_finite()) {
            return Err(Error::Numeric(format!("parameter block {name} after Adam step")));
        }
        Ok(())
    }
}

/// Rescale `grads` in place so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|(_, t)| t.values().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (_, t) in grads.iter_mut() {
            t.values_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
