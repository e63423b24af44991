use crate::autodiff::{ParamStore, Tensor};
use crate::{Error, Result};

/// Adam moment buffers, one pair per parameter, in store order.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

/// Adam optimizer with bias correction. β2 and eps follow the training
/// library conventions this recipe reproduces (0.99 and 1e-5, with eps added
/// outside the square root).
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: OptimizerState,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let m = store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
        let v = store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-5,
            state: OptimizerState { m, v, step: 0 },
        }
    }

    pub fn step_count(&self) -> u64 {
        self.state.step
    }

    /// One update over every parameter's accumulated gradient.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::usage(format!("learning rate must be positive, got {lr}")));
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for id in store.ids() {
            let Tensor { data, grad, .. } = store.get_mut(id);
            let g = match grad {
                Some(g) => g,
                None => continue,
            };
            let m = &mut self.state.m[id.0];
            let v = &mut self.state.v[id.0];
            for i in 0..data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
