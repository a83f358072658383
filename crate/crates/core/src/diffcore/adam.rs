use super::ParamTensor;
use crate::error::{Error, Result};

/// Bias-corrected ADAM, no weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Advances `t` and updates every learnable tensor in place. Gradients are
    /// read, not cleared.
    pub fn step(&self, params: &mut [&mut ParamTensor], state: &mut OptimizerState) -> Result<()> {
        let learnable: Vec<&mut &mut ParamTensor> =
            params.iter_mut().filter(|p| p.learnable).collect();
        if learnable.len() != state.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} tensors, model has {}",
                state.m.len(),
                learnable.len()
            )));
        }
        for p in &learnable {
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }
        state.t += 1;
        let t = state.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in learnable.into_iter().enumerate() {
            let (m, v) = (&mut state.m[i], &mut state.v[i]);
            if m.len() != p.len() {
                return Err(Error::ShapeMismatch(format!(
                    "optimizer moments for {}",
                    p.name
                )));
            }
            for j in 0..p.values.len() {
                let g = p.grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let update = self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                if !update.is_finite() {
                    return Err(Error::NonFinite(format!("update of {}", p.name)));
                }
                p.values[j] -= update;
            }
        }
        Ok(())
    }
}

/// First/second moments for each learnable tensor, in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub t: u64,
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &[&ParamTensor]) -> Self {
        let learnable: Vec<_> = params.iter().filter(|p| p.learnable).collect();
        Self {
            t: 0,
            names: learnable.iter().map(|p| p.name.clone()).collect(),
            shapes: learnable.iter().map(|p| p.shape.clone()).collect(),
            m: learnable.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: learnable.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}
