//! Differentiable-layer substrate: named parameter tensors, global-norm
//! gradient clipping, ADAM, the finite-difference checker and checkpoints.

mod adam;
mod checkpoint;
mod fd;

pub use adam::{Adam, OptimizerState};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, ConfigSnapshot,
};
pub use fd::{fd_check, CheckReport, Layer};

use rand::Rng;

use crate::error::{Error, Result};

/// A named, shaped parameter with its gradient accumulator.
///
/// Non-learnable tensors (batch-norm running statistics) live in the same
/// registry so they are checkpointed, but clipping and ADAM skip them.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    pub learnable: bool,
}

impl ParamTensor {
    pub fn filled(name: impl Into<String>, shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            values: vec![value; n],
            grad: vec![0.0; n],
            learnable: true,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::filled(name, shape, 0.0)
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Self {
        let mut t = Self::zeros(name, shape);
        for v in &mut t.values {
            *v = rng.random_range(-bound..=bound);
        }
        t
    }

    /// A non-learnable buffer.
    pub fn buffer(name: impl Into<String>, shape: &[usize], value: f64) -> Self {
        Self {
            learnable: false,
            ..Self::filled(name, shape, value)
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything owning parameter tensors, visited in registration order.
pub trait ParamSet {
    fn params(&self) -> Vec<&ParamTensor>;
    fn params_mut(&mut self) -> Vec<&mut ParamTensor>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn scale_grad(&mut self, factor: f64) {
        for p in self.params_mut() {
            p.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }
}

/// Rescales all learnable gradients so their joint L2 norm is at most
/// `max_norm`. Returns the factor applied (1.0 when already within bounds).
pub fn clip_global_norm(params: &mut [&mut ParamTensor], max_norm: f64) -> Result<f64> {
    if max_norm <= 0.0 || !max_norm.is_finite() {
        return Err(Error::Config(format!(
            "clip norm must be positive, got {max_norm}"
        )));
    }
    let mut sq = 0.0;
    for p in params.iter().filter(|p| p.learnable) {
        for g in &p.grad {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm <= max_norm {
        return Ok(1.0);
    }
    let factor = max_norm / norm;
    for p in params.iter_mut().filter(|p| p.learnable) {
        p.grad.iter_mut().for_each(|g| *g *= factor);
    }
    Ok(factor)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grads(values: &[&[f64]]) -> Vec<ParamTensor> {
        values
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let mut p = ParamTensor::zeros(format!("p{i}"), &[g.len()]);
                p.grad = g.to_vec();
                p
            })
            .collect()
    }

    fn clip(ps: &mut [ParamTensor], max: f64) -> f64 {
        let mut refs: Vec<&mut ParamTensor> = ps.iter_mut().collect();
        clip_global_norm(&mut refs, max).unwrap()
    }

    #[test]
    fn clip_halves_norm_two() {
        let mut ps = grads(&[&[1.2, 0.0], &[1.6]]);
        assert_eq!(clip(&mut ps, 1.0), 0.5);
        assert_eq!(ps[0].grad, vec![0.6, 0.0]);
        assert_eq!(ps[1].grad, vec![0.8]);
    }

    #[test]
    fn clip_leaves_small_and_zero_gradients() {
        let mut ps = grads(&[&[0.3]]);
        assert_eq!(clip(&mut ps, 1.0), 1.0);
        assert_eq!(ps[0].grad, vec![0.3]);
        let mut zs = grads(&[&[0.0, 0.0]]);
        assert_eq!(clip(&mut zs, 1.0), 1.0);
        assert_eq!(zs[0].grad, vec![0.0, 0.0]);
    }

    #[test]
    fn clip_skips_buffers_and_rejects_nan() {
        let mut ps = grads(&[&[3.0], &[4.0]]);
        ps[1].learnable = false;
        assert!((clip(&mut ps, 1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(ps[1].grad, vec![4.0]);

        let mut bad = grads(&[&[f64::NAN]]);
        let mut refs: Vec<&mut ParamTensor> = bad.iter_mut().collect();
        assert!(matches!(
            clip_global_norm(&mut refs, 1.0),
            Err(Error::NonFinite(_))
        ));
    }
}
