use crate::diffcore::{Layer, ParamSet, ParamTensor};
use crate::error::{Error, Result};

/// Per-feature batch normalization over the rows of an `N × dim` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub dim: usize,
    pub momentum: f64,
    pub eps: f64,
    pub gamma: ParamTensor,
    pub beta: ParamTensor,
    pub running_mean: ParamTensor,
    pub running_var: ParamTensor,
}

#[derive(Debug, Clone)]
pub struct BnTranscript {
    n: usize,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(prefix: &str, dim: usize, momentum: f64, eps: f64) -> Self {
        Self {
            dim,
            momentum,
            eps,
            gamma: ParamTensor::filled(format!("{prefix}.gamma"), &[dim], 1.0),
            beta: ParamTensor::zeros(format!("{prefix}.beta"), &[dim]),
            running_mean: ParamTensor::buffer(format!("{prefix}.running_mean"), &[dim], 0.0),
            running_var: ParamTensor::buffer(format!("{prefix}.running_var"), &[dim], 1.0),
        }
    }

    /// Normalizes with the batch's own statistics. Running statistics are not
    /// touched; call [`BatchNorm::update_running`] with the transcript.
    pub fn forward_train(&self, x: &[f64]) -> (Vec<f64>, BnTranscript) {
        let d = self.dim;
        let n = x.len() / d;
        assert!(
            n >= 1 && x.len() == n * d,
            "batch norm expects an N×dim matrix"
        );
        let nf = n as f64;
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for row in x.chunks_exact(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / nf;
            }
        }
        for row in x.chunks_exact(d) {
            for j in 0..d {
                var[j] += (row[j] - mean[j]).powi(2) / nf;
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        for (r, row) in x.chunks_exact(d).enumerate() {
            for j in 0..d {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat[r * d + j] = h;
                y[r * d + j] = self.gamma.values[j] * h + self.beta.values[j];
            }
        }
        (
            y,
            BnTranscript {
                n,
                xhat,
                inv_std,
                mean,
                var,
            },
        )
    }

    /// Normalizes with the running statistics.
    pub fn forward_eval(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        x.chunks_exact(d)
            .flat_map(|row| {
                (0..d).map(move |j| {
                    let h = (row[j] - self.running_mean.values[j])
                        / (self.running_var.values[j] + self.eps).sqrt();
                    self.gamma.values[j] * h + self.beta.values[j]
                })
            })
            .collect()
    }

    pub fn backward_rows(&mut self, tr: &BnTranscript, dy: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let nf = tr.n as f64;
        let mut sum_dxhat = vec![0.0; d];
        let mut sum_dxhat_xhat = vec![0.0; d];
        for r in 0..tr.n {
            for j in 0..d {
                let k = r * d + j;
                self.gamma.grad[j] += dy[k] * tr.xhat[k];
                self.beta.grad[j] += dy[k];
                let dxhat = dy[k] * self.gamma.values[j];
                sum_dxhat[j] += dxhat;
                sum_dxhat_xhat[j] += dxhat * tr.xhat[k];
            }
        }
        let mut dx = vec![0.0; tr.n * d];
        for r in 0..tr.n {
            for j in 0..d {
                let k = r * d + j;
                let dxhat = dy[k] * self.gamma.values[j];
                dx[k] = tr.inv_std[j] / nf
                    * (nf * dxhat - sum_dxhat[j] - tr.xhat[k] * sum_dxhat_xhat[j]);
            }
        }
        dx
    }

    /// Exponential moving average of the batch statistics (unbiased variance).
    pub fn update_running(&mut self, tr: &BnTranscript) {
        let unbias = if tr.n > 1 {
            tr.n as f64 / (tr.n as f64 - 1.0)
        } else {
            1.0
        };
        for j in 0..self.dim {
            let rm = &mut self.running_mean.values[j];
            *rm = (1.0 - self.momentum) * *rm + self.momentum * tr.mean[j];
            let rv = &mut self.running_var.values[j];
            *rv = (1.0 - self.momentum) * *rv + self.momentum * tr.var[j] * unbias;
        }
    }
}

impl ParamSet for BatchNorm {
    fn params(&self) -> Vec<&ParamTensor> {
        vec![
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
        ]
    }
    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }
}

/// Training-path batch norm as a checkable layer.
impl Layer for BatchNorm {
    type Transcript = BnTranscript;

    fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, BnTranscript)> {
        if input.is_empty() || !input.len().is_multiple_of(self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: input.len(),
            });
        }
        Ok(self.forward_train(input))
    }

    fn backward(&mut self, tr: &BnTranscript, upstream: &[f64]) -> Vec<f64> {
        self.backward_rows(tr, upstream)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_output_is_standardized() {
        let bn = BatchNorm::new("bn", 2, 0.1, 1e-5);
        let x = [1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0];
        let (y, _) = bn.forward_train(&x);
        for j in 0..2 {
            let col: Vec<f64> = y.iter().skip(j).step_by(2).copied().collect();
            let mean: f64 = col.iter().sum::<f64>() / 4.0;
            let var: f64 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNorm::new("bn", 1, 0.1, 1e-5);
        let (_, tr) = bn.forward_train(&[1.0, 3.0]);
        bn.update_running(&tr);
        assert!((bn.running_mean.values[0] - 0.2).abs() < 1e-15);
        // unbiased batch variance 2.0
        assert!((bn.running_var.values[0] - (0.9 + 0.2)).abs() < 1e-15);
        let y = bn.forward_eval(&[0.2]);
        assert!(y[0].abs() < 1e-15);
    }
}
