use rand::Rng;

use crate::diffcore::{Layer, ParamSet, ParamTensor};
use crate::error::{Error, Result};
use crate::linalg::{matvec, matvec_t_acc, outer_acc, sigmoid};

/// Single-layer GRU, gate blocks ordered reset, update, candidate:
///
/// ```text
/// r  = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z  = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub input: usize,
    pub hidden: usize,
    pub w_ih: ParamTensor,
    pub w_hh: ParamTensor,
    pub b_ih: ParamTensor,
    pub b_hh: ParamTensor,
}

/// Per-step activations of one forward pass over a sequence.
#[derive(Debug, Clone)]
pub struct GruTranscript {
    steps: usize,
    xs: Vec<f64>,
    /// `steps + 1` hidden states, the first being the zero initial state.
    hs: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// `W_hn h + b_hn`, needed for the reset-gate gradient.
    ghn: Vec<f64>,
}

impl Gru {
    /// Weights uniform in `±1/√hidden`, biases zero.
    pub fn new<R: Rng + ?Sized>(prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            input,
            hidden,
            w_ih: ParamTensor::uniform(format!("{prefix}.w_ih"), &[3 * hidden, input], bound, rng),
            w_hh: ParamTensor::uniform(format!("{prefix}.w_hh"), &[3 * hidden, hidden], bound, rng),
            b_ih: ParamTensor::zeros(format!("{prefix}.b_ih"), &[3 * hidden]),
            b_hh: ParamTensor::zeros(format!("{prefix}.b_hh"), &[3 * hidden]),
        }
    }

    /// Runs the sequence (row-major `steps × input`) from a zero state and
    /// returns the last hidden state.
    pub fn forward(&self, seq: &[f64]) -> Result<(Vec<f64>, GruTranscript)> {
        let (a, d) = (self.input, self.hidden);
        if seq.is_empty() || !seq.len().is_multiple_of(a) {
            return Err(Error::DimensionMismatch {
                expected: a,
                got: seq.len(),
            });
        }
        let steps = seq.len() / a;
        let mut tr = GruTranscript {
            steps,
            xs: seq.to_vec(),
            hs: vec![0.0; (steps + 1) * d],
            r: vec![0.0; steps * d],
            z: vec![0.0; steps * d],
            n: vec![0.0; steps * d],
            ghn: vec![0.0; steps * d],
        };
        let mut gi = vec![0.0; 3 * d];
        let mut gh = vec![0.0; 3 * d];
        for t in 0..steps {
            let x = &seq[t * a..(t + 1) * a];
            matvec(&self.w_ih.values, 3 * d, a, x, &mut gi);
            {
                let h = &tr.hs[t * d..(t + 1) * d];
                matvec(&self.w_hh.values, 3 * d, d, h, &mut gh);
            }
            for (g, b) in gi.iter_mut().zip(&self.b_ih.values) {
                *g += b;
            }
            for (g, b) in gh.iter_mut().zip(&self.b_hh.values) {
                *g += b;
            }
            for j in 0..d {
                let r = sigmoid(gi[j] + gh[j]);
                let z = sigmoid(gi[d + j] + gh[d + j]);
                let n = (gi[2 * d + j] + r * gh[2 * d + j]).tanh();
                let h_prev = tr.hs[t * d + j];
                let h = (1.0 - z) * n + z * h_prev;
                if !h.is_finite() {
                    return Err(Error::NonFinite("GRU activation".into()));
                }
                tr.r[t * d + j] = r;
                tr.z[t * d + j] = z;
                tr.n[t * d + j] = n;
                tr.ghn[t * d + j] = gh[2 * d + j];
                tr.hs[(t + 1) * d + j] = h;
            }
        }
        let last = tr.hs[steps * d..].to_vec();
        Ok((last, tr))
    }

    /// Backpropagates `dh` (gradient w.r.t. the last hidden state) through
    /// time. Returns the sequence gradient when `want_input_grad` is set.
    pub fn backward_seq(
        &mut self,
        tr: &GruTranscript,
        dh_last: &[f64],
        want_input_grad: bool,
    ) -> Vec<f64> {
        let (a, d) = (self.input, self.hidden);
        let mut dx = if want_input_grad {
            vec![0.0; tr.steps * a]
        } else {
            Vec::new()
        };
        let mut dh = dh_last.to_vec();
        let mut dgi = vec![0.0; 3 * d];
        let mut dgh = vec![0.0; 3 * d];
        for t in (0..tr.steps).rev() {
            let h_prev = &tr.hs[t * d..(t + 1) * d];
            let mut dh_prev = vec![0.0; d];
            for j in 0..d {
                let k = t * d + j;
                let (r, z, n) = (tr.r[k], tr.z[k], tr.n[k]);
                let dn = dh[j] * (1.0 - z);
                let dz = dh[j] * (h_prev[j] - n);
                dh_prev[j] = dh[j] * z;
                let dan = dn * (1.0 - n * n);
                let dr = dan * tr.ghn[k];
                let dar = dr * r * (1.0 - r);
                let daz = dz * z * (1.0 - z);
                dgi[j] = dar;
                dgi[d + j] = daz;
                dgi[2 * d + j] = dan;
                dgh[j] = dar;
                dgh[d + j] = daz;
                dgh[2 * d + j] = dan * r;
            }
            let x = &tr.xs[t * a..(t + 1) * a];
            outer_acc(&mut self.w_ih.grad, &dgi, x);
            outer_acc(&mut self.w_hh.grad, &dgh, h_prev);
            for (g, v) in self.b_ih.grad.iter_mut().zip(&dgi) {
                *g += v;
            }
            for (g, v) in self.b_hh.grad.iter_mut().zip(&dgh) {
                *g += v;
            }
            if want_input_grad {
                matvec_t_acc(
                    &self.w_ih.values,
                    3 * d,
                    a,
                    &dgi,
                    &mut dx[t * a..(t + 1) * a],
                );
            }
            matvec_t_acc(&self.w_hh.values, 3 * d, d, &dgh, &mut dh_prev);
            dh = dh_prev;
        }
        dx
    }
}

impl ParamSet for Gru {
    fn params(&self) -> Vec<&ParamTensor> {
        vec![&self.w_ih, &self.w_hh, &self.b_ih, &self.b_hh]
    }
    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![
            &mut self.w_ih,
            &mut self.w_hh,
            &mut self.b_ih,
            &mut self.b_hh,
        ]
    }
}

impl Layer for Gru {
    type Transcript = GruTranscript;

    fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, GruTranscript)> {
        Gru::forward(self, input)
    }

    fn backward(&mut self, tr: &GruTranscript, upstream: &[f64]) -> Vec<f64> {
        self.backward_seq(tr, upstream, true)
    }
}

/// Second-level GRU that reads the `M × d` segment embeddings as a sequence
/// and returns its last hidden state (the stacked-GRU summarizer).
pub fn stacked_gru_summarize(q: &[f64], gru2: &Gru) -> Result<(Vec<f64>, GruTranscript)> {
    gru2.forward(q)
}
