//! Relation module: compare a query vector with each sample vector, score
//! each pair with a two-layer MLP, softmax over the 11 scores.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::diffcore::{Layer, ParamSet, ParamTensor};
use crate::error::{Error, Result};
use crate::linalg::{dot, matvec, matvec_t_acc, norm, outer_acc};
use crate::NUM_CLASSES;

/// Norms below this make the cosine similarity 0.
const COS_NORM_FLOOR: f64 = 1e-12;

/// How a (query, sample) pair of video vectors is turned into MLP input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Comparison {
    /// `[‖a − b‖₂, cos(a, b)]`
    EucCos,
    /// `(a − b) ⊙ (a − b)`
    Subt,
    /// `a ⊙ b`
    Mult,
    /// `ReLU(W [a; b] + c)`
    Nn,
    /// `ReLU(W [(a − b)²; a ⊙ b] + c)`
    SubMultNn,
}

impl Comparison {
    pub const ALL: [Comparison; 5] = [
        Comparison::EucCos,
        Comparison::Subt,
        Comparison::Mult,
        Comparison::Nn,
        Comparison::SubMultNn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Comparison::EucCos => "euccos",
            Comparison::Subt => "subt",
            Comparison::Mult => "mult",
            Comparison::Nn => "nn",
            Comparison::SubMultNn => "submultnn",
        }
    }

    /// Comparison output width for `n`-dimensional video vectors.
    pub fn out_dim(self, n: usize) -> usize {
        match self {
            Comparison::EucCos => 2,
            _ => n,
        }
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Comparison {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Comparison::ALL
            .into_iter()
            .find(|c| c.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown comparison {s:?}")))
    }
}

/// Comparison layer; the two NN variants own a `n × 2n` projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonLayer {
    pub kind: Comparison,
    pub dim: usize,
    pub weight: Option<ParamTensor>,
    pub bias: Option<ParamTensor>,
}

#[derive(Debug, Clone)]
pub struct CompareTranscript {
    a: Vec<f64>,
    b: Vec<f64>,
    dist: f64,
    cos: f64,
    norm_a: f64,
    norm_b: f64,
    /// Input and pre-activation of the NN projection.
    nn: Option<(Vec<f64>, Vec<f64>)>,
}

impl ComparisonLayer {
    pub fn new<R: Rng + ?Sized>(kind: Comparison, dim: usize, rng: &mut R) -> Self {
        let (weight, bias) = match kind {
            Comparison::Nn | Comparison::SubMultNn => {
                let bound = 1.0 / ((2 * dim) as f64).sqrt();
                (
                    Some(ParamTensor::uniform(
                        "compare.w",
                        &[dim, 2 * dim],
                        bound,
                        rng,
                    )),
                    Some(ParamTensor::zeros("compare.b", &[dim])),
                )
            }
            _ => (None, None),
        };
        Self {
            kind,
            dim,
            weight,
            bias,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.kind.out_dim(self.dim)
    }

    pub fn compare(&self, a: &[f64], b: &[f64]) -> Result<(Vec<f64>, CompareTranscript)> {
        for v in [a, b] {
            if v.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: v.len(),
                });
            }
        }
        let mut tr = CompareTranscript {
            a: a.to_vec(),
            b: b.to_vec(),
            dist: 0.0,
            cos: 0.0,
            norm_a: 0.0,
            norm_b: 0.0,
            nn: None,
        };
        let diff_sq = || a.iter().zip(b).map(|(x, y)| (x - y) * (x - y));
        let prod = || a.iter().zip(b).map(|(x, y)| x * y);
        let out = match self.kind {
            Comparison::EucCos => {
                tr.dist = diff_sq().sum::<f64>().sqrt();
                tr.norm_a = norm(a);
                tr.norm_b = norm(b);
                if tr.norm_a >= COS_NORM_FLOOR && tr.norm_b >= COS_NORM_FLOOR {
                    tr.cos = dot(a, b) / (tr.norm_a * tr.norm_b);
                }
                vec![tr.dist, tr.cos]
            }
            Comparison::Subt => diff_sq().collect(),
            Comparison::Mult => prod().collect(),
            Comparison::Nn | Comparison::SubMultNn => {
                let u: Vec<f64> = if self.kind == Comparison::Nn {
                    a.iter().chain(b).copied().collect()
                } else {
                    diff_sq().chain(prod()).collect()
                };
                let (w, bias) = self.nn_params();
                let mut pre = vec![0.0; self.dim];
                matvec(&w.values, self.dim, 2 * self.dim, &u, &mut pre);
                for (p, c) in pre.iter_mut().zip(&bias.values) {
                    *p += c;
                }
                let out = pre.iter().map(|p| p.max(0.0)).collect();
                tr.nn = Some((u, pre));
                out
            }
        };
        Ok((out, tr))
    }

    fn nn_params(&self) -> (&ParamTensor, &ParamTensor) {
        (
            self.weight.as_ref().expect("NN comparison has weights"),
            self.bias.as_ref().expect("NN comparison has bias"),
        )
    }

    /// Returns `(d a, d b)`.
    pub fn backward(&mut self, tr: &CompareTranscript, up: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.dim;
        let (a, b) = (&tr.a, &tr.b);
        let mut da = vec![0.0; n];
        let mut db = vec![0.0; n];
        match self.kind {
            Comparison::EucCos => {
                if tr.dist > 0.0 {
                    for i in 0..n {
                        let g = up[0] * (a[i] - b[i]) / tr.dist;
                        da[i] += g;
                        db[i] -= g;
                    }
                }
                if tr.norm_a >= COS_NORM_FLOOR && tr.norm_b >= COS_NORM_FLOOR {
                    let ab = tr.norm_a * tr.norm_b;
                    for i in 0..n {
                        da[i] += up[1] * (b[i] / ab - tr.cos * a[i] / (tr.norm_a * tr.norm_a));
                        db[i] += up[1] * (a[i] / ab - tr.cos * b[i] / (tr.norm_b * tr.norm_b));
                    }
                }
            }
            Comparison::Subt => {
                for i in 0..n {
                    let g = 2.0 * (a[i] - b[i]) * up[i];
                    da[i] = g;
                    db[i] = -g;
                }
            }
            Comparison::Mult => {
                for i in 0..n {
                    da[i] = b[i] * up[i];
                    db[i] = a[i] * up[i];
                }
            }
            Comparison::Nn | Comparison::SubMultNn => {
                let (u, pre) = tr.nn.as_ref().expect("NN transcript");
                let dpre: Vec<f64> = pre
                    .iter()
                    .zip(up)
                    .map(|(p, g)| if *p > 0.0 { *g } else { 0.0 })
                    .collect();
                let w = self.weight.as_mut().expect("NN comparison has weights");
                outer_acc(&mut w.grad, &dpre, u);
                let mut du = vec![0.0; 2 * n];
                matvec_t_acc(&w.values, n, 2 * n, &dpre, &mut du);
                let bias = self.bias.as_mut().expect("NN comparison has bias");
                for (g, d) in bias.grad.iter_mut().zip(&dpre) {
                    *g += d;
                }
                if self.kind == Comparison::Nn {
                    da.copy_from_slice(&du[..n]);
                    db.copy_from_slice(&du[n..]);
                } else {
                    for i in 0..n {
                        let dsq = 2.0 * (a[i] - b[i]) * du[i];
                        da[i] = dsq + b[i] * du[n + i];
                        db[i] = -dsq + a[i] * du[n + i];
                    }
                }
            }
        }
        (da, db)
    }

    /// Whether any NN pre-activation sits within `margin` of the ReLU kink.
    pub fn near_kink(&self, tr: &CompareTranscript, margin: f64) -> bool {
        tr.nn
            .as_ref()
            .is_some_and(|(_, pre)| pre.iter().any(|p| p.abs() < margin))
    }
}

impl ParamSet for ComparisonLayer {
    fn params(&self) -> Vec<&ParamTensor> {
        self.weight.iter().chain(self.bias.iter()).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.weight.iter_mut().chain(self.bias.iter_mut()).collect()
    }
}

/// `r = w₂ · ReLU(W₁ c + b₁) + b₂` with a 2-unit hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationMlp {
    pub in_dim: usize,
    pub w1: ParamTensor,
    pub b1: ParamTensor,
    pub w2: ParamTensor,
    pub b2: ParamTensor,
}

#[derive(Debug, Clone)]
pub struct MlpTranscript {
    input: Vec<f64>,
    pre: [f64; 2],
}

impl MlpTranscript {
    /// Whether a hidden pre-activation sits within `margin` of the ReLU kink.
    pub fn near_kink(&self, margin: f64) -> bool {
        self.pre.iter().any(|p| p.abs() < margin)
    }

    /// Whether every hidden unit is inactive.
    pub fn all_dead(&self) -> bool {
        self.pre.iter().all(|&p| p <= 0.0)
    }

    /// Per-unit ReLU activity.
    pub fn active(&self) -> [bool; 2] {
        [self.pre[0] > 0.0, self.pre[1] > 0.0]
    }
}

/// Initialization scheme of the relation MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelationInit {
    /// All weights uniform in `±1/√fan_in`, biases zero.
    Uniform,
    /// As `Uniform`, but the output layer starts at zero and first-layer rows
    /// that are inactive on a probe episode are redrawn before training.
    Probe,
}

impl RelationInit {
    pub fn name(self) -> &'static str {
        match self {
            RelationInit::Uniform => "uniform",
            RelationInit::Probe => "probe",
        }
    }
}

impl FromStr for RelationInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(RelationInit::Uniform),
            "probe" => Ok(RelationInit::Probe),
            other => Err(Error::Config(format!("unknown relation init {other:?}"))),
        }
    }
}

impl RelationMlp {
    pub const HIDDEN: usize = 2;

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, rng: &mut R) -> Self {
        let h = Self::HIDDEN;
        Self {
            in_dim,
            w1: ParamTensor::uniform(
                "relation.w1",
                &[h, in_dim],
                1.0 / (in_dim as f64).sqrt(),
                rng,
            ),
            b1: ParamTensor::zeros("relation.b1", &[h]),
            w2: ParamTensor::uniform("relation.w2", &[1, h], 1.0 / (h as f64).sqrt(), rng),
            b2: ParamTensor::zeros("relation.b2", &[1]),
        }
    }

    pub fn score(&self, c: &[f64]) -> Result<(f64, MlpTranscript)> {
        if c.len() != self.in_dim {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim,
                got: c.len(),
            });
        }
        let mut pre = [0.0; 2];
        matvec(&self.w1.values, 2, self.in_dim, c, &mut pre);
        pre[0] += self.b1.values[0];
        pre[1] += self.b1.values[1];
        let r = self.w2.values[0] * pre[0].max(0.0)
            + self.w2.values[1] * pre[1].max(0.0)
            + self.b2.values[0];
        Ok((
            r,
            MlpTranscript {
                input: c.to_vec(),
                pre,
            },
        ))
    }

    pub fn backward(&mut self, tr: &MlpTranscript, d_score: f64) -> Vec<f64> {
        let hidden = [tr.pre[0].max(0.0), tr.pre[1].max(0.0)];
        self.b2.grad[0] += d_score;
        let mut dpre = [0.0; 2];
        for j in 0..2 {
            self.w2.grad[j] += d_score * hidden[j];
            if tr.pre[j] > 0.0 {
                dpre[j] = d_score * self.w2.values[j];
            }
            self.b1.grad[j] += dpre[j];
        }
        outer_acc(&mut self.w1.grad, &dpre, &tr.input);
        let mut dc = vec![0.0; self.in_dim];
        matvec_t_acc(&self.w1.values, 2, self.in_dim, &dpre, &mut dc);
        dc
    }
}

impl ParamSet for RelationMlp {
    fn params(&self) -> Vec<&ParamTensor> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }
    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Max-shifted softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let peak = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - peak).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Relation scores and class probabilities for one query; index `c` is VAS `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeProbs {
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
}

impl EpisodeProbs {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let probs = softmax(&scores);
        Self { scores, probs }
    }

    /// Most probable class; ties go to the lower class.
    pub fn argmax(&self) -> u8 {
        let mut best = 0;
        for (c, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = c;
            }
        }
        best as u8
    }
}

/// Comparison layer plus relation MLP, shared across all pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationHead {
    pub comparison: ComparisonLayer,
    pub mlp: RelationMlp,
}

#[derive(Debug, Clone)]
pub struct HeadTranscript {
    pairs: Vec<(CompareTranscript, MlpTranscript)>,
}

impl HeadTranscript {
    pub fn near_kink(&self, head: &RelationHead, margin: f64) -> bool {
        self.pairs.iter().any(|(c, m)| {
            head.comparison.near_kink(c, margin) || m.pre.iter().any(|p| p.abs() < margin)
        })
    }
}

impl RelationHead {
    pub fn new<R: Rng + ?Sized>(kind: Comparison, dim: usize, rng: &mut R) -> Self {
        let comparison = ComparisonLayer::new(kind, dim, rng);
        let mlp = RelationMlp::new(comparison.out_dim(), rng);
        Self { comparison, mlp }
    }

    pub fn score_pair(
        &self,
        query: &[f64],
        sample: &[f64],
    ) -> Result<(f64, CompareTranscript, MlpTranscript)> {
        let (c, ct) = self.comparison.compare(query, sample)?;
        let (r, mt) = self.mlp.score(&c)?;
        Ok((r, ct, mt))
    }

    /// Redraws first-layer rows (uniform `±1/√fan_in`, bias zero) of hidden
    /// units that are inactive on every (query, sample) pair. Returns the
    /// number of redraws; gives up after `max_tries` per unit.
    pub fn revive_dead_units<R: Rng + ?Sized>(
        &mut self,
        query: &[f64],
        samples: &[Vec<f64>],
        max_tries: usize,
        rng: &mut R,
    ) -> Result<usize> {
        let h = RelationMlp::HIDDEN;
        let n = self.mlp.in_dim;
        let bound = 1.0 / (n as f64).sqrt();
        let mut redraws = 0;
        for j in 0..h {
            for _ in 0..max_tries {
                let mut alive = false;
                for s in samples {
                    let (_, _, mt) = self.score_pair(query, s)?;
                    alive |= mt.active()[j];
                }
                if alive {
                    break;
                }
                for v in &mut self.mlp.w1.values[j * n..(j + 1) * n] {
                    *v = rng.random_range(-bound..bound);
                }
                self.mlp.b1.values[j] = 0.0;
                redraws += 1;
            }
        }
        Ok(redraws)
    }

    /// Scores `query` against each sample (ordered by class) and softmaxes.
    pub fn episode_probs(
        &self,
        query: &[f64],
        samples: &[Vec<f64>],
    ) -> Result<(EpisodeProbs, HeadTranscript)> {
        if samples.len() != NUM_CLASSES {
            return Err(Error::DimensionMismatch {
                expected: NUM_CLASSES,
                got: samples.len(),
            });
        }
        let mut scores = Vec::with_capacity(NUM_CLASSES);
        let mut pairs = Vec::with_capacity(NUM_CLASSES);
        for s in samples {
            let (r, ct, mt) = self.score_pair(query, s)?;
            scores.push(r);
            pairs.push((ct, mt));
        }
        Ok((EpisodeProbs::from_scores(scores), HeadTranscript { pairs }))
    }

    /// Given `d loss / d scores`, returns `(d query, d samples)`.
    pub fn backward(&mut self, tr: &HeadTranscript, d_scores: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut dq = vec![0.0; self.comparison.dim];
        let mut ds = Vec::with_capacity(tr.pairs.len());
        for ((ct, mt), &g) in tr.pairs.iter().zip(d_scores) {
            let dc = self.mlp.backward(mt, g);
            let (da, db) = self.comparison.backward(ct, &dc);
            for (q, v) in dq.iter_mut().zip(&da) {
                *q += v;
            }
            ds.push(db);
        }
        (dq, ds)
    }
}

impl ParamSet for RelationHead {
    fn params(&self) -> Vec<&ParamTensor> {
        let mut ps = self.comparison.params();
        ps.extend(self.mlp.params());
        ps
    }
    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut ps = self.comparison.params_mut();
        ps.extend(self.mlp.params_mut());
        ps
    }
}

/// Comparison layer as a checkable map: input is `[a; b]`.
impl Layer for ComparisonLayer {
    type Transcript = CompareTranscript;

    fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, CompareTranscript)> {
        let (a, b) = input.split_at(input.len() / 2);
        self.compare(a, b)
    }

    fn backward(&mut self, tr: &CompareTranscript, upstream: &[f64]) -> Vec<f64> {
        let (mut da, db) = ComparisonLayer::backward(self, tr, upstream);
        da.extend(db);
        da
    }
}

impl Layer for RelationMlp {
    type Transcript = MlpTranscript;

    fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, MlpTranscript)> {
        let (r, tr) = self.score(input)?;
        Ok((vec![r], tr))
    }

    fn backward(&mut self, tr: &MlpTranscript, upstream: &[f64]) -> Vec<f64> {
        RelationMlp::backward(self, tr, upstream[0])
    }
}
