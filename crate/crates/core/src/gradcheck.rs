//! Finite-difference gradient checks over every differentiable layer.
//!
//! Each layer is checked on randomly drawn inputs and parameters; draws that
//! land within a small margin of a non-differentiable point (ReLU kinks,
//! order-statistic ties) are rejected and redrawn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diffcore::{fd_check, CheckReport, Layer, ParamSet, ParamTensor};
use crate::embedding::{BatchNorm, Gru, StatLayer, StatOp};
use crate::episodic::{wbce_loss, LossKind};
use crate::error::{Error, Result};
use crate::relation::{
    softmax, Comparison, ComparisonLayer, HeadTranscript, RelationHead, RelationMlp,
};
use crate::NUM_CLASSES;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;
/// Minimum distance from a kink or tie accepted for a draw.
const KINK_MARGIN: f64 = 1e-3;
const MAX_DRAWS: usize = 200;
/// Input-gradient scale applied to the layer named by `inject_fault`.
const FAULT_FACTOR: f64 = 1.01;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    /// Seeds `0..seeds` are checked per layer.
    pub seeds: u64,
    pub step: f64,
    pub tol: f64,
    /// Corrupts the backward pass of the named layer (harness self-test).
    pub inject_fault: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seeds: 10,
            step: DEFAULT_STEP,
            tol: DEFAULT_TOL,
            inject_fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerResult {
    pub layer: String,
    pub seeds: u64,
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckSummary {
    pub tol: f64,
    pub step: f64,
    pub layers: Vec<LayerResult>,
}

impl GradcheckSummary {
    pub fn passed(&self) -> bool {
        self.layers.iter().all(|l| l.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter(|l| !l.passed)
            .map(|l| l.layer.as_str())
            .collect()
    }

    /// One `name pass|FAIL max_rel_error worst` line per layer.
    pub fn to_text(&self) -> String {
        self.layers
            .iter()
            .map(|l| {
                format!(
                    "{:<22} {} max_rel_error={:.3e} at {} ({} seeds, {} entries)\n",
                    l.layer,
                    if l.passed { "pass" } else { "FAIL" },
                    l.max_rel_error,
                    l.worst,
                    l.seeds,
                    l.checked
                )
            })
            .collect()
    }
}

/// Names of every checked layer, in report order.
pub fn layer_names() -> Vec<String> {
    let mut names: Vec<String> = ["gru", "stacked_gru", "batchnorm", "stat_layer"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend(
        Comparison::ALL
            .iter()
            .map(|c| format!("comparison.{}", c.name())),
    );
    names.push("relation_mlp".into());
    names.push("loss_head.wbce".into());
    names.push("loss_head.bce".into());
    names.extend(
        Comparison::ALL
            .iter()
            .map(|c| format!("composite.{}", c.name())),
    );
    names
}

/// Runs the whole suite.
pub fn run_suite(opts: &GradcheckOptions) -> Result<GradcheckSummary> {
    if opts.seeds == 0 {
        return Err(Error::Config("gradcheck needs at least one seed".into()));
    }
    if let Some(name) = &opts.inject_fault {
        if !layer_names().contains(name) {
            return Err(Error::Config(format!("unknown layer {name}")));
        }
    }
    let layers = layer_names()
        .into_iter()
        .map(|name| check_named(&name, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradcheckSummary {
        tol: opts.tol,
        step: opts.step,
        layers,
    })
}

/// Checks one named layer over all seeds.
pub fn check_named(name: &str, opts: &GradcheckOptions) -> Result<LayerResult> {
    let mut agg = LayerResult {
        layer: name.to_string(),
        seeds: opts.seeds,
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
        passed: true,
    };
    for seed in 0..opts.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = check_once(name, opts, &mut rng)?;
        agg.checked += r.checked;
        if r.max_rel_error > agg.max_rel_error || agg.worst.is_empty() {
            agg.max_rel_error = r.max_rel_error;
            agg.worst = format!("{} (seed {seed})", r.worst);
        }
        agg.passed &= r.passed;
    }
    Ok(agg)
}

fn check_once(name: &str, opts: &GradcheckOptions, rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let faulty = opts.inject_fault.as_deref() == Some(name);
    match name {
        "gru" => {
            let mut g = Gru::new("gru", 5, 4, rng);
            randomize(&mut g.params_mut(), 0.3, rng);
            let x = uniform_vec(5 * 4, 1.0, rng);
            check(&mut g, &x, opts, faulty)
        }
        "stacked_gru" => {
            let mut g = Gru::new("gru2", 4, 4, rng);
            randomize(&mut g.params_mut(), 0.3, rng);
            let x = uniform_vec(4 * rng.random_range(2..6), 2.0, rng);
            check(&mut g, &x, opts, faulty)
        }
        "batchnorm" => {
            let mut bn = BatchNorm::new("bn", 3, 0.1, 1e-5);
            for g in bn.gamma.values.iter_mut() {
                *g = rng.random_range(0.5..1.5);
            }
            for b in bn.beta.values.iter_mut() {
                *b = rng.random_range(-0.5..0.5);
            }
            let x = uniform_vec(3 * 5, 1.0, rng);
            check(&mut bn, &x, opts, faulty)
        }
        "stat_layer" => {
            let m = rng.random_range(2..7);
            let d = 3;
            let x = draw(rng, |r| {
                let x = uniform_vec(m * d, 1.0, r);
                (!has_near_ties(&x, m, d)).then_some(x)
            })?;
            let mut layer = StatLayer {
                m,
                d,
                ops: StatOp::ALL.to_vec(),
            };
            check(&mut layer, &x, opts, faulty)
        }
        "relation_mlp" => {
            let (mut mlp, x) = draw(rng, |r| {
                let mut mlp = RelationMlp::new(3, r);
                mlp.b1.values = uniform_vec(2, 0.3, r);
                mlp.b2.values = uniform_vec(1, 0.3, r);
                let x = uniform_vec(3, 1.0, r);
                let (_, tr) = mlp.score(&x).ok()?;
                (!tr.near_kink(KINK_MARGIN) && !tr.all_dead()).then_some((mlp, x))
            })?;
            check(&mut mlp, &x, opts, faulty)
        }
        "loss_head.wbce" | "loss_head.bce" => {
            let kind = if name.ends_with("wbce") {
                LossKind::Wbce
            } else {
                LossKind::Bce
            };
            let mut head = LossHead {
                label: rng.random_range(0..NUM_CLASSES as u8),
                kind,
            };
            let x = uniform_vec(NUM_CLASSES, 2.0, rng);
            check(&mut head, &x, opts, faulty)
        }
        _ => {
            if let Some(variant) = name.strip_prefix("comparison.") {
                let kind: Comparison = variant.parse()?;
                let n = 5;
                let (mut layer, x) = draw(rng, |r| {
                    let mut layer = ComparisonLayer::new(kind, n, r);
                    if let Some(b) = layer.bias.as_mut() {
                        b.values = uniform_vec(n, 0.3, r);
                    }
                    let x = uniform_vec(2 * n, 1.0, r);
                    let (_, tr) = layer.compare(&x[..n], &x[n..]).ok()?;
                    (!layer.near_kink(&tr, KINK_MARGIN)).then_some((layer, x))
                })?;
                return check(&mut layer, &x, opts, faulty);
            }
            if let Some(variant) = name.strip_prefix("composite.") {
                let kind: Comparison = variant.parse()?;
                let dim = 4;
                let label = rng.random_range(0..NUM_CLASSES as u8);
                let (mut layer, x) = draw(rng, |r| {
                    let mut head = RelationHead::new(kind, dim, r);
                    if let Some(b) = head.comparison.bias.as_mut() {
                        b.values = uniform_vec(dim, 0.3, r);
                    }
                    head.mlp.b1.values = uniform_vec(2, 0.3, r);
                    let layer = HeadLoss {
                        head,
                        dim,
                        label,
                        kind: LossKind::Wbce,
                    };
                    let x = uniform_vec(dim * (1 + NUM_CLASSES), 1.0, r);
                    let (_, (tr, _)) = layer.forward(&x).ok()?;
                    (!tr.near_kink(&layer.head, KINK_MARGIN)).then_some((layer, x))
                })?;
                return check(&mut layer, &x, opts, faulty);
            }
            Err(Error::Config(format!("unknown layer {name}")))
        }
    }
}

fn check<L: Layer>(
    layer: &mut L,
    x: &[f64],
    opts: &GradcheckOptions,
    faulty: bool,
) -> Result<CheckReport> {
    if faulty {
        fd_check(&mut Faulty { inner: layer }, x, opts.step, opts.tol)
    } else {
        fd_check(layer, x, opts.step, opts.tol)
    }
}

fn draw<T, R: Rng>(rng: &mut R, mut f: impl FnMut(&mut R) -> Option<T>) -> Result<T> {
    for _ in 0..MAX_DRAWS {
        if let Some(v) = f(rng) {
            return Ok(v);
        }
    }
    Err(Error::NonFinite(
        "no draw away from non-differentiable points".into(),
    ))
}

fn uniform_vec<R: Rng + ?Sized>(n: usize, bound: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

fn randomize<R: Rng + ?Sized>(params: &mut [&mut ParamTensor], bound: f64, rng: &mut R) {
    for p in params.iter_mut().filter(|p| p.learnable) {
        for v in p.values.iter_mut() {
            *v = rng.random_range(-bound..bound);
        }
    }
}

/// Whether two entries of any column are closer than the kink margin.
fn has_near_ties(x: &[f64], m: usize, d: usize) -> bool {
    (0..d).any(|j| {
        let mut col: Vec<f64> = (0..m).map(|i| x[i * d + j]).collect();
        col.sort_by(f64::total_cmp);
        col.windows(2).any(|w| w[1] - w[0] < KINK_MARGIN)
    })
}

/// Softmax followed by the (weighted) BCE loss, as a map scores → [loss].
#[derive(Debug, Clone)]
pub struct LossHead {
    pub label: u8,
    pub kind: LossKind,
}

impl ParamSet for LossHead {
    fn params(&self) -> Vec<&ParamTensor> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        Vec::new()
    }
}

impl Layer for LossHead {
    type Transcript = Vec<f64>;

    fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (loss, d) = wbce_loss(&softmax(input), self.label, self.kind);
        Ok((vec![loss], d))
    }

    fn backward(&mut self, d: &Vec<f64>, upstream: &[f64]) -> Vec<f64> {
        d.iter().map(|g| g * upstream[0]).collect()
    }
}

/// Relation head plus loss: input is the query vector followed by the 11
/// sample vectors; output is the scalar loss.
#[derive(Debug, Clone)]
pub struct HeadLoss {
    pub head: RelationHead,
    pub dim: usize,
    pub label: u8,
    pub kind: LossKind,
}

impl ParamSet for HeadLoss {
    fn params(&self) -> Vec<&ParamTensor> {
        self.head.params()
    }
    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.head.params_mut()
    }
}

impl Layer for HeadLoss {
    type Transcript = (HeadTranscript, Vec<f64>);

    fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Self::Transcript)> {
        if input.len() != self.dim * (1 + NUM_CLASSES) {
            return Err(Error::DimensionMismatch {
                expected: self.dim * (1 + NUM_CLASSES),
                got: input.len(),
            });
        }
        let (q, rest) = input.split_at(self.dim);
        let samples: Vec<Vec<f64>> = rest.chunks(self.dim).map(<[f64]>::to_vec).collect();
        let (p, tr) = self.head.episode_probs(q, &samples)?;
        let (loss, d) = wbce_loss(&p.probs, self.label, self.kind);
        Ok((vec![loss], (tr, d)))
    }

    fn backward(&mut self, tr: &Self::Transcript, upstream: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = tr.1.iter().map(|g| g * upstream[0]).collect();
        let (mut dx, ds) = self.head.backward(&tr.0, &d);
        for s in ds {
            dx.extend(s);
        }
        dx
    }
}

/// Wraps a layer and scales its input gradient, simulating a backward bug.
struct Faulty<'a, L> {
    inner: &'a mut L,
}

impl<L: Layer> ParamSet for Faulty<'_, L> {
    fn params(&self) -> Vec<&ParamTensor> {
        self.inner.params()
    }
    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.inner.params_mut()
    }
}

impl<L: Layer> Layer for Faulty<'_, L> {
    type Transcript = L::Transcript;

    fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, L::Transcript)> {
        self.inner.forward(input)
    }

    fn backward(&mut self, tr: &L::Transcript, upstream: &[f64]) -> Vec<f64> {
        self.inner
            .backward(tr, upstream)
            .into_iter()
            .map(|g| g * FAULT_FACTOR)
            .collect()
    }
}
