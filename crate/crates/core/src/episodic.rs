//! Episode sampling, the ordinal-weighted BCE loss and the training loops
//! (episode-based, and the conventional batch baseline).

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diffcore::{clip_global_norm, Adam, OptimizerState, ParamSet};
use crate::error::{Error, Result};
use crate::eval::{predict_many, Metrics};
use crate::features::{add_noise, Dataset, FrameMatrix, Trial};
use crate::model::{ModelConfig, PainNet};
use crate::relation::RelationInit;
use crate::NUM_CLASSES;

/// Probabilities are clamped into `[P_FLOOR, 1 − P_FLOOR]` before logarithms.
pub const P_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// Per-class BCE weighted by `|T − c| + 1`.
    Wbce,
    /// Unweighted per-class BCE.
    Bce,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Wbce => "wbce",
            LossKind::Bce => "bce",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wbce" => Ok(LossKind::Wbce),
            "bce" => Ok(LossKind::Bce),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }
}

/// Class weights `|T − c| + 1` (all ones for plain BCE).
pub fn class_weights(label: u8, kind: LossKind) -> [f64; NUM_CLASSES] {
    let mut w = [1.0; NUM_CLASSES];
    if kind == LossKind::Wbce {
        for (c, wc) in w.iter_mut().enumerate() {
            *wc = (label as f64 - c as f64).abs() + 1.0;
        }
    }
    w
}

/// Weighted BCE over the 11 softmax probabilities, averaged over classes.
/// Returns the loss and its gradient w.r.t. the pre-softmax relation scores.
pub fn wbce_loss(probs: &[f64], label: u8, kind: LossKind) -> (f64, Vec<f64>) {
    let c_count = probs.len() as f64;
    let weights = class_weights(label, kind);
    let mut loss = 0.0;
    let mut d_probs = vec![0.0; probs.len()];
    for (c, &p) in probs.iter().enumerate() {
        let clamped = p.clamp(P_FLOOR, 1.0 - P_FLOOR);
        let inside = clamped == p;
        let w = weights[c] / c_count;
        if c == label as usize {
            loss -= w * clamped.ln();
            if inside {
                d_probs[c] = -w / clamped;
            }
        } else {
            loss -= w * (1.0 - clamped).ln();
            if inside {
                d_probs[c] = w / (1.0 - clamped);
            }
        }
    }
    // Softmax Jacobian: dL/dr_j = p_j (g_j − Σ_c g_c p_c).
    let mix: f64 = d_probs.iter().zip(probs).map(|(g, p)| g * p).sum();
    let d_scores = probs
        .iter()
        .zip(&d_probs)
        .map(|(p, g)| p * (g - mix))
        .collect();
    (loss, d_scores)
}

/// Training-pool record indices grouped by VAS level.
#[derive(Debug, Clone)]
pub struct ClassPool {
    all: Vec<usize>,
    labels: Vec<u8>,
    by_class: Vec<Vec<usize>>,
}

impl ClassPool {
    pub fn new(ds: &Dataset, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyPool);
        }
        let mut by_class = vec![Vec::new(); NUM_CLASSES];
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let vas = ds.record(i).vas;
            by_class[vas as usize].push(i);
            labels.push(vas);
        }
        Ok(Self {
            all: indices.to_vec(),
            labels,
            by_class,
        })
    }

    pub fn len(&self) -> usize {
        self.all.len()
    }

    pub fn is_empty(&self) -> bool {
        self.all.is_empty()
    }

    pub fn class(&self, c: usize) -> &[usize] {
        &self.by_class[c]
    }

    /// Most frequent label (ties to the lower label).
    pub fn majority_label(&self) -> u8 {
        let mut best = 0;
        for c in 1..NUM_CLASSES {
            if self.by_class[c].len() > self.by_class[best].len() {
                best = c;
            }
        }
        best as u8
    }
}

/// One video per VAS class, drawn from the training pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    pub videos: [usize; NUM_CLASSES],
    /// Slot `c` holds a video from the nearest populated class instead of `c`.
    pub fallback: [bool; NUM_CLASSES],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub query: usize,
    pub label: u8,
    pub samples: SampleSet,
}

impl Episode {
    /// Binary match labels: `y[c] = 1` iff `c` is the query's label.
    pub fn y(&self) -> [f64; NUM_CLASSES] {
        let mut y = [0.0; NUM_CLASSES];
        y[self.label as usize] = 1.0;
        y
    }
}

/// Draws a sample set avoiding `exclude`. Empty classes borrow from the
/// nearest populated class (lower class on ties).
pub fn draw_sample_set<R: Rng + ?Sized>(
    pool: &ClassPool,
    exclude: &[usize],
    rng: &mut R,
) -> Result<SampleSet> {
    let mut videos = [0; NUM_CLASSES];
    let mut fallback = [false; NUM_CLASSES];
    let eligible = |c: usize| -> Vec<usize> {
        pool.by_class[c]
            .iter()
            .copied()
            .filter(|i| !exclude.contains(i))
            .collect()
    };
    for c in 0..NUM_CLASSES {
        let own = eligible(c);
        if let Some(&v) = own.choose(rng) {
            videos[c] = v;
            continue;
        }
        let mut found = None;
        'search: for dist in 1..NUM_CLASSES {
            for cand in [c.checked_sub(dist), Some(c + dist)].into_iter().flatten() {
                if cand < NUM_CLASSES {
                    let alt = eligible(cand);
                    if !alt.is_empty() {
                        found = Some(alt);
                        break 'search;
                    }
                }
            }
        }
        let alt = found.ok_or(Error::EmptyPool)?;
        videos[c] = *alt.choose(rng).expect("non-empty");
        fallback[c] = true;
    }
    Ok(SampleSet { videos, fallback })
}

/// A query uniform over the pool plus a sample set that excludes it.
pub fn sample_episode<R: Rng + ?Sized>(pool: &ClassPool, rng: &mut R) -> Result<Episode> {
    let k = rng.random_range(0..pool.all.len());
    let query = pool.all[k];
    let samples = draw_sample_set(pool, &[query], rng)?;
    Ok(Episode {
        query,
        label: pool.labels[k],
        samples,
    })
}

/// Independent sample sets for validation/testing queries.
pub fn sample_eval_sets<R: Rng + ?Sized>(
    pool: &ClassPool,
    n_sets: usize,
    rng: &mut R,
) -> Result<Vec<SampleSet>> {
    (0..n_sets)
        .map(|_| draw_sample_set(pool, &[], rng))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingMode {
    Episode,
    Batch,
}

impl FromStr for TrainingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "episode" => Ok(TrainingMode::Episode),
            "batch" => Ok(TrainingMode::Batch),
            other => Err(Error::Config(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BatchSize {
    /// Pick the candidate with the best validation result.
    Auto(Vec<usize>),
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub episodes: usize,
    pub accumulate_every: usize,
    pub lr: f64,
    pub clip: f64,
    pub eval_every: usize,
    pub eval_sample_sets: usize,
    pub loss: LossKind,
    pub mode: TrainingMode,
    pub batch_size: BatchSize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 1500,
            accumulate_every: 5,
            lr: 0.005,
            clip: 1.0,
            eval_every: 50,
            eval_sample_sets: 5,
            loss: LossKind::Wbce,
            mode: TrainingMode::Episode,
            batch_size: BatchSize::Auto(vec![5, 10, 20]),
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRecord {
    pub episode: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_icc: Option<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_rmse: Option<f64>,
    /// Sample-set slots filled from a neighbouring class since the last record.
    #[serde(skip_serializing_if = "is_zero")]
    pub fallbacks: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

impl LogRecord {
    fn update(episode: usize, loss: f64) -> Self {
        Self {
            episode,
            loss: Some(loss),
            val_icc: None,
            val_mae: None,
            val_rmse: None,
            fallbacks: 0,
        }
    }

    fn eval_only(episode: usize) -> Self {
        Self {
            episode,
            loss: None,
            val_icc: None,
            val_mae: None,
            val_rmse: None,
            fallbacks: 0,
        }
    }

    fn attach(&mut self, m: &Metrics) {
        self.val_icc = Some(m.icc);
        self.val_mae = Some(m.mae);
        self.val_rmse = Some(m.rmse);
    }
}

/// Result of a training run; `model` is the best validation checkpoint.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PainNet,
    pub optimizer: OptimizerState,
    pub best_episode: usize,
    pub best_val: Metrics,
    pub log: Vec<LogRecord>,
    pub steps: usize,
    pub evaluations: usize,
    /// Chosen batch size (batch mode only).
    pub batch_size: Option<usize>,
}

impl TrainOutcome {
    /// The log as JSON lines.
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("log record serializes") + "\n")
            .collect()
    }

    /// Update losses in log order.
    pub fn losses(&self) -> Vec<f64> {
        self.log.iter().filter_map(|r| r.loss).collect()
    }
}

/// Lower MAE wins; then higher ICC (undefined counts as lowest).
pub fn better_validation(candidate: &Metrics, incumbent: &Metrics) -> bool {
    if candidate.mae != incumbent.mae {
        return candidate.mae < incumbent.mae;
    }
    let icc = |m: &Metrics| m.icc.unwrap_or(f64::NEG_INFINITY);
    icc(candidate) > icc(incumbent)
}

/// Deterministic sub-stream of the run seed.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_INIT: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_VALIDATION: u64 = 2;
const STREAM_INIT_PROBE: u64 = 4;

struct Split {
    pool: ClassPool,
    validation: Vec<usize>,
    val_sets: Vec<SampleSet>,
}

impl Split {
    fn new(cfg: &TrainConfig, ds: &Dataset, trial: &Trial) -> Result<Self> {
        let train = ds.indices(&trial.train)?;
        let validation = ds.indices(&trial.validation)?;
        let pool = ClassPool::new(ds, &train)?;
        let val_sets = sample_eval_sets(
            &pool,
            cfg.eval_sample_sets,
            &mut stream_rng(cfg.seed, STREAM_VALIDATION),
        )?;
        Ok(Self {
            pool,
            validation,
            val_sets,
        })
    }

    fn validate(&self, model: &PainNet, ds: &Dataset) -> Result<Metrics> {
        let preds = predict_many(model, ds, &self.validation, &self.val_sets)?;
        Metrics::from_predictions(&preds)
    }
}

/// Mutable state shared by both training regimes.
struct Run<'a> {
    cfg: &'a TrainConfig,
    ds: &'a Dataset,
    split: &'a Split,
    model: PainNet,
    state: OptimizerState,
    adam: Adam,
    log: Vec<LogRecord>,
    best: Option<(PainNet, OptimizerState, usize, Metrics)>,
    steps: usize,
    evaluations: usize,
}

impl<'a> Run<'a> {
    fn new(
        model_cfg: &ModelConfig,
        cfg: &'a TrainConfig,
        ds: &'a Dataset,
        split: &'a Split,
    ) -> Result<Self> {
        let mut init_rng = stream_rng(cfg.seed, STREAM_INIT);
        let mut model = PainNet::new(model_cfg.clone(), &mut init_rng);
        if model_cfg.relation_init == RelationInit::Probe {
            let mut probe_rng = stream_rng(cfg.seed, STREAM_INIT_PROBE);
            let episode = sample_episode(&split.pool, &mut probe_rng)?;
            let videos = std::iter::once(episode.query)
                .chain(episode.samples.videos)
                .map(|i| ds.centered(i))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&FrameMatrix> = videos.iter().map(|v| v.as_ref()).collect();
            model.probe_relation_init(&refs, &mut init_rng)?;
        }
        let state = OptimizerState::new(&model.params());
        Ok(Self {
            cfg,
            ds,
            split,
            model,
            state,
            adam: Adam::new(cfg.lr),
            log: Vec::new(),
            best: None,
            steps: 0,
            evaluations: 0,
        })
    }

    fn noisy(&self, idx: usize, rng: &mut ChaCha8Rng) -> Result<Arc<FrameMatrix>> {
        let fm = self.ds.centered(idx)?;
        if self.cfg.noise_sigma > 0.0 {
            Ok(Arc::new(add_noise(&fm, self.cfg.noise_sigma, rng)))
        } else {
            Ok(fm)
        }
    }

    /// Averages the accumulated gradients over `count`, clips, steps, zeroes.
    fn apply_update(&mut self, count: usize) -> Result<()> {
        if count > 1 {
            self.model.scale_grad(1.0 / count as f64);
        }
        let mut params = self.model.params_mut();
        clip_global_norm(&mut params, self.cfg.clip)?;
        self.adam.step(&mut params, &mut self.state)?;
        drop(params);
        self.model.zero_grad();
        self.steps += 1;
        Ok(())
    }

    fn evaluate(&mut self, episode: usize) -> Result<Metrics> {
        let m = self.split.validate(&self.model, self.ds)?;
        self.evaluations += 1;
        let improved = match &self.best {
            None => true,
            Some((_, _, _, incumbent)) => better_validation(&m, incumbent),
        };
        if improved {
            self.best = Some((self.model.clone(), self.state.clone(), episode, m.clone()));
        }
        Ok(m)
    }

    fn finish(mut self, presented: usize, batch_size: Option<usize>) -> Result<TrainOutcome> {
        if self.best.is_none() {
            let m = self.evaluate(presented)?;
            let mut rec = LogRecord::eval_only(presented);
            rec.attach(&m);
            self.log.push(rec);
        }
        let (model, optimizer, best_episode, best_val) =
            self.best.take().expect("evaluated at least once");
        Ok(TrainOutcome {
            model,
            optimizer,
            best_episode,
            best_val,
            log: self.log,
            steps: self.steps,
            evaluations: self.evaluations,
            batch_size,
        })
    }
}

/// Episode-based training: one query plus an 11-video sample set per episode,
/// gradients averaged over `accumulate_every` episodes per ADAM step, and a
/// validation pass every `eval_every` episodes keeping the best model.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    ds: &Dataset,
    trial: &Trial,
) -> Result<TrainOutcome> {
    match cfg.mode {
        TrainingMode::Episode => train_episode_mode(model_cfg, cfg, ds, trial),
        TrainingMode::Batch => train_batch_mode(model_cfg, cfg, ds, trial),
    }
}

fn validate_config(cfg: &TrainConfig) -> Result<()> {
    if cfg.episodes == 0
        || cfg.accumulate_every == 0
        || cfg.eval_every == 0
        || cfg.eval_sample_sets == 0
    {
        return Err(Error::Config(
            "episode, accumulation, evaluation counts must be positive".into(),
        ));
    }
    Ok(())
}

pub fn train_episode_mode(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    ds: &Dataset,
    trial: &Trial,
) -> Result<TrainOutcome> {
    validate_config(cfg)?;
    let split = Split::new(cfg, ds, trial)?;
    let mut run = Run::new(model_cfg, cfg, ds, &split)?;
    let mut rng = stream_rng(cfg.seed, STREAM_TRAIN);
    let mut pending = 0;
    let mut pending_loss = 0.0;
    let mut fallbacks = 0;
    for ep in 1..=cfg.episodes {
        let episode = sample_episode(&split.pool, &mut rng)?;
        let mut videos = Vec::with_capacity(1 + NUM_CLASSES);
        videos.push(run.noisy(episode.query, &mut rng)?);
        for &s in &episode.samples.videos {
            videos.push(run.noisy(s, &mut rng)?);
        }
        let refs: Vec<&FrameMatrix> = videos.iter().map(|v| v.as_ref()).collect();
        let loss = run
            .model
            .train_group(&refs, &[episode.label], cfg.loss, &mut rng)?;
        pending += 1;
        pending_loss += loss;
        fallbacks += episode.samples.fallback.iter().filter(|f| **f).count();

        let mut record = None;
        if pending == cfg.accumulate_every || ep == cfg.episodes {
            run.apply_update(pending)?;
            let mut rec = LogRecord::update(ep, pending_loss / pending as f64);
            rec.fallbacks = fallbacks;
            record = Some(rec);
            fallbacks = 0;
            pending = 0;
            pending_loss = 0.0;
        }
        if ep % cfg.eval_every == 0 {
            let m = run.evaluate(ep)?;
            record.get_or_insert(LogRecord::eval_only(ep)).attach(&m);
        }
        run.log.extend(record);
    }
    run.finish(cfg.episodes, None)
}

/// Conventional batch baseline: the training videos are shuffled into
/// batches each epoch; every batch shares one fresh sample set, its mean loss
/// drives one ADAM step. The same number of query presentations as
/// `episodes` is used. With [`BatchSize::Auto`] every candidate is trained
/// from the same initialization and the best validation result is kept.
pub fn train_batch_mode(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    ds: &Dataset,
    trial: &Trial,
) -> Result<TrainOutcome> {
    validate_config(cfg)?;
    let split = Split::new(cfg, ds, trial)?;
    let candidates = match &cfg.batch_size {
        BatchSize::Fixed(b) => vec![*b],
        BatchSize::Auto(c) => c.clone(),
    };
    if candidates.is_empty() || candidates.contains(&0) {
        return Err(Error::Config("batch sizes must be positive".into()));
    }
    let mut best: Option<TrainOutcome> = None;
    for b in candidates {
        let outcome = run_batches(model_cfg, cfg, ds, &split, b)?;
        let keep = match &best {
            None => true,
            Some(inc) => better_validation(&outcome.best_val, &inc.best_val),
        };
        if keep {
            best = Some(outcome);
        }
    }
    Ok(best.expect("at least one candidate"))
}

fn run_batches(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    ds: &Dataset,
    split: &Split,
    batch: usize,
) -> Result<TrainOutcome> {
    let mut run = Run::new(model_cfg, cfg, ds, split)?;
    let mut rng = stream_rng(cfg.seed, STREAM_TRAIN);
    let mut order = split.pool.all.clone();
    let mut presented = 0;
    let mut next_eval = cfg.eval_every;
    while presented < cfg.episodes {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            if presented >= cfg.episodes {
                break;
            }
            let take = chunk.len().min(cfg.episodes - presented);
            let queries = &chunk[..take];
            let set = draw_sample_set(&split.pool, queries, &mut rng)?;
            let mut videos = Vec::with_capacity(take + NUM_CLASSES);
            for &q in queries.iter().chain(&set.videos) {
                videos.push(run.noisy(q, &mut rng)?);
            }
            let labels: Vec<u8> = queries.iter().map(|&q| ds.record(q).vas).collect();
            let refs: Vec<&FrameMatrix> = videos.iter().map(|v| v.as_ref()).collect();
            let loss = run.model.train_group(&refs, &labels, cfg.loss, &mut rng)?;
            run.apply_update(1)?;
            presented += take;
            let mut record = LogRecord::update(presented, loss);
            record.fallbacks = set.fallback.iter().filter(|f| **f).count();
            if presented >= next_eval {
                while next_eval <= presented {
                    next_eval += cfg.eval_every;
                }
                let m = run.evaluate(presented)?;
                record.attach(&m);
            }
            run.log.push(record);
        }
    }
    run.finish(presented, Some(batch))
}
