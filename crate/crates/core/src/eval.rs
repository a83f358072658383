//! Inference protocol, metrics and cross-validation reports.

use std::collections::HashMap;

use serde::Serialize;
use serde_json::json;

use crate::episodic::{
    sample_eval_sets, stream_rng, train, ClassPool, SampleSet, TrainConfig, TrainOutcome,
};
use crate::error::{Error, Result};
use crate::features::{make_folds, Dataset, FoldSplit, Trial};
use crate::model::{ModelConfig, PainNet};
use crate::relation::EpisodeProbs;
use crate::NUM_CLASSES;

const STREAM_TEST: u64 = 3;
const STREAM_FOLDS: u64 = 7;

pub const ICC_VARIANT: &str = "icc_3_1";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub video_id: String,
    /// Argmax label of each sample set.
    pub set_labels: Vec<u8>,
    /// Median of `set_labels`.
    pub label: u8,
    /// Probability vector of each sample set.
    pub probs: Vec<Vec<f64>>,
    /// Ground-truth VAS, when known.
    pub truth: Option<u8>,
}

/// Median of integer labels. For an even count the lower middle is taken.
pub fn median_label(labels: &[u8]) -> Result<u8> {
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = labels.to_vec();
    sorted.sort_unstable();
    Ok(sorted[(sorted.len() - 1) / 2])
}

/// Predicts one query against pre-embedded sample sets.
pub fn predict(
    model: &PainNet,
    video_id: &str,
    query: &[f64],
    sample_sets: &[Vec<Vec<f64>>],
    truth: Option<u8>,
) -> Result<Prediction> {
    if sample_sets.is_empty() {
        return Err(Error::EmptyInput);
    }
    let per_set: Vec<EpisodeProbs> = sample_sets
        .iter()
        .map(|s| model.probs(query, s))
        .collect::<Result<_>>()?;
    let set_labels: Vec<u8> = per_set.iter().map(EpisodeProbs::argmax).collect();
    Ok(Prediction {
        video_id: video_id.to_string(),
        label: median_label(&set_labels)?,
        set_labels,
        probs: per_set.into_iter().map(|p| p.probs).collect(),
        truth,
    })
}

/// Embeds every video referenced by `sets` once (eval mode) and returns the
/// sets as embedding lists ordered by class.
pub fn embed_sample_sets(
    model: &PainNet,
    ds: &Dataset,
    sets: &[SampleSet],
) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut cache: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut out = Vec::with_capacity(sets.len());
    for set in sets {
        let mut vectors = Vec::with_capacity(NUM_CLASSES);
        for &v in &set.videos {
            if let std::collections::hash_map::Entry::Vacant(e) = cache.entry(v) {
                e.insert(model.embed(ds.centered(v)?.as_ref())?);
            }
            vectors.push(cache[&v].clone());
        }
        out.push(vectors);
    }
    Ok(out)
}

/// Predicts every query index of `ds` against the same sample sets.
pub fn predict_many(
    model: &PainNet,
    ds: &Dataset,
    queries: &[usize],
    sets: &[SampleSet],
) -> Result<Vec<Prediction>> {
    let embedded = embed_sample_sets(model, ds, sets)?;
    queries
        .iter()
        .map(|&q| {
            let rec = ds.record(q);
            let emb = model.embed(ds.centered(q)?.as_ref())?;
            predict(model, &rec.video_id, &emb, &embedded, Some(rec.vas))
        })
        .collect()
}

fn check_pair(preds: &[f64], truths: &[f64]) -> Result<()> {
    if preds.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            got: preds.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// ICC(3,1): two-way mixed, consistency, single rater, with the two raters
/// being the predictions and the ground truth. `None` when the truths are
/// constant or both mean squares vanish.
pub fn icc(preds: &[f64], truths: &[f64]) -> Result<Option<f64>> {
    check_pair(preds, truths)?;
    let n = preds.len();
    if n < 2 {
        return Err(Error::Undefined("icc needs at least two targets"));
    }
    if truths.iter().all(|&t| t == truths[0]) {
        return Ok(None);
    }
    let nf = n as f64;
    let grand = (preds.iter().sum::<f64>() + truths.iter().sum::<f64>()) / (2.0 * nf);
    let mean_p = preds.iter().sum::<f64>() / nf;
    let mean_t = truths.iter().sum::<f64>() / nf;
    let mut ss_rows = 0.0;
    let mut ss_err = 0.0;
    for (&p, &t) in preds.iter().zip(truths) {
        let row = (p + t) / 2.0;
        ss_rows += 2.0 * (row - grand).powi(2);
        ss_err += (p - row - mean_p + grand).powi(2) + (t - row - mean_t + grand).powi(2);
    }
    let bms = ss_rows / (nf - 1.0);
    let ems = ss_err / (nf - 1.0);
    let denom = bms + ems;
    if denom <= 0.0 {
        return Ok(None);
    }
    Ok(Some((bms - ems) / denom))
}

pub fn mae(preds: &[f64], truths: &[f64]) -> Result<f64> {
    check_pair(preds, truths)?;
    Ok(preds
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / preds.len() as f64)
}

pub fn rmse(preds: &[f64], truths: &[f64]) -> Result<f64> {
    check_pair(preds, truths)?;
    let mse = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / preds.len() as f64;
    Ok(mse.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub icc: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
}

impl Metrics {
    pub fn compute(preds: &[f64], truths: &[f64]) -> Result<Self> {
        let icc = if preds.len() >= 2 {
            icc(preds, truths)?
        } else {
            None
        };
        Ok(Self {
            icc,
            mae: mae(preds, truths)?,
            rmse: rmse(preds, truths)?,
        })
    }

    /// Metrics of predictions carrying ground truth.
    pub fn from_predictions(preds: &[Prediction]) -> Result<Self> {
        let (p, t) = label_pairs(preds)?;
        Self::compute(&p, &t)
    }
}

fn label_pairs(preds: &[Prediction]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut p = Vec::with_capacity(preds.len());
    let mut t = Vec::with_capacity(preds.len());
    for pr in preds {
        let truth = pr
            .truth
            .ok_or_else(|| Error::Config(format!("video {} has no ground truth", pr.video_id)))?;
        p.push(pr.label as f64);
        t.push(truth as f64);
    }
    Ok((p, t))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntensityMae {
    /// MAE within each ground-truth level; `None` for absent levels.
    pub per_level: [Option<f64>; NUM_CLASSES],
    /// Mean over the defined levels.
    pub macro_avg: Option<f64>,
}

impl IntensityMae {
    /// Plot-ready `intensity,mae` table; undefined levels are left blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("intensity,mae\n");
        for (level, v) in self.per_level.iter().enumerate() {
            match v {
                Some(m) => out.push_str(&format!("{level},{m}\n")),
                None => out.push_str(&format!("{level},\n")),
            }
        }
        out
    }
}

pub fn mae_per_intensity(preds: &[f64], truths: &[f64]) -> Result<IntensityMae> {
    check_pair(preds, truths)?;
    let mut sums = [0.0; NUM_CLASSES];
    let mut counts = [0usize; NUM_CLASSES];
    for (&p, &t) in preds.iter().zip(truths) {
        let level = t.round();
        if !(0.0..=10.0).contains(&level) {
            return Err(Error::Config(format!("truth {t} outside 0..=10")));
        }
        sums[level as usize] += (p - t).abs();
        counts[level as usize] += 1;
    }
    let mut per_level = [None; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        if counts[c] > 0 {
            per_level[c] = Some(sums[c] / counts[c] as f64);
        }
    }
    let defined: Vec<f64> = per_level.iter().flatten().copied().collect();
    let macro_avg =
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(IntensityMae {
        per_level,
        macro_avg,
    })
}

/// MAE of always predicting `label`.
pub fn constant_baseline_mae(label: u8, truths: &[f64]) -> Result<f64> {
    let preds = vec![label as f64; truths.len()];
    mae(&preds, truths)
}

/// One train/test trial.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub train: TrainOutcome,
    pub predictions: Vec<Prediction>,
    pub test: Metrics,
    /// Test MAE of the training pool's majority label.
    pub baseline_mae: f64,
}

/// The training pool of `trial` and the sample sets its test videos are
/// compared against. Depends only on the trial and `cfg.seed`.
pub fn test_sample_sets(
    ds: &Dataset,
    trial: &Trial,
    cfg: &TrainConfig,
) -> Result<(ClassPool, Vec<SampleSet>)> {
    let pool = ClassPool::new(ds, &ds.indices(&trial.train)?)?;
    let sets = sample_eval_sets(
        &pool,
        cfg.eval_sample_sets,
        &mut stream_rng(cfg.seed, STREAM_TEST),
    )?;
    Ok((pool, sets))
}

/// Trains on `trial`, then predicts its test videos with the best
/// validation checkpoint and `eval_sample_sets` fresh sample sets.
pub fn run_trial(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    ds: &Dataset,
    trial: &Trial,
) -> Result<TrialOutcome> {
    let outcome = train(model_cfg, cfg, ds, trial)?;
    let test_idx = ds.indices(&trial.test)?;
    let (pool, sets) = test_sample_sets(ds, trial, cfg)?;
    let predictions = predict_many(&outcome.model, ds, &test_idx, &sets)?;
    let test = Metrics::from_predictions(&predictions)?;
    let (_, truths) = label_pairs(&predictions)?;
    let baseline_mae = constant_baseline_mae(pool.majority_label(), &truths)?;
    Ok(TrialOutcome {
        train: outcome,
        predictions,
        test,
        baseline_mae,
    })
}

/// Subject-wise folds for `ds` under `seed`.
pub fn split_folds(ds: &Dataset, k: usize, val_count: usize, seed: u64) -> Result<FoldSplit> {
    make_folds(ds, k, val_count, &mut stream_rng(seed, STREAM_FOLDS))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_test: usize,
    pub best_episode: usize,
    pub val: Metrics,
    pub test: Metrics,
    pub baseline_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub seed: u64,
    pub sample_sets: usize,
    pub folds: Vec<FoldReport>,
    /// Unweighted mean of the defined per-fold ICCs.
    pub icc: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
    /// Per-level MAE over the pooled test predictions of all folds.
    pub intensity: IntensityMae,
}

impl MetricReport {
    pub fn from_folds(
        seed: u64,
        sample_sets: usize,
        folds: Vec<FoldReport>,
        pooled: &[Prediction],
    ) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::EmptyInput);
        }
        let n = folds.len() as f64;
        let iccs: Vec<f64> = folds.iter().filter_map(|f| f.test.icc).collect();
        let icc = (!iccs.is_empty()).then(|| iccs.iter().sum::<f64>() / iccs.len() as f64);
        let mae = folds.iter().map(|f| f.test.mae).sum::<f64>() / n;
        let rmse = folds.iter().map(|f| f.test.rmse).sum::<f64>() / n;
        let (p, t) = label_pairs(pooled)?;
        Ok(Self {
            seed,
            sample_sets,
            folds,
            icc,
            mae,
            rmse,
            intensity: mae_per_intensity(&p, &t)?,
        })
    }

    /// Header line, one line per fold, then a summary line.
    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![json!({
            "record": "header",
            "icc_variant": ICC_VARIANT,
            "folds": self.folds.len(),
            "seed": self.seed,
            "sample_sets": self.sample_sets,
        })];
        for f in &self.folds {
            let mut v = serde_json::to_value(f).expect("fold report serializes");
            v["record"] = json!("fold");
            lines.push(v);
        }
        lines.push(json!({
            "record": "summary",
            "icc": self.icc,
            "mae": self.mae,
            "rmse": self.rmse,
            "mae_per_intensity": self.intensity.per_level,
            "mae_per_intensity_macro": self.intensity.macro_avg,
        }));
        lines.iter().map(|l| format!("{l}\n")).collect()
    }
}

#[derive(Debug, Clone)]
pub struct CrossValOutcome {
    pub report: MetricReport,
    pub split: FoldSplit,
    pub trials: Vec<TrialOutcome>,
}

/// Runs every trial of a `k`-fold subject split. Trial `i` trains with seed
/// `cfg.seed + i`.
pub fn cross_validate(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    ds: &Dataset,
    k: usize,
    val_count: usize,
) -> Result<CrossValOutcome> {
    let split = split_folds(ds, k, val_count, cfg.seed)?;
    let mut trials = Vec::with_capacity(k);
    let mut folds = Vec::with_capacity(k);
    let mut pooled = Vec::new();
    for (i, trial) in split.trials.iter().enumerate() {
        let trial_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..cfg.clone()
        };
        let out = run_trial(model_cfg, &trial_cfg, ds, trial)?;
        folds.push(FoldReport {
            fold: i,
            n_test: out.predictions.len(),
            best_episode: out.train.best_episode,
            val: out.train.best_val.clone(),
            test: out.test.clone(),
            baseline_mae: out.baseline_mae,
        });
        pooled.extend(out.predictions.iter().cloned());
        trials.push(out);
    }
    let report = MetricReport::from_folds(cfg.seed, cfg.eval_sample_sets, folds, &pooled)?;
    Ok(CrossValOutcome {
        report,
        split,
        trials,
    })
}
