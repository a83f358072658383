//! Flat `key = value` run configuration with a fixed key registry.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::diffcore::ConfigSnapshot;
use crate::embedding::{parse_ops, Summarizer};
use crate::episodic::{BatchSize, LossKind, TrainConfig, TrainingMode};
use crate::error::{Error, Result};
use crate::eval::ICC_VARIANT;
use crate::features::{default_au_names, SynthSpec};
use crate::model::ModelConfig;
use crate::relation::{Comparison, RelationInit};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    /// Unsigned integer, with a lower bound.
    Count(u64),
    /// Real number within a closed range.
    Real(f64, f64),
    /// Real number within a half-open range `(lo, hi]`.
    RealOpen(f64, f64),
    Choice(&'static [&'static str]),
    Operators,
    Columns,
    BatchSize,
    CountList,
    Path,
}

/// One registered configuration key.
#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
    kind: Kind,
}

const fn spec(key: &'static str, default: &'static str, kind: Kind, help: &'static str) -> KeySpec {
    KeySpec {
        key,
        default,
        help,
        kind,
    }
}

/// Every key accepted in config files and as `--<key>` flags.
pub const KEYS: &[KeySpec] = &[
    spec(
        "seed",
        "0",
        Kind::Count(0),
        "run seed (model init, sampling, folds)",
    ),
    spec(
        "data.manifest",
        "",
        Kind::Path,
        "manifest of a dataset on disk",
    ),
    spec(
        "data.au_columns",
        "all",
        Kind::Columns,
        "AU columns to read, comma-separated, or `all`",
    ),
    spec("synth.subjects", "25", Kind::Count(1), "synthetic subjects"),
    spec(
        "synth.videos_per_class",
        "12",
        Kind::Count(1),
        "synthetic videos per VAS level",
    ),
    spec(
        "synth.min_frames",
        "64",
        Kind::Count(1),
        "shortest synthetic video",
    ),
    spec(
        "synth.max_frames",
        "160",
        Kind::Count(1),
        "longest synthetic video",
    ),
    spec(
        "synth.signal_strength",
        "1",
        Kind::Real(0.0, 1e6),
        "pain burst scale (0 = null dataset)",
    ),
    spec(
        "synth.seed",
        "0",
        Kind::Count(0),
        "synthetic generator seed",
    ),
    spec("gru.hidden", "16", Kind::Count(1), "GRU hidden size"),
    spec("segment.length", "16", Kind::Count(1), "frames per segment"),
    spec(
        "stats.operators",
        "mean,std,lse,median",
        Kind::Operators,
        "statistical layer operators, in order",
    ),
    spec(
        "embedding.summarizer",
        "stats",
        Kind::Choice(&["stats", "stacked_gru"]),
        "segment summarizer",
    ),
    spec(
        "dropout.p",
        "0.5",
        Kind::Real(0.0, 0.999),
        "dropout probability",
    ),
    spec(
        "bn.momentum",
        "0.1",
        Kind::Real(0.0, 1.0),
        "batch-norm running-stat momentum",
    ),
    spec(
        "bn.eps",
        "1e-5",
        Kind::RealOpen(0.0, 1.0),
        "batch-norm epsilon",
    ),
    spec(
        "relation.comparison",
        "euccos",
        Kind::Choice(&["euccos", "subt", "mult", "nn", "submultnn"]),
        "comparison layer variant",
    ),
    spec(
        "relation.init",
        "probe",
        Kind::Choice(&["probe", "uniform"]),
        "relation MLP init (`uniform`: plain fan-in uniform)",
    ),
    spec(
        "train.episodes",
        "1500",
        Kind::Count(1),
        "training episodes",
    ),
    spec(
        "train.accumulate_every",
        "5",
        Kind::Count(1),
        "episodes per optimizer step",
    ),
    spec(
        "train.lr",
        "0.005",
        Kind::RealOpen(0.0, 10.0),
        "ADAM learning rate",
    ),
    spec(
        "train.clip",
        "1",
        Kind::RealOpen(0.0, 1e6),
        "global gradient-norm clip",
    ),
    spec(
        "train.eval_every",
        "50",
        Kind::Count(1),
        "episodes between validation passes",
    ),
    spec(
        "train.loss",
        "wbce",
        Kind::Choice(&["wbce", "bce"]),
        "training loss",
    ),
    spec(
        "train.noise_sigma",
        "0.05",
        Kind::Real(0.0, 10.0),
        "Gaussian augmentation std",
    ),
    spec(
        "train.batch_size",
        "auto",
        Kind::BatchSize,
        "batch size for batch mode, or `auto`",
    ),
    spec(
        "train.batch_candidates",
        "5,10,20",
        Kind::CountList,
        "batch sizes tried by `auto`",
    ),
    spec(
        "training.mode",
        "episode",
        Kind::Choice(&["episode", "batch"]),
        "training regime",
    ),
    spec(
        "eval.sample_sets",
        "5",
        Kind::Count(1),
        "sample sets per query (odd)",
    ),
    spec(
        "eval.icc_variant",
        ICC_VARIANT,
        Kind::Choice(&[ICC_VARIANT]),
        "ICC variant (fixed)",
    ),
    spec("cv.folds", "5", Kind::Count(2), "cross-validation folds"),
    spec(
        "cv.val_count",
        "10",
        Kind::Count(1),
        "validation videos per trial",
    ),
    spec(
        "cv.trial",
        "0",
        Kind::Count(0),
        "trial index used by `train`",
    ),
];

/// Keys that determine parameter shapes; stored in checkpoints.
pub const MODEL_KEYS: &[&str] = &[
    "data.au_columns",
    "gru.hidden",
    "segment.length",
    "stats.operators",
    "embedding.summarizer",
    "dropout.p",
    "bn.momentum",
    "bn.eps",
    "relation.comparison",
    "relation.init",
];

pub fn key_spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.key == key)
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key} = {value:?}: {why}"))
}

fn check_value(spec: &KeySpec, value: &str) -> Result<()> {
    let key = spec.key;
    match spec.kind {
        Kind::Count(min) => {
            let n: u64 = value
                .parse()
                .map_err(|_| bad(key, value, "expected an unsigned integer"))?;
            if n < min {
                return Err(bad(key, value, format!("must be at least {min}")));
            }
        }
        Kind::Real(lo, hi) | Kind::RealOpen(lo, hi) => {
            let x: f64 = value
                .parse()
                .map_err(|_| bad(key, value, "expected a number"))?;
            let open = matches!(spec.kind, Kind::RealOpen(..));
            let ok = x.is_finite() && x <= hi && if open { x > lo } else { x >= lo };
            if !ok {
                let lb = if open { "(" } else { "[" };
                return Err(bad(key, value, format!("must lie in {lb}{lo}, {hi}]")));
            }
        }
        Kind::Choice(options) => {
            if !options.contains(&value) {
                return Err(bad(
                    key,
                    value,
                    format!("expected one of {}", options.join("|")),
                ));
            }
        }
        Kind::Operators => {
            parse_ops(value).map_err(|e| bad(key, value, e))?;
        }
        Kind::Columns => {
            columns(value).map_err(|e| bad(key, value, e))?;
        }
        Kind::BatchSize => {
            if value != "auto" {
                let n: usize = value
                    .parse()
                    .map_err(|_| bad(key, value, "expected `auto` or an integer"))?;
                if n == 0 {
                    return Err(bad(key, value, "must be positive"));
                }
            }
        }
        Kind::CountList => {
            count_list(value).map_err(|e| bad(key, value, e))?;
        }
        Kind::Path => {}
    }
    Ok(())
}

fn columns(value: &str) -> Result<Vec<String>> {
    if value == "all" {
        return Ok(default_au_names());
    }
    let cols: Vec<String> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    if cols.is_empty() {
        return Err(Error::Config("empty column list".into()));
    }
    for (i, c) in cols.iter().enumerate() {
        if cols[..i].contains(c) {
            return Err(Error::Config(format!("column {c} listed twice")));
        }
    }
    Ok(cols)
}

fn count_list(value: &str) -> Result<Vec<usize>> {
    let list = value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Config(format!("bad entry {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if list.is_empty() {
        return Err(Error::Config("empty list".into()));
    }
    Ok(list)
}

/// Resolved configuration: every registered key holds a validated value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS
                .iter()
                .map(|k| (k.key, k.default.to_string()))
                .collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let spec = key_spec(key).ok_or_else(|| Error::Config(format!("unknown key {key}")))?;
        let value = value.trim();
        check_value(spec, value)?;
        self.values.insert(spec.key, value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("unknown key {key}")))
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_config(e))))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_config(e))))
    }

    /// Sets the run seed and the synthetic generator seed together.
    pub fn set_seed(&mut self, seed: u64) {
        let s = seed.to_string();
        self.values.insert("seed", s.clone());
        self.values.insert("synth.seed", s);
    }

    /// Cross-key checks; call once all overrides are applied.
    pub fn validate(&self) -> Result<()> {
        if self.usize("synth.min_frames")? > self.usize("synth.max_frames")? {
            return Err(Error::Config(
                "synth.min_frames exceeds synth.max_frames".into(),
            ));
        }
        if self.usize("eval.sample_sets")? % 2 == 0 {
            return Err(Error::Config("eval.sample_sets must be odd".into()));
        }
        if self.usize("cv.trial")? >= self.usize("cv.folds")? {
            return Err(Error::Config("cv.trial must be below cv.folds".into()));
        }
        if self.usize("synth.min_frames")? < self.usize("segment.length")? {
            return Err(Error::Config(
                "synth.min_frames is shorter than one segment".into(),
            ));
        }
        Ok(())
    }

    /// All keys as sorted `key = value` lines.
    pub fn resolved(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn snapshot(&self) -> ConfigSnapshot {
        self.values
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    /// The shape-relevant subset of a snapshot, as stored in checkpoints.
    pub fn model_snapshot(&self) -> ConfigSnapshot {
        MODEL_KEYS
            .iter()
            .map(|k| (k.to_string(), self.values[k].clone()))
            .collect()
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse().map_err(|_| bad(key, v, "unparsable"))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.parsed(key)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parsed(key)
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.parsed(key)
    }

    pub fn seed(&self) -> u64 {
        self.u64("seed").expect("validated seed")
    }

    pub fn au_columns(&self) -> Result<Vec<String>> {
        columns(self.get("data.au_columns")?)
    }

    pub fn manifest(&self) -> Option<&Path> {
        let v = self.values["data.manifest"].as_str();
        (!v.is_empty()).then(|| Path::new(v))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let summarizer = match self.get("embedding.summarizer")? {
            "stacked_gru" => Summarizer::StackedGru,
            _ => Summarizer::Stats(parse_ops(self.get("stats.operators")?)?),
        };
        Ok(ModelConfig {
            au_count: self.au_columns()?.len(),
            hidden: self.usize("gru.hidden")?,
            seg_len: self.usize("segment.length")?,
            summarizer,
            dropout: self.f64("dropout.p")?,
            bn_momentum: self.f64("bn.momentum")?,
            bn_eps: self.f64("bn.eps")?,
            comparison: Comparison::from_str(self.get("relation.comparison")?)?,
            relation_init: RelationInit::from_str(self.get("relation.init")?)?,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let batch_size = match self.get("train.batch_size")? {
            "auto" => BatchSize::Auto(count_list(self.get("train.batch_candidates")?)?),
            n => BatchSize::Fixed(
                n.parse()
                    .map_err(|_| bad("train.batch_size", n, "unparsable"))?,
            ),
        };
        Ok(TrainConfig {
            episodes: self.usize("train.episodes")?,
            accumulate_every: self.usize("train.accumulate_every")?,
            lr: self.f64("train.lr")?,
            clip: self.f64("train.clip")?,
            eval_every: self.usize("train.eval_every")?,
            eval_sample_sets: self.usize("eval.sample_sets")?,
            loss: LossKind::from_str(self.get("train.loss")?)?,
            mode: TrainingMode::from_str(self.get("training.mode")?)?,
            batch_size,
            noise_sigma: self.f64("train.noise_sigma")?,
            seed: self.seed(),
        })
    }

    pub fn synth_spec(&self) -> Result<SynthSpec> {
        Ok(SynthSpec {
            subjects: self.usize("synth.subjects")?,
            videos_per_class: self.usize("synth.videos_per_class")?,
            min_frames: self.usize("synth.min_frames")?,
            max_frames: self.usize("synth.max_frames")?,
            signal_strength: self.f64("synth.signal_strength")?,
            seed: self.u64("synth.seed")?,
        })
    }
}

fn strip_config(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
