//! Command-line driver: `synth`, `train`, `crossval`, `predict`, `gradcheck`.
//!
//! Configuration is resolved as defaults, then the `--config` file, then
//! `--seed`, then `--<section>.<key>` flags and their short aliases. Every
//! value is validated before any work starts.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Arg, ArgAction, ArgMatches, Command};
use painnet_core::config::KEYS;
use painnet_core::eval::{self, FoldReport, MetricReport, Prediction};
use painnet_core::features::{
    center, load_manifest, load_video_features, synth_generate, synth_matrices,
};
use painnet_core::gradcheck::{run_suite, GradcheckOptions};
use painnet_core::{Dataset, PainNet, RunConfig, Trial};

/// Short flags that stand for registered keys.
pub const ALIASES: &[(&str, &str)] = &[
    ("videos-per-class", "synth.videos_per_class"),
    ("signal", "synth.signal_strength"),
    ("manifest", "data.manifest"),
    ("au-columns", "data.au_columns"),
    ("operators", "stats.operators"),
    ("comparison", "relation.comparison"),
    ("loss", "train.loss"),
    ("episodes", "train.episodes"),
    ("mode", "training.mode"),
    ("folds", "cv.folds"),
    ("trial", "cv.trial"),
];

/// Keys that must agree between a checkpoint and the predicting config.
const INFERENCE_KEYS: &[&str] = &[
    "data.au_columns",
    "gru.hidden",
    "segment.length",
    "stats.operators",
    "embedding.summarizer",
    "relation.comparison",
];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] painnet_core::Error),

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failing layers: {0}")]
    Gradcheck(String),
}

impl CliError {
    /// Machine-parsable category printed as `error[category]`.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Gradcheck(_) => "gradcheck",
        }
    }

    /// The message as a single line.
    pub fn line(&self) -> String {
        let category = self.category();
        let msg = self
            .to_string()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        let msg = msg.strip_prefix(&format!("{category}: ")).unwrap_or(&msg);
        format!("error[{category}]: {msg}")
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn common_args() -> Vec<Arg> {
    let mut args = vec![
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("flat `key = value` config file"),
        Arg::new("seed")
            .long("seed")
            .value_name("N")
            .help("run seed; also sets synth.seed"),
        Arg::new("out")
            .long("out")
            .value_name("DIR")
            .help("output directory"),
    ];
    // `seed` is covered by the global `--seed`.
    for k in KEYS.iter().filter(|k| k.key != "seed") {
        args.push(
            Arg::new(k.key)
                .long(k.key)
                .value_name("VALUE")
                .help(format!("{} [default: {}]", k.help, k.default))
                .hide(true),
        );
    }
    for (alias, key) in ALIASES {
        args.push(
            Arg::new(*alias)
                .long(*alias)
                .value_name("VALUE")
                .help(format!("same as --{key}")),
        );
    }
    args
}

pub fn command() -> Command {
    let keys_help: String = KEYS
        .iter()
        .map(|k| format!("  --{:<26} {} [default: {}]\n", k.key, k.help, k.default))
        .collect();
    Command::new("painnet")
        .about("Statistical relation network for VAS pain estimation from AU time series")
        .after_help(format!("Configuration keys (any subcommand):\n{keys_help}"))
        .subcommand_required(true)
        .subcommand(
            Command::new("synth")
                .about("Write a synthetic dataset (manifest, feature files, provenance)")
                .args(common_args()),
        )
        .subcommand(
            Command::new("train")
                .about("Train one cross-validation trial (cv.trial) and report its test metrics")
                .args(common_args()),
        )
        .subcommand(
            Command::new("crossval")
                .about("Run every cross-validation trial and write the metric report")
                .args(common_args()),
        )
        .subcommand(
            Command::new("predict")
                .about("Predict the VAS level of one feature file")
                .args(common_args())
                .arg(
                    Arg::new("checkpoint")
                        .long("checkpoint")
                        .value_name("FILE")
                        .required(true)
                        .help("checkpoint written by train or crossval"),
                )
                .arg(
                    Arg::new("video")
                        .long("video")
                        .value_name("FILE")
                        .required(true)
                        .help("feature file (CSV, one row per frame)"),
                )
                .arg(
                    Arg::new("emit-probs")
                        .long("emit-probs")
                        .action(ArgAction::SetTrue)
                        .help("print the per-sample-set probability table"),
                ),
        )
        .subcommand(
            Command::new("gradcheck")
                .about("Finite-difference check of every layer's backward pass")
                .args(common_args())
                .arg(
                    Arg::new("seeds")
                        .long("seeds")
                        .value_name("N")
                        .default_value("10"),
                )
                .arg(
                    Arg::new("inject-fault")
                        .long("inject-fault")
                        .value_name("LAYER")
                        .help("corrupt one layer's backward pass (harness self-test)"),
                ),
        )
}

/// Builds the resolved configuration of a subcommand.
pub fn resolve_config(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        cfg.apply_file(Path::new(path))?;
    }
    if let Some(seed) = m.get_one::<String>("seed") {
        let seed = seed.parse().map_err(|_| {
            painnet_core::Error::Config(format!("seed = {seed:?}: expected an unsigned integer"))
        })?;
        cfg.set_seed(seed);
    }
    for k in KEYS.iter().filter(|k| k.key != "seed") {
        if let Some(v) = m.get_one::<String>(k.key) {
            cfg.set(k.key, v)?;
        }
    }
    for (alias, key) in ALIASES {
        if let Some(v) = m.get_one::<String>(alias) {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(m: &ArgMatches) -> Option<PathBuf> {
    m.get_one::<String>("out").map(PathBuf::from)
}

fn require_out(m: &ArgMatches) -> Result<PathBuf> {
    out_dir(m).ok_or_else(|| CliError::Usage("--out is required".into()))
}

/// The dataset named by `data.manifest`, or an in-memory synthetic dataset
/// drawn from the `synth.*` keys when no manifest is set.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let columns = cfg.au_columns()?;
    if let Some(path) = cfg.manifest() {
        return Ok(load_manifest(path)?.with_columns(columns));
    }
    let (records, matrices) = synth_matrices(&cfg.synth_spec()?)?;
    let matrices = matrices
        .iter()
        .map(|m| m.select_columns(&columns))
        .collect::<painnet_core::Result<Vec<_>>>()?;
    Ok(Dataset::from_matrices(records, matrices)?)
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Timestamps live here so every other output stays byte-reproducible.
fn write_meta(dir: &Path, command: &str, started: u64) -> Result<()> {
    let text = format!(
        "command = {command}\nversion = {}\nstarted_unix = {started}\nfinished_unix = {}\n",
        env!("CARGO_PKG_VERSION"),
        unix_now()
    );
    write_file(&dir.join("run.meta"), text)
}

fn predictions_csv(preds: &[Prediction]) -> String {
    let mut s = String::from("video_id,truth,label,set_labels\n");
    for p in preds {
        let truth = p.truth.map(|t| t.to_string()).unwrap_or_default();
        let sets: Vec<String> = p.set_labels.iter().map(u8::to_string).collect();
        s.push_str(&format!(
            "{},{},{},{}\n",
            p.video_id,
            truth,
            p.label,
            sets.join(" ")
        ));
    }
    s
}

fn fmt_icc(icc: Option<f64>) -> String {
    icc.map(|v| format!("{v:.4}"))
        .unwrap_or_else(|| "undefined".into())
}

fn trial_of(cfg: &RunConfig, ds: &Dataset) -> Result<(usize, Trial)> {
    let index = cfg.usize("cv.trial")?;
    let split = eval::split_folds(
        ds,
        cfg.usize("cv.folds")?,
        cfg.usize("cv.val_count")?,
        cfg.seed(),
    )?;
    Ok((index, split.trials[index].clone()))
}

fn cmd_synth(m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(m)?;
    let dir = require_out(m)?;
    let spec = cfg.synth_spec()?;
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let ds = synth_generate(&spec, &dir)?;
    write_file(&dir.join("config.resolved"), cfg.resolved())?;
    let provenance = format!(
        "generator = painnet synth {}\nsubjects = {}\nvideos_per_class = {}\nmin_frames = {}\nmax_frames = {}\nsignal_strength = {}\nseed = {}\nvideos = {}\n",
        env!("CARGO_PKG_VERSION"),
        spec.subjects,
        spec.videos_per_class,
        spec.min_frames,
        spec.max_frames,
        spec.signal_strength,
        spec.seed,
        ds.len()
    );
    write_file(&dir.join("provenance.txt"), provenance)?;
    writeln!(out, "wrote {} videos to {}", ds.len(), dir.display()).map_err(io_err(&dir))?;
    Ok(())
}

fn cmd_train(m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let started = unix_now();
    let cfg = resolve_config(m)?;
    let dir = require_out(m)?;
    let ds = load_dataset(&cfg)?;
    let (index, trial) = trial_of(&cfg, &ds)?;
    let model_cfg = cfg.model_config()?;
    // Same seed as trial `index` of `crossval`.
    let mut train_cfg = cfg.train_config()?;
    train_cfg.seed = train_cfg.seed.wrapping_add(index as u64);

    write_file(&dir.join("config.resolved"), cfg.resolved())?;
    let outcome = eval::run_trial(&model_cfg, &train_cfg, &ds, &trial)?;
    write_file(&dir.join("train.log"), outcome.train.log_jsonl())?;
    let ckpt = dir.join("ckpt").join("best.ckpt");
    fs::create_dir_all(ckpt.parent().expect("has parent")).map_err(io_err(&dir))?;
    outcome
        .train
        .model
        .save(&ckpt, &outcome.train.optimizer, &cfg.model_snapshot())?;

    let fold = FoldReport {
        fold: index,
        n_test: outcome.predictions.len(),
        best_episode: outcome.train.best_episode,
        val: outcome.train.best_val.clone(),
        test: outcome.test.clone(),
        baseline_mae: outcome.baseline_mae,
    };
    let report = MetricReport::from_folds(
        train_cfg.seed,
        train_cfg.eval_sample_sets,
        vec![fold],
        &outcome.predictions,
    )?;
    write_report(&dir, &report, &outcome.predictions)?;
    write_meta(&dir, "train", started)?;
    let o = &outcome;
    writeln!(
        out,
        "trial {index}: best episode {}; val icc {} mae {:.3}; test icc {} mae {:.3} rmse {:.3} (majority baseline mae {:.3})",
        o.train.best_episode,
        fmt_icc(o.train.best_val.icc),
        o.train.best_val.mae,
        fmt_icc(o.test.icc),
        o.test.mae,
        o.test.rmse,
        o.baseline_mae
    )
    .map_err(io_err(&dir))?;
    Ok(())
}

fn write_report(dir: &Path, report: &MetricReport, preds: &[Prediction]) -> Result<()> {
    let rdir = dir.join("report");
    write_file(&rdir.join("metrics.jsonl"), report.to_jsonl())?;
    write_file(&rdir.join("intensity.csv"), report.intensity.to_csv())?;
    write_file(&rdir.join("predictions.csv"), predictions_csv(preds))
}

fn cmd_crossval(m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let started = unix_now();
    let cfg = resolve_config(m)?;
    let dir = require_out(m)?;
    let ds = load_dataset(&cfg)?;
    let model_cfg = cfg.model_config()?;
    let train_cfg = cfg.train_config()?;
    write_file(&dir.join("config.resolved"), cfg.resolved())?;
    let cv = eval::cross_validate(
        &model_cfg,
        &train_cfg,
        &ds,
        cfg.usize("cv.folds")?,
        cfg.usize("cv.val_count")?,
    )?;

    let mut log = String::new();
    for (i, t) in cv.trials.iter().enumerate() {
        for line in t.train.log_jsonl().lines() {
            let mut v: serde_json::Value = serde_json::from_str(line).expect("log line is JSON");
            v["trial"] = serde_json::json!(i);
            log.push_str(&format!("{v}\n"));
        }
        let ckpt = dir.join("ckpt").join(format!("trial{i}.ckpt"));
        fs::create_dir_all(ckpt.parent().expect("has parent")).map_err(io_err(&dir))?;
        t.train
            .model
            .save(&ckpt, &t.train.optimizer, &cfg.model_snapshot())?;
    }
    write_file(&dir.join("train.log"), log)?;
    let pooled: Vec<Prediction> = cv
        .trials
        .iter()
        .flat_map(|t| t.predictions.iter().cloned())
        .collect();
    write_report(&dir, &cv.report, &pooled)?;
    write_meta(&dir, "crossval", started)?;

    for f in &cv.report.folds {
        writeln!(
            out,
            "fold {}: n_test {} test icc {} mae {:.3} rmse {:.3}",
            f.fold,
            f.n_test,
            fmt_icc(f.test.icc),
            f.test.mae,
            f.test.rmse
        )
        .map_err(io_err(&dir))?;
    }
    writeln!(
        out,
        "mean: icc {} mae {:.3} rmse {:.3}",
        fmt_icc(cv.report.icc),
        cv.report.mae,
        cv.report.rmse
    )
    .map_err(io_err(&dir))?;
    Ok(())
}

fn cmd_predict(m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(m)?;
    let ckpt = PathBuf::from(m.get_one::<String>("checkpoint").expect("required"));
    let video = PathBuf::from(m.get_one::<String>("video").expect("required"));
    let (model, _, meta) = PainNet::load(cfg.model_config()?, &ckpt)?;
    let current = cfg.model_snapshot();
    for key in INFERENCE_KEYS {
        let stored = meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let wanted = current
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str());
        if stored.is_some() && stored != wanted {
            return Err(painnet_core::Error::ShapeMismatch(format!(
                "checkpoint was trained with {key} = {}, config has {}",
                stored.unwrap_or_default(),
                wanted.unwrap_or_default()
            ))
            .into());
        }
    }

    let ds = load_dataset(&cfg)?;
    let (index, trial) = trial_of(&cfg, &ds)?;
    let mut train_cfg = cfg.train_config()?;
    train_cfg.seed = train_cfg.seed.wrapping_add(index as u64);
    let (_, sets) = eval::test_sample_sets(&ds, &trial, &train_cfg)?;
    let embedded = eval::embed_sample_sets(&model, &ds, &sets)?;
    let fm = center(&load_video_features(&video, &cfg.au_columns()?)?);
    let query = model.embed(&fm)?;
    let id = video
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let pred = eval::predict(&model, &id, &query, &embedded, None)?;

    let mut text = format!("{}\n", pred.label);
    if m.get_flag("emit-probs") {
        let header: Vec<String> = (0..painnet_core::NUM_CLASSES)
            .map(|c| format!("p{c}"))
            .collect();
        text.push_str(&format!("set,argmax,{}\n", header.join(",")));
        for (s, (probs, label)) in pred.probs.iter().zip(&pred.set_labels).enumerate() {
            let cells: Vec<String> = probs.iter().map(|p| format!("{p:.6}")).collect();
            text.push_str(&format!("{s},{label},{}\n", cells.join(",")));
        }
    }
    out.write_all(text.as_bytes()).map_err(io_err(&video))?;
    Ok(())
}

fn cmd_gradcheck(m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let _ = resolve_config(m)?;
    let seeds = m.get_one::<String>("seeds").expect("has default");
    let opts = GradcheckOptions {
        seeds: seeds.parse().map_err(|_| {
            painnet_core::Error::Config(format!("seeds = {seeds:?}: expected an unsigned integer"))
        })?,
        inject_fault: m.get_one::<String>("inject-fault").cloned(),
        ..GradcheckOptions::default()
    };
    let summary = run_suite(&opts)?;
    let text = summary.to_text();
    if let Some(dir) = out_dir(m) {
        write_file(&dir.join("gradcheck.txt"), &text)?;
    }
    out.write_all(text.as_bytes())
        .map_err(io_err(Path::new("<stdout>")))?;
    if !summary.passed() {
        return Err(CliError::Gradcheck(summary.failures().join(", ")));
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the chosen subcommand.
/// Help and version requests are written to `out` and succeed.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            write!(out, "{}", e.render()).map_err(io_err(Path::new("<stdout>")))?;
            return Ok(());
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            return Err(CliError::Usage(
                first.trim_start_matches("error: ").to_string(),
            ));
        }
    };
    match matches.subcommand() {
        Some(("synth", m)) => cmd_synth(m, out),
        Some(("train", m)) => cmd_train(m, out),
        Some(("crossval", m)) => cmd_crossval(m, out),
        Some(("predict", m)) => cmd_predict(m, out),
        Some(("gradcheck", m)) => cmd_gradcheck(m, out),
        _ => Err(CliError::Usage("missing subcommand".into())),
    }
}
