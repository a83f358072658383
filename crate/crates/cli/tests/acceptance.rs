//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! nonzero when a criterion outside `NON_BLOCKING` fails. Set
//! `ACCEPTANCE_ONLY=1,3` to run a subset.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use painnet_core::embedding::statistical_layer;
use painnet_core::episodic::{class_weights, sample_episode, wbce_loss, ClassPool};
use painnet_core::eval::{cross_validate, icc, mae, rmse, run_trial, split_folds};
use painnet_core::features::synth_matrices;
use painnet_core::gradcheck::{run_suite, GradcheckOptions, DEFAULT_STEP, DEFAULT_TOL};
use painnet_core::{
    Dataset, Error, LossKind, ModelConfig, OptimizerState, PainNet, ParamSet, StatOp, Summarizer,
    SynthSpec, TrainConfig, TrainingMode, NUM_CLASSES,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reported but not gating: on the synthetic generator the ablation arms sit
/// within seed noise of each other (see README), so the verdict can flip.
const NON_BLOCKING: &[u32] = &[7];

const GRAD_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;
const GRAD_SEEDS: u64 = 10;
const GRAD_SECONDS: f64 = 60.0;
const STAT_TOL: f64 = 1e-12;
const STAT_CASES: usize = 1000;
const LOSS_TOL: f64 = 1e-5;
const SAMPLER_EPISODES: usize = 10_000;
const METRIC_TOL: f64 = 1e-9;
const METRIC_CASES: usize = 100;
const LEARN_VAL_ICC: f64 = 0.5;
const NULL_ICC: f64 = 0.2;
const LEARN_SECONDS: f64 = 600.0;
const ABLATION_SEEDS: u64 = 5;
const DETERMINISM_EPISODES: &str = "200";

type Check = fn() -> Outcome;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn synth(signal: f64, videos_per_class: usize, seed: u64) -> Dataset {
    let spec = SynthSpec {
        signal_strength: signal,
        videos_per_class,
        seed,
        ..SynthSpec::default()
    };
    let (records, matrices) = synth_matrices(&spec).expect("synthetic data");
    Dataset::from_matrices(records, matrices).expect("dataset")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    assert_eq!((DEFAULT_TOL, DEFAULT_STEP), (GRAD_TOL, GRAD_STEP));
    let summary = run_suite(&GradcheckOptions {
        seeds: GRAD_SEEDS,
        ..GradcheckOptions::default()
    })
    .expect("gradcheck runs");
    let secs = start.elapsed().as_secs_f64();
    let worst = summary
        .layers
        .iter()
        .map(|l| l.max_rel_error)
        .fold(0.0, f64::max);
    outcome(
        summary.passed() && secs < GRAD_SECONDS,
        format!(
            "{} layers x {GRAD_SEEDS} seeds, worst rel error {worst:.2e}, failures {:?}, {secs:.1}s",
            summary.layers.len(),
            summary.failures()
        ),
    )
}

fn brute_stat(col: &[f64], op: StatOp) -> f64 {
    let m = col.len() as f64;
    let mean = col.iter().sum::<f64>() / m;
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    match op {
        StatOp::Mean => mean,
        StatOp::Std => (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m).sqrt(),
        StatOp::Lse => {
            sorted[k - 1]
                + col
                    .iter()
                    .map(|v| (v - sorted[k - 1]).exp())
                    .sum::<f64>()
                    .ln()
        }
        StatOp::Median if k % 2 == 1 => sorted[k / 2],
        StatOp::Median => 0.5 * (sorted[k / 2 - 1] + sorted[k / 2]),
        StatOp::Min => sorted[0],
        StatOp::Max => sorted[k - 1],
    }
}

fn stat_layer_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut perm_violations = 0;
    for _ in 0..STAT_CASES {
        let m = rng.random_range(1..=8);
        let d = rng.random_range(1..=8);
        let q: Vec<f64> = (0..m * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (out, _) = statistical_layer(&q, m, d, &StatOp::ALL);
        for (k, &op) in StatOp::ALL.iter().enumerate() {
            for i in 0..d {
                let col: Vec<f64> = (0..m).map(|r| q[r * d + i]).collect();
                worst = worst.max((out[k * d + i] - brute_stat(&col, op)).abs());
            }
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut rng);
        let permuted: Vec<f64> = order
            .iter()
            .flat_map(|&r| q[r * d..(r + 1) * d].to_vec())
            .collect();
        if statistical_layer(&permuted, m, d, &StatOp::ALL).0 != out {
            perm_violations += 1;
        }
    }
    outcome(
        worst <= STAT_TOL && perm_violations == 0,
        format!("{STAT_CASES} matrices, max abs error {worst:.1e}, permutation violations {perm_violations}"),
    )
}

/// Direct evaluation of the weighted loss, independent of the library.
fn loss_oracle(p: &[f64], label: usize, weighted: bool) -> f64 {
    (0..NUM_CLASSES)
        .map(|c| {
            let w = if weighted {
                (label as f64 - c as f64).abs() + 1.0
            } else {
                1.0
            };
            let bce = if c == label {
                -p[c].ln()
            } else {
                -(1.0 - p[c]).ln()
            };
            w * bce
        })
        .sum::<f64>()
        / NUM_CLASSES as f64
}

fn loss_correctness() -> Outcome {
    let uniform = vec![1.0 / 11.0; NUM_CLASSES];
    let expected = loss_oracle(&uniform, 5, true);
    let (got, _) = wbce_loss(&uniform, 5, LossKind::Wbce);
    let weights_ok =
        class_weights(5, LossKind::Wbce) == [6., 5., 4., 3., 2., 1., 2., 3., 4., 5., 6.];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bce_gap: f64 = 0.0;
    for _ in 0..100 {
        let raw: Vec<f64> = (0..NUM_CLASSES)
            .map(|_| rng.random_range(0.01..1.0))
            .collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let label = rng.random_range(0..NUM_CLASSES);
        bce_gap = bce_gap.max(
            (wbce_loss(&p, label as u8, LossKind::Bce).0 - loss_oracle(&p, label, false)).abs(),
        );
    }
    outcome(
        (got - expected).abs() <= LOSS_TOL && weights_ok && bce_gap <= LOSS_TOL,
        format!("uniform T=5 loss {got:.6} (oracle {expected:.6}), weights ok {weights_ok}, bce max gap {bce_gap:.1e}"),
    )
}

fn sampler_invariants() -> Outcome {
    let ds = synth(1.0, 4, 0);
    // Drop class 2 so fallbacks are exercised too.
    let indices: Vec<usize> = (0..ds.len()).filter(|&i| ds.record(i).vas != 2).collect();
    let pool = ClassPool::new(&ds, &indices).expect("pool");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0;
    let mut fallbacks = 0;
    for _ in 0..SAMPLER_EPISODES {
        let ep = sample_episode(&pool, &mut rng).expect("episode");
        if ep.samples.videos.len() != NUM_CLASSES || ep.samples.videos.contains(&ep.query) {
            violations += 1;
        }
        for (c, &v) in ep.samples.videos.iter().enumerate() {
            let own = ds.record(v).vas as usize == c;
            if own == ep.samples.fallback[c] {
                violations += 1;
            }
            fallbacks += usize::from(ep.samples.fallback[c]);
        }
        if ep.y().iter().sum::<f64>() != 1.0 {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!(
            "{SAMPLER_EPISODES} episodes, {violations} violations, {fallbacks} flagged fallbacks"
        ),
    )
}

fn anova_icc(p: &[f64], t: &[f64]) -> f64 {
    let n = p.len() as f64;
    let grand = (p.iter().sum::<f64>() + t.iter().sum::<f64>()) / (2.0 * n);
    let (mp, mt) = (p.iter().sum::<f64>() / n, t.iter().sum::<f64>() / n);
    let sst: f64 = p.iter().chain(t).map(|x| (x - grand).powi(2)).sum();
    let ssr: f64 = p
        .iter()
        .zip(t)
        .map(|(a, b)| 2.0 * ((a + b) / 2.0 - grand).powi(2))
        .sum();
    let ssc = n * ((mp - grand).powi(2) + (mt - grand).powi(2));
    let bms = ssr / (n - 1.0);
    let ems = (sst - ssr - ssc) / (n - 1.0);
    (bms - ems) / (bms + ems)
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut order_violations = 0;
    let mut cases = 0;
    while cases < METRIC_CASES {
        let n = rng.random_range(2..=50);
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(0..=10) as f64).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0..=10) as f64).collect();
        let Some(got) = icc(&p, &t).expect("icc") else {
            continue;
        };
        cases += 1;
        let nf = n as f64;
        let m = p.iter().zip(&t).map(|(a, b)| (a - b).abs()).sum::<f64>() / nf;
        let r = (p
            .iter()
            .zip(&t)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / nf)
            .sqrt();
        let (gm, gr) = (mae(&p, &t).unwrap(), rmse(&p, &t).unwrap());
        worst = worst
            .max((got - anova_icc(&p, &t)).abs())
            .max((gm - m).abs())
            .max((gr - r).abs());
        order_violations += usize::from(gr < gm);
    }
    let t: Vec<f64> = (0..11).map(f64::from).collect();
    let perfect = icc(&t, &t).unwrap() == Some(1.0)
        && mae(&t, &t).unwrap() == 0.0
        && rmse(&t, &t).unwrap() == 0.0;
    outcome(
        worst <= METRIC_TOL && order_violations == 0 && perfect,
        format!("{METRIC_CASES} instances, max abs error {worst:.1e}, rmse<mae {order_violations}, perfect case ok {perfect}"),
    )
}

fn synthetic_learning() -> Outcome {
    let start = Instant::now();
    let ds = synth(1.0, 12, 0);
    let cfg = TrainConfig::default();
    let trial = &split_folds(&ds, 5, 10, cfg.seed).expect("folds").trials[0];
    let out = run_trial(&ModelConfig::default(), &cfg, &ds, trial).expect("trial");
    let val_icc = out.train.best_val.icc.unwrap_or(f64::NEG_INFINITY);

    let null = synth(0.0, 12, 0);
    let cv = cross_validate(&ModelConfig::default(), &cfg, &null, 5, 10).expect("null crossval");
    let null_icc = cv.report.icc.unwrap_or(0.0);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        val_icc > LEARN_VAL_ICC && out.test.mae < out.baseline_mae && null_icc.abs() < NULL_ICC && secs < LEARN_SECONDS,
        format!(
            "val icc {val_icc:.3}, test mae {:.3} vs majority {:.3}, null 5-fold mean icc {null_icc:.3}, {secs:.0}s",
            out.test.mae, out.baseline_mae
        ),
    )
}

fn ablation_directions() -> Outcome {
    let arms: [(&str, TrainingMode, Vec<StatOp>); 3] = [
        ("episode", TrainingMode::Episode, StatOp::defaults()),
        ("batch", TrainingMode::Batch, StatOp::defaults()),
        ("mean-only", TrainingMode::Episode, vec![StatOp::Mean]),
    ];
    let mut val: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut test: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for seed in 0..ABLATION_SEEDS {
        let ds = synth(1.0, 12, seed);
        let trial = &split_folds(&ds, 5, 10, seed).expect("folds").trials[0];
        for (name, mode, ops) in &arms {
            let model_cfg = ModelConfig {
                summarizer: Summarizer::Stats(ops.clone()),
                ..ModelConfig::default()
            };
            let cfg = TrainConfig {
                mode: *mode,
                seed,
                ..TrainConfig::default()
            };
            let out = run_trial(&model_cfg, &cfg, &ds, trial).expect("trial");
            val.entry(name)
                .or_default()
                .push(out.train.best_val.icc.unwrap_or(f64::NEG_INFINITY));
            test.entry(name)
                .or_default()
                .push(out.test.icc.unwrap_or(f64::NEG_INFINITY));
        }
    }
    let v = |k: &str| median(val[k].clone());
    let t = |k: &str| median(test[k].clone());
    let mode_ok = v("episode") > v("batch");
    let ops_ok = v("episode") > v("mean-only");
    outcome(
        mode_ok && ops_ok,
        format!(
            "median val icc: episode {:.4} vs batch {:.4} ({}), 4 ops {:.4} vs mean-only {:.4} ({}); median test icc: episode {:.3}, batch {:.3}, mean-only {:.3}; per-seed val icc {:?}",
            v("episode"),
            v("batch"),
            if mode_ok { "ok" } else { "reversed" },
            v("episode"),
            v("mean-only"),
            if ops_ok { "ok" } else { "reversed" },
            t("episode"),
            t("batch"),
            t("mean-only"),
            val.iter()
                .map(|(k, v)| format!("{k}: {}", v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")))
                .collect::<Vec<_>>(),
        ),
    )
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).expect("readable") {
            let p = entry.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "run.meta") {
                files.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        let args = [
            "painnet",
            "crossval",
            "--seed",
            "11",
            "--episodes",
            DETERMINISM_EPISODES,
            "--out",
            dir.to_str().unwrap(),
        ];
        painnet_cli::run(args, &mut Vec::new()).expect("crossval");
        trees.push(tree(&dir));
    }
    let files = trees[0].len();
    let ckpts = trees[0].keys().filter(|p| p.starts_with("ckpt")).count();
    let identical = trees[0] == trees[1];
    outcome(
        identical && ckpts == 5 && trees[0].contains_key(Path::new("report/metrics.jsonl")),
        format!("two crossval runs ({DETERMINISM_EPISODES} episodes): {files} files incl. {ckpts} checkpoints, byte-identical {identical}"),
    )
}

fn checkpoint_round_trip() -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let model = PainNet::new(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(8));
    let mut state = OptimizerState::new(&model.params());
    state.t = 17;
    let meta = vec![("gru.hidden".to_string(), "16".to_string())];
    let (a, b) = (tmp.path().join("a.ckpt"), tmp.path().join("b.ckpt"));
    model.save(&a, &state, &meta).expect("save");
    let (loaded, loaded_state, loaded_meta) =
        PainNet::load(ModelConfig::default(), &a).expect("load");
    loaded
        .save(&b, &loaded_state, &loaded_meta)
        .expect("save again");
    let identical = fs::read(&a).unwrap() == fs::read(&b).unwrap();
    let mismatch = PainNet::load(
        ModelConfig {
            hidden: 8,
            ..ModelConfig::default()
        },
        &a,
    );
    let documented = matches!(mismatch, Err(Error::ShapeMismatch(_)));
    outcome(
        identical && documented,
        format!("save/load/save byte-identical {identical}, mismatched shapes give ShapeMismatch {documented}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, Check); 9] = [
        (1, "gradient correctness", gradient_correctness),
        (2, "statistical-layer oracle", stat_layer_oracle),
        (3, "loss correctness", loss_correctness),
        (4, "episode-sampler invariants", sampler_invariants),
        (5, "metric oracles", metric_oracles),
        (6, "synthetic learning check", synthetic_learning),
        (7, "ablation directions", ablation_directions),
        (8, "crossval determinism", determinism),
        (9, "checkpoint round trip", checkpoint_round_trip),
    ];
    let filter: Vec<u32> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut blocking = 0;
    for (id, name, check) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let o = check();
        let tag = if o.passed { "PASS" } else { "FAIL" };
        let note = if NON_BLOCKING.contains(&id) {
            " [non-blocking]"
        } else {
            ""
        };
        println!("criterion {id} {tag}{note}: {name}: {}", o.detail);
        if !o.passed && !NON_BLOCKING.contains(&id) {
            blocking += 1;
        }
    }
    if blocking > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
