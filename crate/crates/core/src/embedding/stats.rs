use std::fmt;
use std::str::FromStr;

use crate::diffcore::{Layer, ParamSet, ParamTensor};
use crate::error::{Error, Result};

/// Column-wise pooling operator of the statistical layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StatOp {
    Mean,
    Median,
    Std,
    Lse,
    Min,
    Max,
}

impl StatOp {
    pub const ALL: [StatOp; 6] = [
        StatOp::Mean,
        StatOp::Median,
        StatOp::Std,
        StatOp::Lse,
        StatOp::Min,
        StatOp::Max,
    ];

    /// The default operator list, in flattening order.
    pub fn defaults() -> Vec<StatOp> {
        vec![StatOp::Mean, StatOp::Std, StatOp::Lse, StatOp::Median]
    }

    pub fn name(self) -> &'static str {
        match self {
            StatOp::Mean => "mean",
            StatOp::Median => "median",
            StatOp::Std => "std",
            StatOp::Lse => "lse",
            StatOp::Min => "min",
            StatOp::Max => "max",
        }
    }
}

impl fmt::Display for StatOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StatOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StatOp::ALL
            .into_iter()
            .find(|op| op.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown statistical operator {s:?}")))
    }
}

/// Parses a comma-separated operator list, rejecting empties and repeats.
pub fn parse_ops(list: &str) -> Result<Vec<StatOp>> {
    let ops = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(StatOp::from_str)
        .collect::<Result<Vec<_>>>()?;
    if ops.is_empty() {
        return Err(Error::Config("empty operator list".into()));
    }
    for (i, op) in ops.iter().enumerate() {
        if ops[..i].contains(op) {
            return Err(Error::Config(format!("operator {op} listed twice")));
        }
    }
    Ok(ops)
}

#[derive(Debug, Clone)]
enum OpCache {
    Mean,
    Median(Vec<(usize, Option<usize>)>),
    Std { mean: Vec<f64>, std: Vec<f64> },
    Lse(Vec<f64>),
    Arg(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct StatTranscript {
    m: usize,
    d: usize,
    q: Vec<f64>,
    caches: Vec<OpCache>,
}

fn column(q: &[f64], d: usize, i: usize) -> impl Iterator<Item = f64> + '_ {
    q.iter().skip(i).step_by(d).copied()
}

/// Sums in ascending order so the result does not depend on row order.
fn sorted_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

/// Pools an `M × d` matrix column-wise into a `k × d` matrix (one row per
/// operator, in the given order), returned flattened row-major.
pub fn statistical_layer(
    q: &[f64],
    m: usize,
    d: usize,
    ops: &[StatOp],
) -> (Vec<f64>, StatTranscript) {
    assert!(
        m >= 1 && q.len() == m * d,
        "statistical layer expects an M×d matrix with M ≥ 1"
    );
    let mf = m as f64;
    let means: Vec<f64> = (0..d).map(|i| sorted_sum(column(q, d, i)) / mf).collect();
    let mut out = Vec::with_capacity(ops.len() * d);
    let mut caches = Vec::with_capacity(ops.len());
    for &op in ops {
        match op {
            StatOp::Mean => {
                out.extend_from_slice(&means);
                caches.push(OpCache::Mean);
            }
            StatOp::Std => {
                let std: Vec<f64> = (0..d)
                    .map(|i| {
                        let var = sorted_sum(column(q, d, i).map(|v| (v - means[i]).powi(2))) / mf;
                        var.sqrt()
                    })
                    .collect();
                out.extend_from_slice(&std);
                caches.push(OpCache::Std {
                    mean: means.clone(),
                    std,
                });
            }
            StatOp::Lse => {
                let mut weights = vec![0.0; m * d];
                for i in 0..d {
                    let peak = column(q, d, i).fold(f64::NEG_INFINITY, f64::max);
                    let total = sorted_sum(column(q, d, i).map(|v| (v - peak).exp()));
                    out.push(peak + total.ln());
                    for (r, v) in column(q, d, i).enumerate() {
                        weights[r * d + i] = (v - peak).exp() / total;
                    }
                }
                caches.push(OpCache::Lse(weights));
            }
            StatOp::Median => {
                let mut picks = Vec::with_capacity(d);
                for i in 0..d {
                    let col: Vec<f64> = column(q, d, i).collect();
                    let mut order: Vec<usize> = (0..m).collect();
                    // Stable: equal values keep their original (lower index first) order.
                    order.sort_by(|&x, &y| col[x].total_cmp(&col[y]));
                    if m % 2 == 1 {
                        let k = order[m / 2];
                        out.push(col[k]);
                        picks.push((k, None));
                    } else {
                        let (lo, hi) = (order[m / 2 - 1], order[m / 2]);
                        out.push(0.5 * (col[lo] + col[hi]));
                        picks.push((lo, Some(hi)));
                    }
                }
                caches.push(OpCache::Median(picks));
            }
            StatOp::Min | StatOp::Max => {
                let mut args = Vec::with_capacity(d);
                for i in 0..d {
                    let mut best = 0;
                    for (r, v) in column(q, d, i).enumerate() {
                        let cur = q[best * d + i];
                        let better = if op == StatOp::Min { v < cur } else { v > cur };
                        if better {
                            best = r;
                        }
                    }
                    out.push(q[best * d + i]);
                    args.push(best);
                }
                caches.push(OpCache::Arg(args));
            }
        }
    }
    (
        out,
        StatTranscript {
            m,
            d,
            q: q.to_vec(),
            caches,
        },
    )
}

/// Gradient of the pooled output w.r.t. the `M × d` input.
pub fn statistical_layer_backward(tr: &StatTranscript, upstream: &[f64]) -> Vec<f64> {
    let (m, d) = (tr.m, tr.d);
    let mf = m as f64;
    let mut dq = vec![0.0; m * d];
    for (k, cache) in tr.caches.iter().enumerate() {
        let up = &upstream[k * d..(k + 1) * d];
        match cache {
            OpCache::Mean => {
                for r in 0..m {
                    for i in 0..d {
                        dq[r * d + i] += up[i] / mf;
                    }
                }
            }
            OpCache::Std { mean, std } => {
                for r in 0..m {
                    for i in 0..d {
                        dq[r * d + i] +=
                            up[i] * (tr.q[r * d + i] - mean[i]) / (mf * std[i].max(1e-8));
                    }
                }
            }
            OpCache::Lse(weights) => {
                for r in 0..m {
                    for i in 0..d {
                        dq[r * d + i] += up[i] * weights[r * d + i];
                    }
                }
            }
            OpCache::Median(picks) => {
                for (i, &(lo, hi)) in picks.iter().enumerate() {
                    match hi {
                        None => dq[lo * d + i] += up[i],
                        Some(hi) => {
                            dq[lo * d + i] += 0.5 * up[i];
                            dq[hi * d + i] += 0.5 * up[i];
                        }
                    }
                }
            }
            OpCache::Arg(args) => {
                for (i, &r) in args.iter().enumerate() {
                    dq[r * d + i] += up[i];
                }
            }
        }
    }
    dq
}

/// Parameter-free adapter so the pooling can be gradient-checked.
#[derive(Debug, Clone)]
pub struct StatLayer {
    pub m: usize,
    pub d: usize,
    pub ops: Vec<StatOp>,
}

impl ParamSet for StatLayer {
    fn params(&self) -> Vec<&ParamTensor> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        Vec::new()
    }
}

impl Layer for StatLayer {
    type Transcript = StatTranscript;

    fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, StatTranscript)> {
        if input.len() != self.m * self.d {
            return Err(Error::DimensionMismatch {
                expected: self.m * self.d,
                got: input.len(),
            });
        }
        Ok(statistical_layer(input, self.m, self.d, &self.ops))
    }

    fn backward(&mut self, tr: &StatTranscript, upstream: &[f64]) -> Vec<f64> {
        statistical_layer_backward(tr, upstream)
    }
}
