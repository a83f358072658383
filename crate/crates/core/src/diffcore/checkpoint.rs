//! Line-oriented text checkpoints.
//!
//! ```text
//! painnet-ckpt v1
//! <name> <dims...>
//! <values, 17 significant digits>
//! ...
//! ---
//! optimizer <t>
//! m <name> <dims...>
//! <values>
//! v <name> <dims...>
//! <values>
//! ...
//! ---
//! <key> = <value>
//! ```

use std::fs;
use std::path::Path;

use super::{OptimizerState, ParamTensor};
use crate::error::{Error, Result};

const HEADER: &str = "painnet-ckpt v1";
const SEPARATOR: &str = "---";

/// Flat key/value snapshot of the configuration a checkpoint was trained with.
pub type ConfigSnapshot = Vec<(String, String)>;

fn push_values(out: &mut String, values: &[f64]) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        out.push_str(&format!("{v:.16e}"));
    }
    out.push('\n');
}

fn dims(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_checkpoint(
    params: &[&ParamTensor],
    state: &OptimizerState,
    meta: &ConfigSnapshot,
) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    for p in params {
        out.push_str(&format!("{} {}\n", p.name, dims(&p.shape)));
        push_values(&mut out, &p.values);
    }
    out.push_str(SEPARATOR);
    out.push('\n');
    out.push_str(&format!("optimizer {}\n", state.t));
    for i in 0..state.names.len() {
        for (tag, moments) in [("m", &state.m[i]), ("v", &state.v[i])] {
            out.push_str(&format!(
                "{tag} {} {}\n",
                state.names[i],
                dims(&state.shapes[i])
            ));
            push_values(&mut out, moments);
        }
    }
    out.push_str(SEPARATOR);
    out.push('\n');
    for (k, v) in meta {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}

pub fn save_checkpoint(
    path: &Path,
    params: &[&ParamTensor],
    state: &OptimizerState,
    meta: &ConfigSnapshot,
) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, write_checkpoint(params, state, meta)).map_err(|e| Error::io(path, e))
}

struct Lines<'a> {
    inner: std::str::Lines<'a>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str> {
        self.line += 1;
        self.inner
            .next()
            .ok_or_else(|| Error::Truncated(format!("missing {what} at line {}", self.line)))
    }
}

fn parse_values(line: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    let values = line
        .split_ascii_whitespace()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Truncated(format!("bad number {s:?} in {what}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "{what}: expected {expected} values, found {}",
            values.len()
        )));
    }
    Ok(values)
}

fn check_header(line: &str, name: &str, shape: &[usize]) -> Result<()> {
    let mut parts = line.split_ascii_whitespace();
    let found = parts.next().unwrap_or("");
    let found_shape: Vec<usize> = parts.filter_map(|d| d.parse().ok()).collect();
    if found != name || found_shape != shape {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint has {found} {found_shape:?}, model expects {name} {shape:?}"
        )));
    }
    Ok(())
}

/// Parses a checkpoint into `template`, whose names and shapes must match.
pub fn read_checkpoint(
    text: &str,
    template: &mut [&mut ParamTensor],
) -> Result<(OptimizerState, ConfigSnapshot)> {
    let mut lines = Lines {
        inner: text.lines(),
        line: 0,
    };
    let header = lines.next("header")?;
    if header != HEADER {
        return Err(Error::CheckpointVersion(header.to_string()));
    }

    for p in template.iter_mut() {
        let head = lines.next("tensor header")?;
        if head == SEPARATOR {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint lacks tensor {}",
                p.name
            )));
        }
        check_header(head, &p.name, &p.shape)?;
        p.values = parse_values(lines.next("tensor values")?, p.len(), &p.name)?;
        p.zero_grad();
    }
    let sep = lines.next("optimizer separator")?;
    if sep != SEPARATOR {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint has extra tensor {}",
            sep.split_ascii_whitespace().next().unwrap_or("")
        )));
    }

    let refs: Vec<&ParamTensor> = template.iter().map(|p| &**p).collect();
    let mut state = OptimizerState::new(&refs);
    let opt = lines.next("optimizer header")?;
    state.t = opt
        .strip_prefix("optimizer ")
        .and_then(|t| t.trim().parse().ok())
        .ok_or_else(|| Error::Truncated(format!("bad optimizer header {opt:?}")))?;
    for i in 0..state.names.len() {
        let name = state.names[i].clone();
        let shape = state.shapes[i].clone();
        let n: usize = shape.iter().product();
        for tag in ["m", "v"] {
            let head = lines.next("moment header")?;
            let rest = head
                .strip_prefix(tag)
                .map(str::trim_start)
                .ok_or_else(|| Error::Truncated(format!("expected {tag} moments for {name}")))?;
            check_header(rest, &name, &shape)?;
            let values = parse_values(lines.next("moment values")?, n, &name)?;
            if tag == "m" {
                state.m[i] = values;
            } else {
                state.v[i] = values;
            }
        }
    }
    if lines.next("config separator")? != SEPARATOR {
        return Err(Error::Truncated("optimizer section overruns".into()));
    }
    let meta = lines
        .inner
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once(" = ")
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Truncated(format!("bad config line {l:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((state, meta))
}

pub fn load_checkpoint(
    path: &Path,
    template: &mut [&mut ParamTensor],
) -> Result<(OptimizerState, ConfigSnapshot)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&text, template)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensors() -> Vec<ParamTensor> {
        let mut a = ParamTensor::zeros("a", &[2, 3]);
        a.values = vec![0.1, -1.0 / 3.0, 1e-300, -0.0, 7.25, std::f64::consts::PI];
        let b = ParamTensor::buffer("b.running", &[2], 1.0);
        vec![a, b]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ps = tensors();
        let refs: Vec<&ParamTensor> = ps.iter().collect();
        let mut state = OptimizerState::new(&refs);
        state.t = 12;
        state.m[0][1] = 1.0 / 7.0;
        state.v[0][5] = 2.0f64.sqrt();
        let meta = vec![("gru.hidden".to_string(), "16".to_string())];
        let text = write_checkpoint(&refs, &state, &meta);

        let mut fresh = [
            ParamTensor::zeros("a", &[2, 3]),
            ParamTensor::buffer("b.running", &[2], 0.0),
        ];
        let mut slots: Vec<&mut ParamTensor> = fresh.iter_mut().collect();
        let (st2, meta2) = read_checkpoint(&text, &mut slots).unwrap();
        for (x, y) in fresh.iter().zip(&ps) {
            let xb: Vec<u64> = x.values.iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        assert_eq!(st2, state);
        assert_eq!(meta2, meta);
        let again: Vec<&ParamTensor> = fresh.iter().collect();
        assert_eq!(write_checkpoint(&again, &st2, &meta2), text);
    }

    #[test]
    fn shape_and_version_errors() {
        let ps = tensors();
        let refs: Vec<&ParamTensor> = ps.iter().collect();
        let text = write_checkpoint(&refs, &OptimizerState::new(&refs), &vec![]);

        let mut wrong = [
            ParamTensor::zeros("a", &[3, 3]),
            ParamTensor::buffer("b.running", &[2], 0.0),
        ];
        let mut slots: Vec<&mut ParamTensor> = wrong.iter_mut().collect();
        assert!(matches!(
            read_checkpoint(&text, &mut slots),
            Err(Error::ShapeMismatch(_))
        ));

        let v2 = text.replacen("painnet-ckpt v1", "painnet-ckpt v2", 1);
        let mut ok = tensors();
        let mut slots: Vec<&mut ParamTensor> = ok.iter_mut().collect();
        assert!(matches!(
            read_checkpoint(&v2, &mut slots),
            Err(Error::CheckpointVersion(_))
        ));

        let cut: String = text.lines().take(3).collect::<Vec<_>>().join("\n");
        assert!(matches!(
            read_checkpoint(&cut, &mut slots),
            Err(Error::Truncated(_))
        ));
    }
}
