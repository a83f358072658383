use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ParamSet;
use crate::error::{Error, Result};

/// Denominator floor of the relative error. Central differences at step 1e-5
/// carry about 1e-11 of round-off per unit of output, so smaller gradients
/// are effectively compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

/// A layer with an explicit forward/backward pair.
///
/// `backward` consumes the transcript of the matching `forward` call, adds
/// parameter gradients into the layer's tensors and returns the input gradient.
pub trait Layer: ParamSet {
    type Transcript;

    fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Self::Transcript)>;

    fn backward(&mut self, transcript: &Self::Transcript, upstream: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub max_rel_error: f64,
    /// Where the largest error occurred, e.g. `input[3]` or `gru.w_hh[17]`.
    pub worst: String,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Compares analytic input and parameter gradients against central finite
/// differences of a scalar reduction `Σ wᵢ·outᵢ` (fixed pseudo-random `w`).
///
/// Relative error is `|a − n| / max(|a|, |n|, REL_FLOOR)`; the check passes iff the
/// largest one is at most `tol`.
pub fn fd_check<L: Layer>(
    layer: &mut L,
    input: &[f64],
    step: f64,
    tol: f64,
) -> Result<CheckReport> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let (out, transcript) = layer.forward(input)?;
    ensure_finite(&out, "forward output")?;
    let mut wrng = ChaCha8Rng::seed_from_u64(0x5eed_fdc4);
    let weights: Vec<f64> = (0..out.len())
        .map(|_| wrng.random_range(0.5..1.5))
        .collect();

    layer.zero_grad();
    let d_input = layer.backward(&transcript, &weights);
    ensure_finite(&d_input, "input gradient")?;
    let analytic_params: Vec<Vec<f64>> = layer.params().iter().map(|p| p.grad.clone()).collect();

    let reduce = |layer: &L, x: &[f64]| -> Result<f64> {
        let (o, _) = layer.forward(x)?;
        let s: f64 = o.iter().zip(&weights).map(|(a, b)| a * b).sum();
        if s.is_finite() {
            Ok(s)
        } else {
            Err(Error::NonFinite("finite-difference probe".into()))
        }
    };

    let mut report = CheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
        tol,
        passed: true,
    };
    let record = |report: &mut CheckReport, a: f64, n: f64, at: String| {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = rel;
            report.worst = at;
        }
    };

    let mut x = input.to_vec();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let fp = reduce(layer, &x)?;
        x[i] = orig - step;
        let fm = reduce(layer, &x)?;
        x[i] = orig;
        record(
            &mut report,
            d_input[i],
            (fp - fm) / (2.0 * step),
            format!("input[{i}]"),
        );
    }

    let n_params = layer.params().len();
    for pi in 0..n_params {
        let (name, len, learnable) = {
            let p = &layer.params()[pi];
            (p.name.clone(), p.len(), p.learnable)
        };
        if !learnable {
            continue;
        }
        for j in 0..len {
            let orig = layer.params()[pi].values[j];
            layer.params_mut()[pi].values[j] = orig + step;
            let fp = reduce(layer, input)?;
            layer.params_mut()[pi].values[j] = orig - step;
            let fm = reduce(layer, input)?;
            layer.params_mut()[pi].values[j] = orig;
            record(
                &mut report,
                analytic_params[pi][j],
                (fp - fm) / (2.0 * step),
                format!("{name}[{j}]"),
            );
        }
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}

fn ensure_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::ParamTensor;

    struct Identity;

    impl ParamSet for Identity {
        fn params(&self) -> Vec<&ParamTensor> {
            vec![]
        }
        fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
            vec![]
        }
    }

    impl Layer for Identity {
        type Transcript = ();
        fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ())> {
            Ok((input.to_vec(), ()))
        }
        fn backward(&mut self, _: &(), upstream: &[f64]) -> Vec<f64> {
            upstream.to_vec()
        }
    }

    /// `y = w ⊙ x²`, optionally with a doubled backward.
    struct Square {
        w: ParamTensor,
        corrupt: bool,
    }

    impl ParamSet for Square {
        fn params(&self) -> Vec<&ParamTensor> {
            vec![&self.w]
        }
        fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
            vec![&mut self.w]
        }
    }

    impl Layer for Square {
        type Transcript = Vec<f64>;
        fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
            Ok((
                x.iter()
                    .zip(&self.w.values)
                    .map(|(x, w)| w * x * x)
                    .collect(),
                x.to_vec(),
            ))
        }
        fn backward(&mut self, x: &Vec<f64>, up: &[f64]) -> Vec<f64> {
            let k = if self.corrupt { 2.0 } else { 1.0 };
            for i in 0..x.len() {
                self.w.grad[i] += up[i] * x[i] * x[i];
            }
            (0..x.len())
                .map(|i| k * up[i] * 2.0 * self.w.values[i] * x[i])
                .collect()
        }
    }

    #[test]
    fn identity_is_exact() {
        let r = fd_check(&mut Identity, &[0.3, -1.2, 4.0], 1e-5, 1e-4).unwrap();
        assert!(r.passed);
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn corrupted_backward_fails() {
        let mut good = Square {
            w: ParamTensor::filled("w", &[2], 0.7),
            corrupt: false,
        };
        assert!(
            fd_check(&mut good, &[0.5, -1.5], 1e-5, 1e-4)
                .unwrap()
                .passed
        );
        let mut bad = Square {
            w: ParamTensor::filled("w", &[2], 0.7),
            corrupt: true,
        };
        let r = fd_check(&mut bad, &[0.5, -1.5], 1e-5, 1e-4).unwrap();
        assert!(!r.passed);
        assert!(r.worst.starts_with("input"));
    }

    #[test]
    fn rejects_bad_step() {
        assert!(fd_check(&mut Identity, &[1.0], 0.0, 1e-4).is_err());
    }
}
