//! Central finite-difference gradient checking.
//!
//! The numerical side only evaluates the function on untracked inputs, so it
//! is independent of every backward rule it checks.
//!
//! [`check`] uses one fixed step. [`check_extrapolated`] refines central
//! differences over a shrinking sequence of steps (Ridders' method), which
//! stays accurate both for coordinates with tiny gradients, where a small
//! step drowns in round-off, and for sharply curved ones, where a large step
//! carries truncation error.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

/// Compares the tape gradient of the scalar `f(inputs)` with central
/// differences of step `h`. When `max_samples` is set, that many coordinates
/// are drawn uniformly across all inputs; otherwise every coordinate is
/// checked.
pub fn check<F, R>(
    inputs: &[Tensor<f64>],
    f: F,
    h: f64,
    max_samples: Option<usize>,
    rng: &mut R,
) -> Result<GradReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    R: Rng + ?Sized,
{
    compare(inputs, f, max_samples, rng, |eval| {
        Ok((eval(h)? - eval(-h)?) / (2.0 * h))
    })
}

const RIDDERS_SHRINK: f64 = 1.4;
const RIDDERS_TABLE: usize = 10;
const RIDDERS_SAFE: f64 = 2.0;

/// Like [`check`], with each numerical derivative extrapolated from central
/// differences at steps `h0, h0/1.4, h0/1.4², …` (at most ten). This is done
/// for every `h0` in `starts`, and the estimate with the smallest error bound
/// is kept.
pub fn check_extrapolated<F, R>(
    inputs: &[Tensor<f64>],
    f: F,
    starts: &[f64],
    max_samples: Option<usize>,
    rng: &mut R,
) -> Result<GradReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    R: Rng + ?Sized,
{
    assert!(!starts.is_empty(), "no starting step");
    compare(inputs, f, max_samples, rng, |eval| {
        let mut best = (0.0, f64::INFINITY);
        for &h0 in starts {
            let (d, err) = ridders(eval, h0)?;
            if err < best.1 {
                best = (d, err);
            }
        }
        Ok(best.0)
    })
}

/// Derivative at 0 of `g` and its error estimate.
pub fn ridders(g: &mut dyn FnMut(f64) -> Result<f64>, h0: f64) -> Result<(f64, f64)> {
    let c2 = RIDDERS_SHRINK * RIDDERS_SHRINK;
    let mut table = [[0.0f64; RIDDERS_TABLE]; RIDDERS_TABLE];
    let mut h = h0;
    table[0][0] = (g(h)? - g(-h)?) / (2.0 * h);
    let (mut best, mut err) = (table[0][0], f64::INFINITY);
    for i in 1..RIDDERS_TABLE {
        h /= RIDDERS_SHRINK;
        table[0][i] = (g(h)? - g(-h)?) / (2.0 * h);
        let mut fac = c2;
        for j in 1..=i {
            table[j][i] = (table[j - 1][i] * fac - table[j - 1][i - 1]) / (fac - 1.0);
            fac *= c2;
            let e = (table[j][i] - table[j - 1][i])
                .abs()
                .max((table[j][i] - table[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = table[j][i];
            }
        }
        if (table[i][i] - table[i - 1][i - 1]).abs() >= RIDDERS_SAFE * err {
            break;
        }
    }
    Ok((best, err))
}

fn compare<F, R, N>(inputs: &[Tensor<f64>], f: F, max_samples: Option<usize>, rng: &mut R, mut numeric: N) -> Result<GradReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    R: Rng + ?Sized,
    N: FnMut(&mut dyn FnMut(f64) -> Result<f64>) -> Result<f64>,
{
    let tape = Tape::new();
    let tracked: Vec<Tensor<f64>> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let grads = f(&tracked)?.backward()?;
    let analytic: Vec<Vec<f64>> = tracked
        .iter()
        .map(|t| grads.get_or_zeros(t).to_vec())
        .collect();

    let offsets: Vec<usize> = inputs
        .iter()
        .scan(0, |acc, t| {
            let o = *acc;
            *acc += t.numel();
            Some(o)
        })
        .collect();
    let total: usize = inputs.iter().map(Tensor::numel).sum();
    let picks: Vec<usize> = match max_samples {
        Some(k) if k < total => {
            let mut v = sample(rng, total, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..total).collect(),
    };

    let mut report = GradReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let mut base: Vec<Tensor<f64>> = inputs.iter().map(Tensor::detach).collect();
    for flat in picks {
        let input = offsets.partition_point(|&o| o <= flat) - 1;
        let index = flat - offsets[input];
        let original = base[input].clone();
        let mut eval = |delta: f64| -> Result<f64> {
            let mut v = original.to_vec();
            v[index] += delta;
            base[input] = Tensor::from_vec(original.shape(), v)?;
            Ok(f(&base)?.item())
        };
        let numeric = numeric(&mut eval)?;
        base[input] = original;
        let a = analytic[input][index];
        let rel = relative_error(a, numeric);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some(Mismatch {
                input,
                index,
                analytic: a,
                numeric,
                rel_error: rel,
            });
        }
    }
    Ok(report)
}
