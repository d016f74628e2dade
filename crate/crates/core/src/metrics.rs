//! Overlap and boundary-distance metrics on binary masks of any rank.

use serde::{Deserialize, Serialize};

use crate::error::{data, Result};
use crate::targets::Regions;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn confusion(pred: &[bool], truth: &[bool]) -> Result<Confusion> {
    if pred.len() != truth.len() {
        return Err(data(format!(
            "mask sizes differ: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut c = Confusion::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            _ => {}
        }
    }
    Ok(c)
}

/// `2TP / (FP + 2TP + FN)`; two empty masks score 1.
pub fn dice_score(pred: &[bool], truth: &[bool]) -> Result<f64> {
    let c = confusion(pred, truth)?;
    let denom = c.fp + 2 * c.tp + c.fn_;
    Ok(if denom == 0 { 1.0 } else { (2 * c.tp) as f64 / denom as f64 })
}

/// How a case's Dice is pooled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiceMode {
    /// All voxels of the case at once.
    #[default]
    Volume,
    /// Mean of per-slice scores (empty-vs-empty slices score 1).
    Slice,
}

/// Dice of `[D, plane]` masks under `mode`.
pub fn dice_pooled(pred: &[bool], truth: &[bool], plane: usize, mode: DiceMode) -> Result<f64> {
    match mode {
        DiceMode::Volume => dice_score(pred, truth),
        DiceMode::Slice => {
            if pred.len() != truth.len() || plane == 0 || !pred.len().is_multiple_of(plane) {
                return Err(data(format!("masks of {} voxels are not whole slices of {plane}", pred.len())));
            }
            let n = pred.len() / plane;
            if n == 0 {
                return Ok(1.0);
            }
            let mut sum = 0.0;
            for (p, t) in pred.chunks(plane).zip(truth.chunks(plane)) {
                sum += dice_score(p, t)?;
            }
            Ok(sum / n as f64)
        }
    }
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

fn check_dims(len: usize, dims: &[usize], spacing: &[f64]) -> Result<()> {
    if dims.iter().product::<usize>() != len {
        return Err(data(format!("mask of {len} voxels does not match dims {dims:?}")));
    }
    if spacing.len() != dims.len() {
        return Err(data(format!(
            "spacing {spacing:?} does not match rank {}",
            dims.len()
        )));
    }
    Ok(())
}

/// Foreground voxels with at least one background face neighbor; voxels on
/// the grid edge count as touching background.
pub fn boundary(mask: &[bool], dims: &[usize]) -> Vec<usize> {
    let st = strides(dims);
    let mut out = Vec::new();
    'voxel: for (i, &on) in mask.iter().enumerate() {
        if !on {
            continue;
        }
        for (axis, &n) in dims.iter().enumerate() {
            let c = (i / st[axis]) % n;
            if c == 0 || c + 1 == n || !mask[i - st[axis]] || !mask[i + st[axis]] {
                out.push(i);
                continue 'voxel;
            }
        }
    }
    out
}

fn coords(i: usize, dims: &[usize], st: &[usize]) -> Vec<usize> {
    dims.iter().zip(st).map(|(&n, &s)| (i / s) % n).collect()
}

/// Value at nearest rank `ceil(p/100 · n)` (1-based) of ascending `sorted`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// Exact squared Euclidean distance transform: for every voxel, the squared
/// distance to the nearest `seed` voxel under per-axis `spacing`.
pub fn squared_edt(seed: &[bool], dims: &[usize], spacing: &[f64]) -> Vec<f64> {
    let mut f: Vec<f64> = seed.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let st = strides(dims);
    let total = f.len();
    for (axis, &n) in dims.iter().enumerate() {
        let stride = st[axis];
        let w2 = spacing[axis] * spacing[axis];
        let mut line = vec![0.0; n];
        let mut out = vec![0.0; n];
        for start in 0..total {
            if !(start / stride).is_multiple_of(n) {
                continue;
            }
            for (k, v) in line.iter_mut().enumerate() {
                *v = f[start + k * stride];
            }
            edt_1d(&line, w2, &mut out);
            for (k, v) in out.iter().enumerate() {
                f[start + k * stride] = *v;
            }
        }
    }
    f
}

/// Lower envelope of parabolas `w2·(q−v)² + f(v)` (Felzenszwalb–Huttenlocher).
fn edt_1d(f: &[f64], w2: f64, out: &mut [f64]) {
    let sites: Vec<usize> = (0..f.len()).filter(|&q| f[q].is_finite()).collect();
    if sites.is_empty() {
        out.iter_mut().for_each(|v| *v = f64::INFINITY);
        return;
    }
    let meet = |p: usize, q: usize| -> f64 {
        let (pf, qf) = (p as f64, q as f64);
        ((f[q] + w2 * qf * qf) - (f[p] + w2 * pf * pf)) / (2.0 * w2 * (qf - pf))
    };
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    for &q in &sites {
        while let Some(&last) = v.last() {
            let s = meet(last, q);
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
            } else {
                break;
            }
        }
        z.push(if v.is_empty() { f64::NEG_INFINITY } else { meet(*v.last().unwrap(), q) });
        v.push(q);
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = w2 * d * d + f[v[k]];
    }
}

/// Pairs above this use the distance transform instead of all pairs.
const BRUTE_FORCE_PAIRS: usize = 4_000_000;

fn directed(
    from: &[usize],
    to: &[usize],
    to_mask: Option<&[f64]>,
    dims: &[usize],
    spacing: &[f64],
) -> Vec<f64> {
    let st = strides(dims);
    match to_mask {
        Some(dt) => from.iter().map(|&a| dt[a].sqrt()).collect(),
        None => {
            let tc: Vec<Vec<usize>> = to.iter().map(|&b| coords(b, dims, &st)).collect();
            from.iter()
                .map(|&a| {
                    let ac = coords(a, dims, &st);
                    tc.iter()
                        .map(|bc| {
                            ac.iter()
                                .zip(bc)
                                .zip(spacing)
                                .map(|((&x, &y), &s)| {
                                    let d = (x as f64 - y as f64) * s;
                                    d * d
                                })
                                .sum::<f64>()
                        })
                        .fold(f64::INFINITY, f64::min)
                        .sqrt()
                })
                .collect()
        }
    }
}

/// Symmetric percentile Hausdorff distance between mask boundaries:
/// `max(P_p{d(a, ∂B)}, P_p{d(b, ∂A)})` with nearest-rank percentiles.
/// `None` when either mask is empty. `percentile = 100` gives the classical
/// Hausdorff distance.
pub fn hausdorff(
    pred: &[bool],
    truth: &[bool],
    dims: &[usize],
    spacing: &[f64],
    percentile: f64,
) -> Result<Option<f64>> {
    if pred.len() != truth.len() {
        return Err(data(format!("mask sizes differ: {} vs {}", pred.len(), truth.len())));
    }
    check_dims(pred.len(), dims, spacing)?;
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(data(format!("percentile {percentile} outside (0, 100]")));
    }
    let (ba, bb) = (boundary(pred, dims), boundary(truth, dims));
    if ba.is_empty() || bb.is_empty() {
        return Ok(None);
    }
    let use_edt = ba.len().saturating_mul(bb.len()) > BRUTE_FORCE_PAIRS;
    let edt_of = |pts: &[usize]| {
        let mut seed = vec![false; pred.len()];
        pts.iter().for_each(|&i| seed[i] = true);
        squared_edt(&seed, dims, spacing)
    };
    let (dt_a, dt_b) = if use_edt { (Some(edt_of(&ba)), Some(edt_of(&bb))) } else { (None, None) };
    let mut ab = directed(&ba, &bb, dt_b.as_deref(), dims, spacing);
    let mut bab = directed(&bb, &ba, dt_a.as_deref(), dims, spacing);
    ab.sort_by(f64::total_cmp);
    bab.sort_by(f64::total_cmp);
    Ok(Some(nearest_rank(&ab, percentile).max(nearest_rank(&bab, percentile))))
}

pub fn hausdorff95(pred: &[bool], truth: &[bool], dims: &[usize], spacing: &[f64]) -> Result<Option<f64>> {
    hausdorff(pred, truth, dims, spacing, 95.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseMetrics {
    pub case_id: String,
    pub dice: Regions<f64>,
    /// `None` where a mask was empty.
    pub hd95: Regions<Option<f64>>,
}

/// One evaluation: per-case rows, means, and how many HD95 values were
/// excluded because a mask was empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub cases: Vec<CaseMetrics>,
    pub mean_dice: Regions<f64>,
    /// Mean over the cases with a defined HD95; `None` if there are none.
    pub mean_hd95: Regions<Option<f64>>,
    pub empty_hd95: Regions<usize>,
}

impl EvalReport {
    pub fn from_cases(cases: Vec<CaseMetrics>) -> Self {
        let n = cases.len();
        let mean_dice = Regions::from_fn(|r| {
            if n == 0 {
                0.0
            } else {
                cases.iter().map(|c| *c.dice.get(r)).sum::<f64>() / n as f64
            }
        });
        let mean_hd95 = Regions::from_fn(|r| {
            let vals: Vec<f64> = cases.iter().filter_map(|c| *c.hd95.get(r)).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        });
        let empty_hd95 = Regions::from_fn(|r| cases.iter().filter(|c| c.hd95.get(r).is_none()).count());
        EvalReport {
            cases,
            mean_dice,
            mean_hd95,
            empty_hd95,
        }
    }

    /// Parses and checks a report: value ranges, and that the summary fields
    /// agree with the per-case rows.
    pub fn from_json(text: &str) -> Result<Self> {
        let report: EvalReport = serde_json::from_str(text).map_err(|e| data(format!("report: {e}")))?;
        report.validate()?;
        Ok(report)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.cases {
            for r in 0..3 {
                let d = *c.dice.get(r);
                if !(0.0..=1.0).contains(&d) {
                    return Err(data(format!("{}: dice {d} outside [0, 1]", c.case_id)));
                }
                if let Some(h) = c.hd95.get(r) {
                    if !(h.is_finite() && *h >= 0.0) {
                        return Err(data(format!("{}: invalid HD95 {h}", c.case_id)));
                    }
                }
            }
        }
        let expect = EvalReport::from_cases(self.cases.clone());
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(1.0);
        for r in 0..3 {
            let ok_dice = close(*self.mean_dice.get(r), *expect.mean_dice.get(r));
            let ok_hd = match (self.mean_hd95.get(r), expect.mean_hd95.get(r)) {
                (Some(a), Some(b)) => close(*a, *b),
                (None, None) => true,
                _ => false,
            };
            if !ok_dice || !ok_hd || self.empty_hd95.get(r) != expect.empty_hd95.get(r) {
                return Err(data(format!(
                    "report summary for {} disagrees with its cases",
                    Regions::<f64>::NAMES[r]
                )));
            }
        }
        Ok(())
    }
}
