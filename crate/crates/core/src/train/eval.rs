use std::path::Path;

use mnet_tensor::{Scalar, Tensor};
use rayon::prelude::*;

use crate::data::{load_modalities, preprocess, uncrop_labels, write_labels, VolumeRecord};
use crate::error::{data, Result};
use crate::metrics::{dice_pooled, hausdorff95, CaseMetrics, DiceMode, EvalReport};
use crate::model::MNet;
use crate::targets::{compose_targets, Regions, TargetMask};

/// Per-slice logits `[D,3,H,W]` for a whole volume, run in windows of the
/// model's `frames`; a shorter final window covers the remainder.
pub fn predict_logits<S: Scalar>(model: &MNet<S>, v: &VolumeRecord) -> Result<Vec<S>> {
    let [d, h, w] = v.shape;
    let side = model.config.image_size;
    if h != side || w != side {
        return Err(data(format!(
            "{}: slices are {h}x{w}, the model expects {side}x{side}",
            v.case_id
        )));
    }
    let t = model.config.frames;
    let hw = h * w;
    let mut out = Vec::with_capacity(d * 3 * hw);
    let mut start = 0;
    while start < d {
        let len = t.min(d - start);
        let mut img = Vec::with_capacity(len * 4 * hw);
        for z in start..start + len {
            for m in &v.modalities {
                img.extend(m[z * hw..(z + 1) * hw].iter().map(|&x| S::of(x as f64)));
            }
        }
        let x = Tensor::from_vec(&[len, 4, h, w], img)?;
        out.extend_from_slice(model.forward(&x)?.data());
        start += len;
    }
    Ok(out)
}

/// Thresholds `[D,3,H,W]` logits at probability 0.5 (strictly above).
pub fn threshold_logits<S: Scalar>(logits: &[S], hw: usize) -> TargetMask {
    let d = logits.len() / (3 * hw);
    let region = |r: usize| {
        (0..d)
            .flat_map(|z| logits[(z * 3 + r) * hw..(z * 3 + r + 1) * hw].iter().map(|&v| v > S::zero()))
            .collect()
    };
    TargetMask {
        wt: region(0),
        tc: region(1),
        et: region(2),
    }
}

pub fn predict_masks<S: Scalar>(model: &MNet<S>, v: &VolumeRecord) -> Result<TargetMask> {
    Ok(threshold_logits(&predict_logits(model, v)?, v.plane()))
}

/// Dice and HD95 of `pred` against the labels of `truth`. HD95 is always
/// taken over the whole volume.
pub fn case_metrics(
    case_id: &str,
    pred: &TargetMask,
    truth: &TargetMask,
    shape: [usize; 3],
    spacing: [f64; 3],
    mode: DiceMode,
) -> Result<CaseMetrics> {
    let mut dice = Regions::from_fn(|_| 0.0);
    let mut hd95 = Regions::from_fn(|_| None);
    for r in 0..3 {
        let d = dice_pooled(pred.region(r), truth.region(r), shape[1] * shape[2], mode)?;
        let h = hausdorff95(pred.region(r), truth.region(r), &shape, &spacing)?;
        match r {
            0 => (dice.wt, hd95.wt) = (d, h),
            1 => (dice.tc, hd95.tc) = (d, h),
            _ => (dice.et, hd95.et) = (d, h),
        }
    }
    Ok(CaseMetrics {
        case_id: case_id.to_string(),
        dice,
        hd95,
    })
}

/// Per-case metrics over preprocessed cases with volume Dice.
pub fn evaluate<S: Scalar>(model: &MNet<S>, cases: &[VolumeRecord]) -> Result<EvalReport> {
    evaluate_with(model, cases, DiceMode::Volume)
}

/// Cases run in parallel and are reported in input order.
pub fn evaluate_with<S: Scalar>(model: &MNet<S>, cases: &[VolumeRecord], mode: DiceMode) -> Result<EvalReport> {
    let rows = cases
        .par_iter()
        .map(|v| {
            let pred = predict_masks(model, v)?;
            let truth = compose_targets(&v.labels)?;
            case_metrics(&v.case_id, &pred, &truth, v.shape, v.spacing, mode)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_cases(rows))
}

/// Segments the case directory `case_dir` (its name is the case id) and
/// writes a label volume with the input geometry to `out`.
pub fn segment<S: Scalar>(model: &MNet<S>, case_dir: &Path, out: &Path) -> Result<Vec<u8>> {
    let case_id = case_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| data(format!("{}: not a case directory", case_dir.display())))?;
    let raw = load_modalities(case_dir, &case_id)?;
    let v = preprocess(&raw, model.config.image_size)?;
    let labels = uncrop_labels(&v, &predict_masks(model, &v)?.to_labels());
    write_labels(out, &raw, labels.clone())?;
    Ok(labels)
}
