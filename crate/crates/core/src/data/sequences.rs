//! T-frame sequence samples and the two TPS dataset views.

use mnet_tensor::{Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::volume::VolumeRecord;
use crate::error::{data, Result};
use crate::targets::{compose_targets, TargetMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderTag {
    Ordered,
    Shuffled,
}

/// `T` frames `[T,4,H,W]` with their nested targets (`T·H·W` voxels each).
#[derive(Debug, Clone)]
pub struct SequenceSample<S: Scalar> {
    pub frames: Tensor<S>,
    pub targets: TargetMask,
    /// `(case_id, start_slice)` of the first frame.
    pub origin: (String, usize),
    pub order: OrderTag,
    /// Source `(case_id, slice)` of every frame.
    pub members: Vec<(String, usize)>,
}

impl<S: Scalar> SequenceSample<S> {
    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        let s = self.frames.shape();
        s[2] * s[3]
    }

    /// Targets as a `[T,3,H,W]` tensor of zeros and ones.
    pub fn target_tensor(&self) -> Tensor<S> {
        let s = self.frames.shape();
        let (t, hw) = (s[0], s[2] * s[3]);
        let mut v = Vec::with_capacity(t * 3 * hw);
        for f in 0..t {
            for r in 0..3 {
                let mask = &self.targets.region(r)[f * hw..(f + 1) * hw];
                v.extend(mask.iter().map(|&b| if b { S::one() } else { S::zero() }));
            }
        }
        Tensor::from_vec(&[t, 3, s[2], s[3]], v).expect("shape matches")
    }

    /// Frame `f` as `(image [4·H·W], wt, tc, et)` slices.
    fn frame(&self, f: usize) -> (&[S], [&[bool]; 3]) {
        let hw = self.plane();
        let img = &self.frames.data()[f * 4 * hw..(f + 1) * 4 * hw];
        let r = |i: usize| &self.targets.region(i)[f * hw..(f + 1) * hw];
        (img, [r(0), r(1), r(2)])
    }
}

/// Consecutive, non-overlapping windows of `t` slices; a short remainder is
/// dropped.
pub fn make_sequences<S: Scalar>(v: &VolumeRecord, t: usize) -> Result<Vec<SequenceSample<S>>> {
    if t == 0 {
        return Err(data("sequence length must be at least 1"));
    }
    let [d, h, w] = v.shape;
    if d < t {
        return Err(data(format!("{}: {d} slices is shorter than T = {t}", v.case_id)));
    }
    let targets = compose_targets(&v.labels)?;
    let hw = h * w;
    (0..d / t)
        .map(|k| {
            let start = k * t;
            let mut img = Vec::with_capacity(t * 4 * hw);
            for z in start..start + t {
                for m in &v.modalities {
                    img.extend(m[z * hw..(z + 1) * hw].iter().map(|&x| S::of(x as f64)));
                }
            }
            let range = start * hw..(start + t) * hw;
            Ok(SequenceSample {
                frames: Tensor::from_vec(&[t, 4, h, w], img)?,
                targets: TargetMask {
                    wt: targets.wt[range.clone()].to_vec(),
                    tc: targets.tc[range.clone()].to_vec(),
                    et: targets.et[range].to_vec(),
                },
                origin: (v.case_id.clone(), start),
                order: OrderTag::Ordered,
                members: (start..start + t).map(|z| (v.case_id.clone(), z)).collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewMode {
    Phase1Shuffled,
    Phase2Ordered,
}

#[derive(Debug, Clone)]
pub struct DatasetView<S: Scalar> {
    pub samples: Vec<SequenceSample<S>>,
    pub mode: ViewMode,
    pub seed: u64,
}

impl<S: Scalar> DatasetView<S> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Every frame's source, sorted: equal for two views over the same frames.
    pub fn frame_multiset(&self) -> Vec<(String, usize)> {
        let mut v: Vec<_> = self.samples.iter().flat_map(|s| s.members.iter().cloned()).collect();
        v.sort();
        v
    }
}

/// Phase 2 is the ordered samples as given; phase 1 pools every frame,
/// permutes the pool with `seed` and re-packs it into pseudo-sequences of the
/// same length.
pub fn tps_views<S: Scalar>(samples: &[SequenceSample<S>], seed: u64) -> Result<(DatasetView<S>, DatasetView<S>)> {
    let Some(first) = samples.first() else {
        return Err(data("cannot build dataset views from zero samples"));
    };
    let (t, s) = (first.len(), first.frames.shape().to_vec());
    if samples.iter().any(|x| x.frames.shape() != s.as_slice()) {
        return Err(data("all samples must share one [T,4,H,W] shape"));
    }
    let hw = first.plane();
    let mut pool: Vec<(usize, usize)> = (0..samples.len()).flat_map(|i| (0..t).map(move |f| (i, f))).collect();
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let shuffled = pool
        .chunks(t)
        .map(|chunk| {
            let mut img = Vec::with_capacity(t * 4 * hw);
            let mut masks: [Vec<bool>; 3] = Default::default();
            let mut members = Vec::with_capacity(t);
            for &(i, f) in chunk {
                let (im, regions) = samples[i].frame(f);
                img.extend_from_slice(im);
                for r in 0..3 {
                    masks[r].extend_from_slice(regions[r]);
                }
                members.push(samples[i].members[f].clone());
            }
            let [wt, tc, et] = masks;
            Ok(SequenceSample {
                frames: Tensor::from_vec(&s, img)?,
                targets: TargetMask { wt, tc, et },
                origin: members[0].clone(),
                order: OrderTag::Shuffled,
                members,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        DatasetView {
            samples: shuffled,
            mode: ViewMode::Phase1Shuffled,
            seed,
        },
        DatasetView {
            samples: samples.to_vec(),
            mode: ViewMode::Phase2Ordered,
            seed,
        },
    ))
}
