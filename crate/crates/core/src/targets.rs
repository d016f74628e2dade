//! Nested tumor regions from BraTS labels.
//!
//! | label | meaning               | WT | TC | ET |
//! |-------|-----------------------|----|----|----|
//! | 0     | background            |    |    |    |
//! | 1     | necrotic / non-enh.   | ✓  | ✓  |    |
//! | 2     | edema                 | ✓  |    |    |
//! | 4     | enhancing tumor       | ✓  | ✓  | ✓  |

use serde::{Deserialize, Serialize};

use crate::error::{data, Result};

pub const LABELS: [u8; 4] = [0, 1, 2, 4];

/// Per-region values in the fixed channel order WT, TC, ET.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regions<T> {
    pub wt: T,
    pub tc: T,
    pub et: T,
}

impl<T> Regions<T> {
    pub const NAMES: [&'static str; 3] = ["WT", "TC", "ET"];

    pub fn from_fn(mut f: impl FnMut(usize) -> T) -> Self {
        Regions {
            wt: f(0),
            tc: f(1),
            et: f(2),
        }
    }

    pub fn get(&self, i: usize) -> &T {
        match i {
            0 => &self.wt,
            1 => &self.tc,
            2 => &self.et,
            _ => panic!("region index {i} out of range"),
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Regions<U> {
        Regions {
            wt: f(&self.wt),
            tc: f(&self.tc),
            et: f(&self.et),
        }
    }
}

impl Regions<f64> {
    pub fn mean(&self) -> f64 {
        (self.wt + self.tc + self.et) / 3.0
    }
}

/// Three binary masks over the same voxel grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetMask {
    pub wt: Vec<bool>,
    pub tc: Vec<bool>,
    pub et: Vec<bool>,
}

impl TargetMask {
    pub fn len(&self) -> usize {
        self.wt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wt.is_empty()
    }

    pub fn region(&self, i: usize) -> &[bool] {
        match i {
            0 => &self.wt,
            1 => &self.tc,
            2 => &self.et,
            _ => panic!("region index {i} out of range"),
        }
    }

    /// Whether `et ⊆ tc ⊆ wt` everywhere.
    pub fn is_nested(&self) -> bool {
        (0..self.len()).all(|i| (!self.et[i] || self.tc[i]) && (!self.tc[i] || self.wt[i]))
    }

    /// Back to labels: ET → 4, TC∖ET → 1, WT∖TC → 2, else 0.
    pub fn to_labels(&self) -> Vec<u8> {
        (0..self.len())
            .map(|i| {
                if self.et[i] {
                    4
                } else if self.tc[i] {
                    1
                } else if self.wt[i] {
                    2
                } else {
                    0
                }
            })
            .collect()
    }
}

pub fn compose_targets(labels: &[u8]) -> Result<TargetMask> {
    if let Some(bad) = labels.iter().find(|v| !LABELS.contains(v)) {
        return Err(data(format!("unexpected label value {bad}")));
    }
    Ok(TargetMask {
        wt: labels.iter().map(|&v| v != 0).collect(),
        tc: labels.iter().map(|&v| v == 1 || v == 4).collect(),
        et: labels.iter().map(|&v| v == 4).collect(),
    })
}
