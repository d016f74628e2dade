//! Case ingestion, preprocessing, sequence construction and splits.

pub mod nifti;
mod sequences;
mod synth;
mod volume;

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{data, Error, Result};

pub use sequences::{make_sequences, tps_views, DatasetView, OrderTag, SequenceSample, ViewMode};
pub use synth::{
    lesion_track, synth_generate, synth_generate_with, LesionSlice, SynthOptions, CORE_SCALE, ENHANCING_SCALE, MAX_DRIFT,
};
pub use volume::{
    crop_background, list_cases, load_case, load_modalities, preprocess, uncrop_labels, write_case, write_labels,
    zscore_foreground, VolumeRecord, MIN_STD, MODALITIES, SEG_SUFFIX,
};

pub const MIN_CASES: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Case-level split: `round(0.2·n)` test cases, then `round(0.1·rest)` (at
/// least one) of the remainder for validation. Each list is sorted.
pub fn split_cases(cases: &[String], seed: u64) -> Result<Split> {
    if cases.len() < MIN_CASES {
        return Err(data(format!("need at least {MIN_CASES} cases to split, got {}", cases.len())));
    }
    let mut sorted = cases.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != cases.len() {
        return Err(data("duplicate case ids"));
    }
    let mut ids = sorted;
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (0.2 * ids.len() as f64).round() as usize;
    let pool = ids.len() - n_test;
    let n_val = ((0.1 * pool as f64).round() as usize).max(1);
    let mut test = ids[..n_test].to_vec();
    let mut val = ids[n_test..n_test + n_val].to_vec();
    let mut train = ids[n_test + n_val..].to_vec();
    test.sort();
    val.sort();
    train.sort();
    Ok(Split { train, val, test })
}

/// Loads and preprocesses every case under `root` (in parallel, sorted by id).
pub fn load_dataset(root: &Path, image_size: usize) -> Result<Vec<VolumeRecord>> {
    let ids = list_cases(root)?;
    if ids.is_empty() {
        return Err(data(format!("{}: no case directories", root.display())));
    }
    ids.par_iter()
        .map(|id| preprocess(&load_case(&root.join(id), id)?, image_size))
        .collect()
}

pub const CACHE_MAGIC: &[u8; 8] = b"MNETVOL\0";
pub const CACHE_VERSION: u32 = 1;

/// Binary blob of one case: header, then little-endian `f32` modalities and
/// `u8` labels.
pub fn encode_cache(v: &VolumeRecord) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + v.numel() * 17);
    out.extend_from_slice(CACHE_MAGIC);
    out.write_u32::<LittleEndian>(CACHE_VERSION).unwrap();
    out.write_u32::<LittleEndian>(v.case_id.len() as u32).unwrap();
    out.extend_from_slice(v.case_id.as_bytes());
    for &s in &v.shape {
        out.write_u64::<LittleEndian>(s as u64).unwrap();
    }
    for &s in &v.spacing {
        out.write_f64::<LittleEndian>(s).unwrap();
    }
    out.write_u8(v.cropped as u8 | (v.normalized as u8) << 1).unwrap();
    for m in &v.modalities {
        for &x in m {
            out.write_f32::<LittleEndian>(x).unwrap();
        }
    }
    out.extend_from_slice(&v.labels);
    out
}

pub fn decode_cache(bytes: &[u8]) -> Result<VolumeRecord> {
    let bad = |e: std::io::Error| data(format!("cache blob truncated: {e}"));
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(bad)?;
    if &magic != CACHE_MAGIC {
        return Err(data("not a volume cache blob"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(bad)?;
    if version != CACHE_VERSION {
        return Err(data(format!("unsupported cache version {version}")));
    }
    let mut id = vec![0u8; r.read_u32::<LittleEndian>().map_err(bad)? as usize];
    r.read_exact(&mut id).map_err(bad)?;
    let mut shape = [0usize; 3];
    for s in &mut shape {
        *s = r.read_u64::<LittleEndian>().map_err(bad)? as usize;
    }
    let mut spacing = [0f64; 3];
    for s in &mut spacing {
        *s = r.read_f64::<LittleEndian>().map_err(bad)?;
    }
    let flags = r.read_u8().map_err(bad)?;
    let n: usize = shape.iter().product();
    let mut mods: [Vec<f32>; 4] = Default::default();
    for m in &mut mods {
        *m = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(m).map_err(bad)?;
    }
    let mut labels = vec![0u8; n];
    r.read_exact(&mut labels).map_err(bad)?;
    if r.position() as usize != bytes.len() {
        return Err(data("trailing bytes after cache payload"));
    }
    let id = String::from_utf8(id).map_err(|_| data("cache case id is not UTF-8"))?;
    let mut v = VolumeRecord::new(id, mods, labels, shape)?;
    v.spacing = spacing;
    v.cropped = flags & 1 != 0;
    v.normalized = flags & 2 != 0;
    Ok(v)
}

pub fn save_cache(path: &Path, v: &VolumeRecord) -> Result<()> {
    std::fs::write(path, encode_cache(v)).map_err(|e| Error::io(path, e))
}

pub fn load_cache(path: &Path) -> Result<VolumeRecord> {
    decode_cache(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
