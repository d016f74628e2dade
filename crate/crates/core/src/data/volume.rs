//! Multi-modal MRI cases: loading, cropping and foreground normalization.

use std::path::{Path, PathBuf};

use log::warn;

use super::nifti::{read_nifti, write_nifti, Endian, Geometry, NiftiImage, Voxels};
use crate::error::{data, Error, Result};
use crate::targets::LABELS;

/// File suffixes in channel order.
pub const MODALITIES: [&str; 4] = ["t1", "t1ce", "t2", "flair"];
pub const SEG_SUFFIX: &str = "seg";

/// Voxels whose modality stddev falls below this are left at zero.
pub const MIN_STD: f64 = 1e-8;

/// One case. Every volume is `[D, H, W]` with `W` fastest, which is the
/// NIfTI `x, y, z` order.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeRecord {
    pub case_id: String,
    pub modalities: [Vec<f32>; 4],
    pub labels: Vec<u8>,
    pub shape: [usize; 3],
    /// Physical voxel size `[z, y, x]`.
    pub spacing: [f64; 3],
    pub cropped: bool,
    pub normalized: bool,
    pub warnings: Vec<String>,
    /// Header geometry of the source files, reused when writing outputs.
    pub geometry: Geometry,
    /// In-plane size before cropping.
    pub original_hw: (usize, usize),
    /// Row/column of the crop window inside the original plane.
    pub crop_offset: (usize, usize),
}

impl VolumeRecord {
    pub fn new(case_id: impl Into<String>, modalities: [Vec<f32>; 4], labels: Vec<u8>, shape: [usize; 3]) -> Result<Self> {
        let rec = VolumeRecord {
            case_id: case_id.into(),
            modalities,
            labels,
            shape,
            spacing: [1.0; 3],
            cropped: false,
            normalized: false,
            warnings: Vec::new(),
            geometry: Geometry::default(),
            original_hw: (shape[1], shape[2]),
            crop_offset: (0, 0),
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn slices(&self) -> usize {
        self.shape[0]
    }

    pub fn plane(&self) -> usize {
        self.shape[1] * self.shape[2]
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.numel();
        if self.modalities.iter().any(|m| m.len() != n) || self.labels.len() != n {
            return Err(data(format!("{}: volumes do not share shape {:?}", self.case_id, self.shape)));
        }
        if let Some(bad) = self.labels.iter().find(|v| !LABELS.contains(v)) {
            return Err(data(format!("{}: unexpected label value {bad}", self.case_id)));
        }
        Ok(())
    }
}

fn find_file(dir: &Path, case_id: &str, suffix: &str) -> Result<PathBuf> {
    for ext in ["nii.gz", "nii"] {
        let p = dir.join(format!("{case_id}_{suffix}.{ext}"));
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(data(format!("{}: missing {case_id}_{suffix}.nii(.gz)", dir.display())))
}

fn read(path: &Path) -> Result<NiftiImage> {
    read_nifti(path).map_err(|source| Error::Nifti { path: path.to_path_buf(), source })
}

fn zyx(img: &NiftiImage, path: &Path) -> Result<[usize; 3]> {
    if img.dims.len() < 3 || img.dims[3..].iter().any(|&d| d != 1) {
        return Err(data(format!("{}: expected a 3-D volume, got dims {:?}", path.display(), img.dims)));
    }
    Ok([img.dims[2], img.dims[1], img.dims[0]])
}

/// Reads the four modalities of a case directory `<dir>/<case>_<modality>`.
pub fn load_modalities(dir: &Path, case_id: &str) -> Result<VolumeRecord> {
    let mut shape = None;
    let mut geometry = Geometry::default();
    let mut mods: [Vec<f32>; 4] = Default::default();
    for (i, m) in MODALITIES.iter().enumerate() {
        let path = find_file(dir, case_id, m)?;
        let img = read(&path)?;
        let s = zyx(&img, &path)?;
        match shape {
            None => {
                shape = Some(s);
                geometry = img.geometry.clone();
            }
            Some(prev) if prev != s => {
                return Err(data(format!("{}: shape {s:?} differs from {prev:?}", path.display())));
            }
            _ => {}
        }
        mods[i] = img.scaled_f32();
    }
    let shape = shape.unwrap();
    let n = shape.iter().product();
    let mut rec = VolumeRecord::new(case_id, mods, vec![0; n], shape)?;
    let p = &geometry.pixdim;
    let s = |v: f32| if v > 0.0 { v as f64 } else { 1.0 };
    rec.spacing = [s(p[3]), s(p[2]), s(p[1])];
    rec.geometry = geometry;
    Ok(rec)
}

/// Reads a full case including its `seg` label volume.
pub fn load_case(dir: &Path, case_id: &str) -> Result<VolumeRecord> {
    let mut rec = load_modalities(dir, case_id)?;
    let path = find_file(dir, case_id, SEG_SUFFIX)?;
    let img = read(&path)?;
    if zyx(&img, &path)? != rec.shape {
        return Err(data(format!("{}: label shape differs from the modalities", path.display())));
    }
    rec.labels = img
        .scaled_f32()
        .into_iter()
        .map(|v| {
            if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                Err(data(format!("{}: non-integer label {v}", path.display())))
            } else {
                Ok(v as u8)
            }
        })
        .collect::<Result<_>>()?;
    rec.validate()?;
    Ok(rec)
}

fn image_like(rec: &VolumeRecord, voxels: Voxels) -> NiftiImage {
    let [d, h, w] = rec.shape;
    let mut img = NiftiImage::new(vec![w, h, d], voxels);
    img.geometry = rec.geometry.clone();
    img.geometry.pixdim[1] = rec.spacing[2] as f32;
    img.geometry.pixdim[2] = rec.spacing[1] as f32;
    img.geometry.pixdim[3] = rec.spacing[0] as f32;
    img
}

/// Writes `<root>/<case>/<case>_{t1,t1ce,t2,flair,seg}.nii.gz`.
pub fn write_case(root: &Path, rec: &VolumeRecord) -> Result<PathBuf> {
    let dir = root.join(&rec.case_id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let put = |suffix: &str, voxels: Voxels| {
        let path = dir.join(format!("{}_{suffix}.nii.gz", rec.case_id));
        write_nifti(&path, &image_like(rec, voxels), Endian::Little)
            .map_err(|source| Error::Nifti { path: path.clone(), source })
    };
    for (m, vals) in MODALITIES.iter().zip(&rec.modalities) {
        put(m, Voxels::F32(vals.clone()))?;
    }
    put(SEG_SUFFIX, Voxels::U8(rec.labels.clone()))?;
    Ok(dir)
}

/// Writes a label volume with the geometry of `rec`.
pub fn write_labels(path: &Path, rec: &VolumeRecord, labels: Vec<u8>) -> Result<()> {
    if labels.len() != rec.numel() {
        return Err(data(format!(
            "label volume has {} voxels, geometry {:?} needs {}",
            labels.len(),
            rec.shape,
            rec.numel()
        )));
    }
    write_nifti(path, &image_like(rec, Voxels::U8(labels)), Endian::Little)
        .map_err(|source| Error::Nifti { path: path.to_path_buf(), source })
}

/// Case ids under `root`: every subdirectory, sorted.
pub fn list_cases(root: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.path().is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

fn crop_plane<T: Copy>(v: &[T], [d, h, w]: [usize; 3], (r0, c0): (usize, usize), (th, tw): (usize, usize)) -> Vec<T> {
    let mut out = Vec::with_capacity(d * th * tw);
    for z in 0..d {
        for r in r0..r0 + th {
            let row = (z * h + r) * w;
            out.extend_from_slice(&v[row + c0..row + c0 + tw]);
        }
    }
    out
}

/// Center-crops each slice to `target × target`; labels follow the images.
pub fn crop_background(v: &VolumeRecord, target: usize) -> Result<VolumeRecord> {
    let [d, h, w] = v.shape;
    if h < target || w < target {
        return Err(data(format!(
            "{}: slice {h}x{w} is smaller than the crop target {target}x{target}",
            v.case_id
        )));
    }
    let off = ((h - target) / 2, (w - target) / 2);
    let mut out = v.clone();
    for m in 0..4 {
        out.modalities[m] = crop_plane(&v.modalities[m], v.shape, off, (target, target));
    }
    out.labels = crop_plane(&v.labels, v.shape, off, (target, target));
    out.shape = [d, target, target];
    out.cropped = true;
    out.crop_offset = (v.crop_offset.0 + off.0, v.crop_offset.1 + off.1);
    Ok(out)
}

/// Per-modality z-score over strictly positive voxels; background stays 0.
pub fn zscore_foreground(v: &VolumeRecord) -> Result<VolumeRecord> {
    if v.normalized {
        return Err(data(format!("{}: already normalized", v.case_id)));
    }
    let mut out = v.clone();
    for (m, vals) in out.modalities.iter_mut().enumerate() {
        let fg: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 0.0).collect();
        if fg.is_empty() {
            continue;
        }
        let n = fg.len() as f64;
        let mean = fg.iter().map(|&i| vals[i] as f64).sum::<f64>() / n;
        let var = fg.iter().map(|&i| (vals[i] as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std < MIN_STD {
            let msg = format!("{}: {} foreground is constant", v.case_id, MODALITIES[m]);
            warn!("{msg}");
            out.warnings.push(msg);
            fg.iter().for_each(|&i| vals[i] = 0.0);
        } else {
            fg.iter().for_each(|&i| vals[i] = ((vals[i] as f64 - mean) / std) as f32);
        }
    }
    out.normalized = true;
    Ok(out)
}

/// Crop (when needed) then normalize.
pub fn preprocess(v: &VolumeRecord, image_size: usize) -> Result<VolumeRecord> {
    let v = if v.shape[1] == image_size && v.shape[2] == image_size {
        v.clone()
    } else {
        crop_background(v, image_size)?
    };
    if v.normalized {
        Ok(v)
    } else {
        zscore_foreground(&v)
    }
}

/// Pastes a cropped label volume back into the original plane of `rec`.
pub fn uncrop_labels(rec: &VolumeRecord, labels: &[u8]) -> Vec<u8> {
    let [d, h, w] = rec.shape;
    let (oh, ow) = rec.original_hw;
    let (r0, c0) = rec.crop_offset;
    let mut out = vec![0u8; d * oh * ow];
    for z in 0..d {
        for r in 0..h {
            let src = (z * h + r) * w;
            let dst = (z * oh + r0 + r) * ow + c0;
            out[dst..dst + w].copy_from_slice(&labels[src..src + w]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: [usize; 3]) -> VolumeRecord {
        let n = shape.iter().product();
        let m = |k: f32| (0..n).map(|i| i as f32 + k).collect::<Vec<_>>();
        VolumeRecord::new("c", [m(1.0), m(2.0), m(3.0), m(4.0)], vec![0; n], shape).unwrap()
    }

    #[test]
    fn crop_keeps_offset_for_uncrop() {
        let v = ramp([2, 6, 8]);
        let c = crop_background(&v, 4).unwrap();
        assert_eq!(c.crop_offset, (1, 2));
        let labels: Vec<u8> = (0..c.numel()).map(|i| if i % 3 == 0 { 4 } else { 0 }).collect();
        let back = uncrop_labels(&c, &labels);
        assert_eq!(back.len(), v.numel());
        assert_eq!(back[(6 + 1) * 8 + 2], labels[4 * 4]);
    }

    #[test]
    fn normalize_refuses_twice() {
        let v = zscore_foreground(&ramp([1, 2, 2])).unwrap();
        assert!(zscore_foreground(&v).is_err());
    }
}
