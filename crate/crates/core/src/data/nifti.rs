//! NIfTI-1 single-file (`.nii`, `.nii.gz`) reader and writer.
//!
//! Supports `uint8`, `int16` and `float32` payloads in either byte order.
//! Byte order is detected from `sizeof_hdr`, which must read as 348.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const DATA_OFFSET: usize = 352;
pub const MAGIC: &[u8; 4] = b"n+1\0";

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("sizeof_hdr is {0} in both byte orders, expected 348")]
    BadHeaderSize(i32),
    #[error("bad magic {0:?}, expected \"n+1\\0\"")]
    BadMagic([u8; 4]),
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("truncated payload: need {expected} bytes, file has {got}")]
    Truncated { expected: usize, got: usize },
    #[error("invalid dimensions: {0}")]
    BadDims(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Voxels {
    U8(Vec<u8>),
    I16(Vec<i16>),
    F32(Vec<f32>),
}

impl Voxels {
    pub fn len(&self) -> usize {
        match self {
            Voxels::U8(v) => v.len(),
            Voxels::I16(v) => v.len(),
            Voxels::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn datatype(&self) -> i16 {
        match self {
            Voxels::U8(_) => DT_UINT8,
            Voxels::I16(_) => DT_INT16,
            Voxels::F32(_) => DT_FLOAT32,
        }
    }

    fn bytes_per_voxel(datatype: i16) -> Result<usize, NiftiError> {
        match datatype {
            DT_UINT8 => Ok(1),
            DT_INT16 => Ok(2),
            DT_FLOAT32 => Ok(4),
            other => Err(NiftiError::UnsupportedDatatype(other)),
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            Voxels::U8(v) => v.iter().map(|&x| x as f32).collect(),
            Voxels::I16(v) => v.iter().map(|&x| x as f32).collect(),
            Voxels::F32(v) => v.clone(),
        }
    }
}

/// Spatial metadata carried through unchanged when writing derived images.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub pixdim: [f32; 8],
    pub xyzt_units: u8,
    pub qform_code: i16,
    pub sform_code: i16,
    /// `quatern_b, quatern_c, quatern_d, qoffset_x, qoffset_y, qoffset_z`.
    pub quatern: [f32; 6],
    pub srow: [[f32; 4]; 3],
}

impl Default for Geometry {
    fn default() -> Self {
        let mut pixdim = [0.0; 8];
        pixdim[..4].copy_from_slice(&[1.0, 1.0, 1.0, 1.0]);
        Geometry {
            pixdim,
            xyzt_units: 2,
            qform_code: 0,
            sform_code: 0,
            quatern: [0.0; 6],
            srow: [[0.0; 4]; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NiftiImage {
    /// Extents with x fastest: `[nx, ny, nz, ...]`.
    pub dims: Vec<usize>,
    pub geometry: Geometry,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub voxels: Voxels,
}

impl NiftiImage {
    pub fn new(dims: Vec<usize>, voxels: Voxels) -> Self {
        NiftiImage {
            dims,
            geometry: Geometry::default(),
            scl_slope: 1.0,
            scl_inter: 0.0,
            voxels,
        }
    }

    /// Voxel size along x, y, z.
    pub fn spacing(&self) -> [f64; 3] {
        let p = &self.geometry.pixdim;
        let s = |v: f32| if v > 0.0 { v as f64 } else { 1.0 };
        [s(p[1]), s(p[2]), s(p[3])]
    }

    /// Values after the header's linear scaling (a slope of 0 means none).
    pub fn scaled_f32(&self) -> Vec<f32> {
        let mut v = self.voxels.to_f32();
        if self.scl_slope != 0.0 && (self.scl_slope != 1.0 || self.scl_inter != 0.0) {
            v.iter_mut().for_each(|x| *x = *x * self.scl_slope + self.scl_inter);
        }
        v
    }
}

fn encode<E: ByteOrder>(img: &NiftiImage) -> Result<Vec<u8>, NiftiError> {
    let n: usize = img.dims.iter().product();
    if img.dims.is_empty() || img.dims.len() > 7 || n != img.voxels.len() {
        return Err(NiftiError::BadDims(format!(
            "{:?} for {} voxels",
            img.dims,
            img.voxels.len()
        )));
    }
    let datatype = img.voxels.datatype();
    let bpv = Voxels::bytes_per_voxel(datatype)?;
    let mut out = vec![0u8; DATA_OFFSET + n * bpv];
    let h = &mut out[..HEADER_SIZE];
    E::write_i32(&mut h[0..4], HEADER_SIZE as i32);
    h[38] = b'r';
    E::write_i16(&mut h[40..42], img.dims.len() as i16);
    for (i, &d) in img.dims.iter().enumerate() {
        let d = i16::try_from(d).map_err(|_| NiftiError::BadDims(format!("extent {d} too large")))?;
        E::write_i16(&mut h[42 + 2 * i..44 + 2 * i], d);
    }
    for i in img.dims.len()..7 {
        E::write_i16(&mut h[42 + 2 * i..44 + 2 * i], 1);
    }
    E::write_i16(&mut h[70..72], datatype);
    E::write_i16(&mut h[72..74], (bpv * 8) as i16);
    let g = &img.geometry;
    for (i, &p) in g.pixdim.iter().enumerate() {
        E::write_f32(&mut h[76 + 4 * i..80 + 4 * i], p);
    }
    E::write_f32(&mut h[108..112], DATA_OFFSET as f32);
    E::write_f32(&mut h[112..116], img.scl_slope);
    E::write_f32(&mut h[116..120], img.scl_inter);
    h[123] = g.xyzt_units;
    E::write_i16(&mut h[252..254], g.qform_code);
    E::write_i16(&mut h[254..256], g.sform_code);
    for (i, &q) in g.quatern.iter().enumerate() {
        E::write_f32(&mut h[256 + 4 * i..260 + 4 * i], q);
    }
    for (r, row) in g.srow.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let o = 280 + 16 * r + 4 * c;
            E::write_f32(&mut h[o..o + 4], v);
        }
    }
    h[344..348].copy_from_slice(MAGIC);
    let body = &mut out[DATA_OFFSET..];
    match &img.voxels {
        Voxels::U8(v) => body.copy_from_slice(v),
        Voxels::I16(v) => E::write_i16_into(v, body),
        Voxels::F32(v) => E::write_f32_into(v, body),
    }
    Ok(out)
}

fn decode<E: ByteOrder>(bytes: &[u8]) -> Result<NiftiImage, NiftiError> {
    let h = &bytes[..HEADER_SIZE];
    let magic: [u8; 4] = h[344..348].try_into().unwrap();
    if &magic != MAGIC {
        return Err(NiftiError::BadMagic(magic));
    }
    let ndim = E::read_i16(&h[40..42]);
    if !(1..=7).contains(&ndim) {
        return Err(NiftiError::BadDims(format!("dim[0] = {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim as usize);
    for i in 0..ndim as usize {
        let d = E::read_i16(&h[42 + 2 * i..44 + 2 * i]);
        if d < 1 {
            return Err(NiftiError::BadDims(format!("dim[{}] = {d}", i + 1)));
        }
        dims.push(d as usize);
    }
    let datatype = E::read_i16(&h[70..72]);
    let bpv = Voxels::bytes_per_voxel(datatype)?;
    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = E::read_f32(&h[76 + 4 * i..80 + 4 * i]);
    }
    let vox_offset = E::read_f32(&h[108..112]);
    if !(vox_offset >= HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(NiftiError::BadDims(format!("vox_offset = {vox_offset}")));
    }
    let offset = vox_offset as usize;
    let n: usize = dims.iter().product();
    let expected = offset + n * bpv;
    if bytes.len() < expected {
        return Err(NiftiError::Truncated {
            expected,
            got: bytes.len(),
        });
    }
    let body = &bytes[offset..expected];
    let voxels = match datatype {
        DT_UINT8 => Voxels::U8(body.to_vec()),
        DT_INT16 => {
            let mut v = vec![0i16; n];
            E::read_i16_into(body, &mut v);
            Voxels::I16(v)
        }
        _ => {
            let mut v = vec![0f32; n];
            E::read_f32_into(body, &mut v);
            Voxels::F32(v)
        }
    };
    let mut quatern = [0f32; 6];
    for (i, q) in quatern.iter_mut().enumerate() {
        *q = E::read_f32(&h[256 + 4 * i..260 + 4 * i]);
    }
    let mut srow = [[0f32; 4]; 3];
    for (r, row) in srow.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            let o = 280 + 16 * r + 4 * c;
            *v = E::read_f32(&h[o..o + 4]);
        }
    }
    Ok(NiftiImage {
        dims,
        geometry: Geometry {
            pixdim,
            xyzt_units: h[123],
            qform_code: E::read_i16(&h[252..254]),
            sform_code: E::read_i16(&h[254..256]),
            quatern,
            srow,
        },
        scl_slope: E::read_f32(&h[112..116]),
        scl_inter: E::read_f32(&h[116..120]),
        voxels,
    })
}

pub fn to_bytes(img: &NiftiImage, endian: Endian) -> Result<Vec<u8>, NiftiError> {
    match endian {
        Endian::Little => encode::<LittleEndian>(img),
        Endian::Big => encode::<BigEndian>(img),
    }
}

/// Parses an uncompressed or gzip-compressed single-file image, returning it
/// with the byte order it was stored in.
pub fn from_bytes(bytes: &[u8]) -> Result<(NiftiImage, Endian), NiftiError> {
    let inflated;
    let bytes = if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut buf = Vec::new();
        GzDecoder::new(bytes).read_to_end(&mut buf)?;
        inflated = buf;
        &inflated[..]
    } else {
        bytes
    };
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::Truncated {
            expected: HEADER_SIZE,
            got: bytes.len(),
        });
    }
    if LittleEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        Ok((decode::<LittleEndian>(bytes)?, Endian::Little))
    } else if BigEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        Ok((decode::<BigEndian>(bytes)?, Endian::Big))
    } else {
        Err(NiftiError::BadHeaderSize(LittleEndian::read_i32(&bytes[0..4])))
    }
}

pub fn is_gz(path: &Path) -> bool {
    path.to_string_lossy().ends_with(".gz")
}

pub fn read_nifti(path: &Path) -> Result<NiftiImage, NiftiError> {
    Ok(from_bytes(&fs::read(path)?)?.0)
}

/// Writes `img`; gzip-compressed when `path` ends in `.gz`.
pub fn write_nifti(path: &Path, img: &NiftiImage, endian: Endian) -> Result<(), NiftiError> {
    let bytes = to_bytes(img, endian)?;
    if is_gz(path) {
        let mut enc = GzEncoder::new(fs::File::create(path)?, Compression::fast());
        enc.write_all(&bytes)?;
        enc.finish()?;
    } else {
        fs::write(path, bytes)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let img = NiftiImage::new(vec![2, 3, 4], Voxels::I16((0..24).collect()));
        let b = to_bytes(&img, Endian::Little).unwrap();
        assert_eq!(b.len(), DATA_OFFSET + 48);
        assert_eq!(LittleEndian::read_i32(&b[0..4]), 348);
        assert_eq!(&b[344..348], MAGIC);
        assert_eq!(LittleEndian::read_i16(&b[70..72]), DT_INT16);
        assert_eq!(LittleEndian::read_i16(&b[72..74]), 16);
        assert_eq!(LittleEndian::read_f32(&b[108..112]), 352.0);
        assert_eq!(LittleEndian::read_i16(&b[DATA_OFFSET + 2..DATA_OFFSET + 4]), 1);
    }

    #[test]
    fn rejects_unknown_datatype() {
        let img = NiftiImage::new(vec![1], Voxels::U8(vec![7]));
        let mut b = to_bytes(&img, Endian::Little).unwrap();
        LittleEndian::write_i16(&mut b[70..72], 64);
        assert!(matches!(from_bytes(&b), Err(NiftiError::UnsupportedDatatype(64))));
    }
}
