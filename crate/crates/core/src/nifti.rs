//! NIfTI-1 single-file (`.nii`, `.nii.gz`) reading and writing.
//!
//! Reads accept either byte order and any of the five supported datatypes;
//! writes are always little-endian with a 352-byte voxel offset. Orientation
//! matrices are not applied: spacing comes from `pixdim`, origin from the
//! translation column of the sform (or the qform offsets).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, NiftiError, Result};
use crate::grid::{Grid3, Mask, Volume};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];
const MAX_REPORTED_VALUES: usize = 16;

/// Voxel storage types the toolkit reads and writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Datatype {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl Datatype {
    pub const ALL: [Datatype; 5] = [
        Datatype::U8,
        Datatype::I16,
        Datatype::I32,
        Datatype::F32,
        Datatype::F64,
    ];

    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::I32 => 8,
            Datatype::F32 => 16,
            Datatype::F64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.code() == code)
    }

    pub fn bytes(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 => 2,
            Datatype::I32 | Datatype::F32 => 4,
            Datatype::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Datatype::U8 => "uint8",
            Datatype::I16 => "int16",
            Datatype::I32 => "int32",
            Datatype::F32 => "float32",
            Datatype::F64 => "float64",
        }
    }

    fn range(self) -> Option<(f64, f64)> {
        match self {
            Datatype::U8 => Some((u8::MIN as f64, u8::MAX as f64)),
            Datatype::I16 => Some((i16::MIN as f64, i16::MAX as f64)),
            Datatype::I32 => Some((i32::MIN as f64, i32::MAX as f64)),
            Datatype::F32 | Datatype::F64 => None,
        }
    }
}

/// Widens a header float through its shortest decimal form, so a spacing or
/// origin written from a short decimal (e.g. 0.8) reads back as exactly that
/// f64 rather than 0.800000011920929.
fn widen(x: f32) -> f64 {
    if x.is_finite() {
        x.to_string().parse().unwrap_or(x as f64)
    } else {
        x as f64
    }
}

/// The header fields the toolkit interprets.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeaderView {
    pub dims: [usize; 3],
    pub datatype: Datatype,
    pub pixdim: [f32; 3],
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub vox_offset: usize,
    pub origin: [f64; 3],
    pub big_endian: bool,
}

impl NiftiHeaderView {
    pub fn grid(&self) -> std::result::Result<Grid3, Error> {
        Grid3::new(self.dims, self.pixdim.map(widen), self.origin)
    }

    /// Scaling is applied only when the slope is finite and nonzero.
    fn scaling(&self) -> Option<(f64, f64)> {
        let slope = self.scl_slope as f64;
        let inter = if self.scl_inter.is_finite() {
            self.scl_inter as f64
        } else {
            0.0
        };
        (slope.is_finite() && slope != 0.0).then_some((slope, inter))
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = fs::read(path).map_err(io_err)?;
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::with_capacity(raw.len() * 4);
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(io_err)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn nifti_err(path: &Path) -> impl FnOnce(NiftiError) -> Error + '_ {
    move |source| Error::Nifti {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses the header of an uncompressed NIfTI-1 byte stream.
pub fn parse_header(bytes: &[u8]) -> std::result::Result<NiftiHeaderView, NiftiError> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::Truncated {
            offset: 0,
            expected: HEADER_SIZE,
            actual: bytes.len(),
        });
    }
    // dim[0] outside 1..=7 in little-endian means the file is big-endian.
    let dim0_le = LittleEndian::read_i16(&bytes[40..42]);
    let big_endian = !(1..=7).contains(&dim0_le);
    let sizeof_hdr = if big_endian {
        BigEndian::read_i32(&bytes[0..4])
    } else {
        LittleEndian::read_i32(&bytes[0..4])
    };
    if sizeof_hdr != HEADER_SIZE as i32 {
        return Err(NiftiError::BadHeaderSize(sizeof_hdr));
    }
    if big_endian {
        parse_header_with::<BigEndian>(bytes, true)
    } else {
        parse_header_with::<LittleEndian>(bytes, false)
    }
}

fn parse_header_with<B: ByteOrder>(
    bytes: &[u8],
    big_endian: bool,
) -> std::result::Result<NiftiHeaderView, NiftiError> {
    let magic: [u8; 4] = bytes[344..348].try_into().unwrap();
    if &magic[..3] != b"n+1" {
        return Err(NiftiError::BadMagic(magic));
    }

    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = B::read_i16(&bytes[40 + 2 * i..42 + 2 * i]);
    }
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(NiftiError::NotThreeD(dim));
    }
    if (4..=ndim as usize).any(|i| dim[i] != 1) {
        return Err(NiftiError::NotThreeD(dim));
    }
    let mut dims = [1usize; 3];
    for axis in 0..(ndim as usize).min(3) {
        let value = dim[axis + 1];
        if value < 1 {
            return Err(NiftiError::BadDimension { axis, value });
        }
        dims[axis] = value as usize;
    }

    let code = B::read_i16(&bytes[70..72]);
    let datatype = Datatype::from_code(code).ok_or(NiftiError::UnsupportedDatatype(code))?;

    let mut pixdim = [1.0f32; 3];
    for (axis, p) in pixdim.iter_mut().enumerate() {
        let off = 80 + 4 * axis;
        let value = B::read_f32(&bytes[off..off + 4]).abs();
        if axis < ndim as usize && !(value.is_finite() && value > 0.0) {
            return Err(NiftiError::BadSpacing { axis, value });
        }
        if value.is_finite() && value > 0.0 {
            *p = value;
        }
    }

    let vox_offset = B::read_f32(&bytes[108..112]);
    let vox_offset = if vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32 {
        vox_offset as usize
    } else {
        VOX_OFFSET
    };

    let qform_code = B::read_i16(&bytes[252..254]);
    let sform_code = B::read_i16(&bytes[254..256]);
    let read_f64 = |off: usize| widen(B::read_f32(&bytes[off..off + 4]));
    let origin = if sform_code > 0 {
        [read_f64(292), read_f64(308), read_f64(324)]
    } else if qform_code > 0 {
        [read_f64(268), read_f64(272), read_f64(276)]
    } else {
        [0.0; 3]
    };
    let origin = origin.map(|o| if o.is_finite() { o } else { 0.0 });

    Ok(NiftiHeaderView {
        dims,
        datatype,
        pixdim,
        scl_slope: B::read_f32(&bytes[112..116]),
        scl_inter: B::read_f32(&bytes[116..120]),
        vox_offset,
        origin,
        big_endian,
    })
}

/// Visits every scaled voxel value in file (= linearization) order.
fn for_each_value(
    header: &NiftiHeaderView,
    bytes: &[u8],
    mut visit: impl FnMut(usize, f64) -> std::result::Result<(), NiftiError>,
) -> std::result::Result<(), NiftiError> {
    let n = header.dims.iter().product::<usize>();
    let width = header.datatype.bytes();
    let expected = n * width;
    let available = bytes.len().saturating_sub(header.vox_offset);
    if available < expected {
        return Err(NiftiError::Truncated {
            offset: header.vox_offset,
            expected,
            actual: available,
        });
    }
    let payload = &bytes[header.vox_offset..header.vox_offset + expected];
    let scaling = header.scaling();

    macro_rules! visit_all {
        ($order:ty) => {{
            for (i, chunk) in payload.chunks_exact(width).enumerate() {
                let raw = match header.datatype {
                    Datatype::U8 => chunk[0] as f64,
                    Datatype::I16 => <$order>::read_i16(chunk) as f64,
                    Datatype::I32 => <$order>::read_i32(chunk) as f64,
                    Datatype::F32 => <$order>::read_f32(chunk) as f64,
                    Datatype::F64 => <$order>::read_f64(chunk),
                };
                let value = match scaling {
                    Some((slope, inter)) => raw * slope + inter,
                    None => raw,
                };
                if !value.is_finite() {
                    return Err(NiftiError::NonFinite { index: i, value });
                }
                visit(i, value)?;
            }
        }};
    }
    if header.big_endian {
        visit_all!(BigEndian)
    } else {
        visit_all!(LittleEndian)
    }
    Ok(())
}

pub fn read_header(path: impl AsRef<Path>) -> Result<NiftiHeaderView> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    parse_header(&bytes).map_err(nifti_err(path))
}

/// Decodes an uncompressed NIfTI-1 byte stream into a [`Volume`].
pub fn decode_volume(bytes: &[u8]) -> std::result::Result<Volume, Error> {
    let header = parse_header(bytes).map_err(|source| Error::Nifti {
        path: Default::default(),
        source,
    })?;
    decode_volume_with(&header, bytes)
}

fn decode_volume_with(header: &NiftiHeaderView, bytes: &[u8]) -> Result<Volume> {
    let grid = header.grid()?;
    let mut values = Vec::with_capacity(grid.len());
    for_each_value(header, bytes, |index, v| {
        let narrowed = v as f32;
        if !narrowed.is_finite() {
            return Err(NiftiError::NonFinite { index, value: v });
        }
        values.push(narrowed);
        Ok(())
    })
    .map_err(|source| Error::Nifti {
        path: Default::default(),
        source,
    })?;
    Volume::new(grid, values)
}

/// Reads a scalar volume, applying `scl_slope`/`scl_inter` when the slope is nonzero.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let header = parse_header(&bytes).map_err(nifti_err(path))?;
    decode_volume_with(&header, &bytes).map_err(|e| with_path(e, path))
}

fn with_path(err: Error, path: &Path) -> Error {
    match err {
        Error::Nifti { source, .. } => Error::Nifti {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    }
}

/// Reads a mask (foreground where the scaled value exceeds 0.5) and returns
/// the distinct values that were not within 1e-6 of 0 or 1.
pub fn read_mask_with_report(path: impl AsRef<Path>) -> Result<(Mask, Vec<f64>)> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let header = parse_header(&bytes).map_err(nifti_err(path))?;
    let grid = header.grid()?;
    let mut bits = Vec::with_capacity(grid.len());
    let mut odd: Vec<f64> = Vec::new();
    for_each_value(&header, &bytes, |_, v| {
        bits.push(v > 0.5);
        let binary = v.abs() <= 1e-6 || (v - 1.0).abs() <= 1e-6;
        if !binary && odd.len() < MAX_REPORTED_VALUES && !odd.contains(&v) {
            odd.push(v);
        }
        Ok(())
    })
    .map_err(nifti_err(path))?;
    odd.sort_by(f64::total_cmp);
    Ok((Mask::new(grid, bits)?, odd))
}

/// Reads a mask; non-binary values are thresholded at 0.5 and logged.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let (mask, odd) = read_mask_with_report(path)?;
    if !odd.is_empty() {
        log::warn!(
            "{}: mask contains non-binary values {:?}; thresholded at > 0.5",
            path.display(),
            odd
        );
    }
    Ok(mask)
}

fn encode_header(grid: &Grid3, datatype: Datatype) -> Vec<u8> {
    let mut h = vec![0u8; VOX_OFFSET];
    LittleEndian::write_i32(&mut h[0..4], HEADER_SIZE as i32);
    let [nx, ny, nz] = grid.dims();
    let dim = [3, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        LittleEndian::write_i16(&mut h[40 + 2 * i..42 + 2 * i], *d);
    }
    LittleEndian::write_i16(&mut h[70..72], datatype.code());
    LittleEndian::write_i16(&mut h[72..74], (datatype.bytes() * 8) as i16);
    let spacing = grid.spacing();
    let pixdim = [1.0, spacing[0], spacing[1], spacing[2], 0.0, 0.0, 0.0, 0.0];
    for (i, p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut h[76 + 4 * i..80 + 4 * i], *p as f32);
    }
    LittleEndian::write_f32(&mut h[108..112], VOX_OFFSET as f32);
    LittleEndian::write_f32(&mut h[112..116], 1.0);
    LittleEndian::write_f32(&mut h[116..120], 0.0);
    // xyzt_units: mm
    h[123] = 2;
    let origin = grid.origin();
    LittleEndian::write_i16(&mut h[252..254], 1);
    LittleEndian::write_i16(&mut h[254..256], 1);
    for axis in 0..3 {
        LittleEndian::write_f32(&mut h[268 + 4 * axis..272 + 4 * axis], origin[axis] as f32);
        let row = 280 + 16 * axis;
        LittleEndian::write_f32(
            &mut h[row + 4 * axis..row + 4 * axis + 4],
            spacing[axis] as f32,
        );
        LittleEndian::write_f32(&mut h[row + 12..row + 16], origin[axis] as f32);
    }
    h[344..348].copy_from_slice(b"n+1\0");
    h
}

/// Encodes a volume as an uncompressed little-endian NIfTI-1 byte stream.
pub fn encode_volume(
    volume: &Volume,
    datatype: Datatype,
) -> std::result::Result<Vec<u8>, NiftiError> {
    let mut out = encode_header(volume.grid(), datatype);
    out.reserve(volume.values().len() * datatype.bytes());
    for &v in volume.values() {
        let v64 = v as f64;
        if let Some((lo, hi)) = datatype.range() {
            if v64.fract() != 0.0 || v64 < lo || v64 > hi {
                return Err(NiftiError::NotRepresentable {
                    value: v64,
                    datatype: datatype.name(),
                });
            }
        }
        match datatype {
            Datatype::U8 => out.push(v as u8),
            Datatype::I16 => out.write_i16::<LittleEndian>(v as i16)?,
            Datatype::I32 => out.write_i32::<LittleEndian>(v64 as i32)?,
            Datatype::F32 => out.write_f32::<LittleEndian>(v)?,
            Datatype::F64 => out.write_f64::<LittleEndian>(v64)?,
        }
    }
    Ok(out)
}

/// Encodes a mask as uint8 0/1.
pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    let mut out = encode_header(mask.grid(), Datatype::U8);
    out.extend(mask.bits().iter().map(|&b| b as u8));
    out
}

fn write_bytes(bytes: &[u8], path: &Path, gzip: bool) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut writer = std::io::BufWriter::new(file);
    if gzip {
        let mut enc = GzEncoder::new(&mut writer, Compression::default());
        enc.write_all(bytes).map_err(io_err)?;
        enc.finish().map_err(io_err)?;
    } else {
        writer.write_all(bytes).map_err(io_err)?;
    }
    writer.flush().map_err(io_err)
}

/// Writes a float32 volume.
pub fn write_volume(volume: &Volume, path: impl AsRef<Path>, gzip: bool) -> Result<()> {
    write_volume_as(volume, path, Datatype::F32, gzip)
}

/// Writes a volume with an explicit datatype; integer types require
/// integral, in-range values.
pub fn write_volume_as(
    volume: &Volume,
    path: impl AsRef<Path>,
    datatype: Datatype,
    gzip: bool,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_volume(volume, datatype).map_err(nifti_err(path))?;
    write_bytes(&bytes, path, gzip)
}

/// Writes a mask as uint8.
pub fn write_mask(mask: &Mask, path: impl AsRef<Path>, gzip: bool) -> Result<()> {
    write_bytes(&encode_mask(mask), path.as_ref(), gzip)
}
