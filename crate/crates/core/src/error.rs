use std::path::PathBuf;

use crate::grid::Grid3;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("geometry mismatch: {left} vs {right}")]
    GeometryMismatch { left: Box<Grid3>, right: Box<Grid3> },

    #[error("value array has {actual} elements, grid {grid} needs {expected}")]
    LengthMismatch {
        grid: Grid3,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value {value} at voxel index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("duplicate case id {0:?}")]
    DuplicateCase(String),

    #[error("case misalignment: {0}")]
    CaseMisalignment(String),

    #[error("lesion placement failed: {0}")]
    Placement(String),

    #[error("{path}: {source}")]
    Nifti {
        path: PathBuf,
        #[source]
        source: NiftiError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Failures while decoding or encoding a NIfTI-1 file.
#[derive(Debug, thiserror::Error)]
pub enum NiftiError {
    #[error("bad magic {0:?}, expected \"n+1\"")]
    BadMagic([u8; 4]),

    #[error("bad header size {0}, expected 348")]
    BadHeaderSize(i32),

    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("non-3D image: dim = {0:?}")]
    NotThreeD([i16; 8]),

    #[error("invalid dimension {axis}: {value}")]
    BadDimension { axis: usize, value: i16 },

    #[error("invalid pixdim[{axis}] = {value}")]
    BadSpacing { axis: usize, value: f32 },

    #[error("truncated payload: expected {expected} bytes after offset {offset}, found {actual}")]
    Truncated {
        offset: usize,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite voxel value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("value {value} not representable as {datatype}")]
    NotRepresentable { value: f64, datatype: &'static str },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
