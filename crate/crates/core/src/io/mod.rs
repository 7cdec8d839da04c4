//! Volume file formats: attached-header NRRD and single-file NIfTI-1.
//!
//! Both parsers are total: arbitrary input yields either a [`Volume`] or a
//! [`FormatError`], never a panic. Payload allocations are bounded by the
//! number of bytes actually present (or, for gzip, by the declared size).

pub mod nifti;
pub mod nrrd;

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::volume::{Volume, VolumeError};

pub use nifti::{parse_nifti, write_nifti};
pub use nrrd::{parse_nrrd, write_nrrd};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported feature: {0}")]
    UnsupportedFeature(String),
    #[error("payload size mismatch: expected {expected} bytes, found {actual}")]
    PayloadSizeMismatch { expected: usize, actual: usize },
    #[error("bad magic: {0}")]
    BadMagic(String),
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("truncated payload: need {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("gzip stream: {0}")]
    Gzip(#[source] std::io::Error),
    #[error("invalid volume: {0}")]
    InvalidVolume(#[from] VolumeError),
    #[error("unknown volume file extension for {0}")]
    UnknownExtension(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    InFile {
        path: String,
        #[source]
        source: Box<FormatError>,
    },
}

/// Payload encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Raw,
    Gzip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Nrrd,
    Nifti1,
}

/// Header-level facts recovered during parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct FormatHeader {
    pub format: FileFormat,
    pub endian: Endian,
    pub encoding: Encoding,
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    pub origin: [f32; 3],
}

pub(crate) fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

/// Inflates at most `limit` bytes; one extra byte is read so callers can
/// detect oversize payloads without unbounded allocation.
pub(crate) fn gunzip_bounded(bytes: &[u8], limit: usize) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::new();
    let cap = (limit as u64).saturating_add(1);
    GzDecoder::new(bytes)
        .take(cap)
        .read_to_end(&mut out)
        .map_err(FormatError::Gzip)?;
    Ok(out)
}

pub(crate) fn gzip(bytes: &[u8]) -> Vec<u8> {
    use std::io::Write;
    let mut enc = GzEncoder::new(Vec::with_capacity(bytes.len() / 4 + 64), Compression::default());
    enc.write_all(bytes).expect("writing to Vec cannot fail");
    enc.finish().expect("writing to Vec cannot fail")
}

/// Format selected from a file name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathFormat {
    Nrrd,
    Nifti { gzip: bool },
}

impl PathFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let name = path.file_name()?.to_str()?.to_ascii_lowercase();
        if name.ends_with(".nii.gz") {
            Some(PathFormat::Nifti { gzip: true })
        } else if name.ends_with(".nii") {
            Some(PathFormat::Nifti { gzip: false })
        } else if name.ends_with(".nrrd") {
            Some(PathFormat::Nrrd)
        } else {
            None
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> FormatError {
    FormatError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Parses bytes in the given format.
pub fn parse_as(bytes: &[u8], format: PathFormat) -> Result<Volume, FormatError> {
    match format {
        PathFormat::Nrrd => parse_nrrd(bytes),
        PathFormat::Nifti { .. } => parse_nifti(bytes),
    }
}

/// Serializes a volume in the given format (NRRD payloads are gzip-encoded).
pub fn encode_as(vol: &Volume, format: PathFormat) -> Vec<u8> {
    match format {
        PathFormat::Nrrd => write_nrrd(vol, Encoding::Gzip),
        PathFormat::Nifti { gzip } => write_nifti(vol, gzip),
    }
}

/// Reads a volume, choosing the parser from the extension.
pub fn load_volume(path: &Path) -> Result<Volume, FormatError> {
    let format = PathFormat::from_path(path)
        .ok_or_else(|| FormatError::UnknownExtension(path.display().to_string()))?;
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    parse_as(&bytes, format).map_err(|e| FormatError::InFile {
        path: path.display().to_string(),
        source: Box::new(e),
    })
}

/// Writes a volume, choosing the encoder from the extension. The write is
/// atomic: bytes go to a sibling temp file which is then renamed.
pub fn save_volume(vol: &Volume, path: &Path) -> Result<(), FormatError> {
    let format = PathFormat::from_path(path)
        .ok_or_else(|| FormatError::UnknownExtension(path.display().to_string()))?;
    write_atomic(path, &encode_as(vol, format)).map_err(|e| io_err(path, e))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}
