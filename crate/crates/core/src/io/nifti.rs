//! Single-file NIfTI-1 (`.nii`, `.nii.gz`) reader and writer.
//!
//! Only 3D `uint8` and `float32` images with axis-aligned orientation are
//! mapped onto [`Volume`]. Orientation is taken from the qform when
//! `qform_code > 0`, else from the sform when `sform_code > 0`, else the
//! identity with `pixdim` spacing.

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use log::warn;

use super::{gunzip_bounded, gzip, is_gzip, Encoding, Endian, FileFormat, FormatError, FormatHeader};
use crate::volume::{voxel_count, Volume, VoxelData};

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
pub const DT_UINT8: i16 = 2;
pub const DT_FLOAT32: i16 = 16;

/// NIfTI-1 header field byte offsets.
mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

const ORIENT_TOL: f64 = 1e-4;

struct Raw<'a, B> {
    h: &'a [u8],
    _b: std::marker::PhantomData<B>,
}

impl<'a, B: ByteOrder> Raw<'a, B> {
    fn i16(&self, off: usize) -> i16 {
        B::read_i16(&self.h[off..])
    }
    fn f32(&self, off: usize) -> f32 {
        B::read_f32(&self.h[off..])
    }
}

fn unsupported(msg: impl Into<String>) -> FormatError {
    FormatError::UnsupportedFeature(msg.into())
}

/// Checks that a 3x3 direction matrix (columns = voxel axes) is a signed
/// axis permutation that keeps every voxel axis on its own world axis.
fn check_axis_aligned(m: [[f64; 3]; 3]) -> Result<(), FormatError> {
    for (r, row) in m.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(FormatError::MalformedHeader("non-finite orientation".into()));
            }
            if r != c && v.abs() > ORIENT_TOL {
                return Err(unsupported("non axis-aligned orientation"));
            }
        }
        if m[r][r].abs() <= ORIENT_TOL {
            return Err(unsupported("degenerate orientation"));
        }
    }
    if (0..3).any(|i| m[i][i] < 0.0) {
        warn!("NIfTI orientation flips an axis; voxel order is kept as stored");
    }
    Ok(())
}

fn decode<B: ByteOrder>(h: &[u8], file: &[u8], endian: Endian) -> Result<(Volume, FormatHeader), FormatError> {
    let r = Raw::<B> {
        h,
        _b: std::marker::PhantomData,
    };
    let ndim = r.i16(offsets::DIM);
    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = r.i16(offsets::DIM + 2 * i);
    }
    if !(1..=7).contains(&ndim) {
        return Err(FormatError::MalformedHeader(format!("dim[0] = {ndim}")));
    }
    let trailing_singleton = (4..=ndim as usize).all(|i| dim[i] == 1);
    if ndim < 3 || !trailing_singleton {
        return Err(unsupported(format!("{ndim}-dimensional image (only 3D is supported)")));
    }
    if dim[1..=3].iter().any(|&d| d < 1) {
        return Err(FormatError::MalformedHeader(format!("dimensions {:?}", &dim[1..=3])));
    }
    let dims = [dim[1] as usize, dim[2] as usize, dim[3] as usize];

    let datatype = r.i16(offsets::DATATYPE);
    let bytes_per = match datatype {
        DT_UINT8 => 1usize,
        DT_FLOAT32 => 4,
        other => return Err(FormatError::UnsupportedDatatype(other)),
    };
    let bitpix = r.i16(offsets::BITPIX);
    if bitpix != 0 && bitpix as usize != bytes_per * 8 {
        warn!("NIfTI bitpix {bitpix} disagrees with datatype {datatype}");
    }

    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = r.f32(offsets::PIXDIM + 4 * i);
    }
    let mut spacing = [pixdim[1].abs(), pixdim[2].abs(), pixdim[3].abs()];
    for s in spacing.iter_mut() {
        if !s.is_finite() || *s == 0.0 {
            *s = 1.0;
        }
    }

    let qform_code = r.i16(offsets::QFORM_CODE);
    let sform_code = r.i16(offsets::SFORM_CODE);
    let origin = if qform_code > 0 {
        let b = r.f32(offsets::QUATERN_B) as f64;
        let c = r.f32(offsets::QUATERN_B + 4) as f64;
        let d = r.f32(offsets::QUATERN_B + 8) as f64;
        let a2 = 1.0 - (b * b + c * c + d * d);
        let a = if a2 > 0.0 { a2.sqrt() } else { 0.0 };
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let m = [
            [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), qfac * 2.0 * (b * d + a * c)],
            [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, qfac * 2.0 * (c * d - a * b)],
            [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), qfac * (a * a + d * d - c * c - b * b)],
        ];
        check_axis_aligned(m)?;
        [
            r.f32(offsets::QOFFSET_X),
            r.f32(offsets::QOFFSET_X + 4),
            r.f32(offsets::QOFFSET_X + 8),
        ]
    } else if sform_code > 0 {
        let mut m = [[0f64; 3]; 3];
        let mut o = [0f32; 3];
        for i in 0..3 {
            let base = offsets::SROW_X + 16 * i;
            for j in 0..3 {
                m[i][j] = r.f32(base + 4 * j) as f64;
            }
            o[i] = r.f32(base + 12);
        }
        check_axis_aligned(m)?;
        o
    } else {
        [0.0; 3]
    };
    if origin.iter().any(|v| !v.is_finite()) {
        return Err(FormatError::MalformedHeader("non-finite origin".into()));
    }

    let vox_offset = r.f32(offsets::VOX_OFFSET);
    if !vox_offset.is_finite() || vox_offset < VOX_OFFSET as f32 || vox_offset > u32::MAX as f32 {
        return Err(FormatError::MalformedHeader(format!("vox_offset {vox_offset}")));
    }
    let vox_offset = vox_offset as usize;

    let n = voxel_count(dims)?;
    let need = n
        .checked_mul(bytes_per)
        .and_then(|b| b.checked_add(vox_offset))
        .ok_or_else(|| FormatError::MalformedHeader("image size overflows".into()))?;
    if file.len() < need {
        return Err(FormatError::TruncatedPayload {
            expected: need,
            actual: file.len(),
        });
    }
    let body = &file[vox_offset..need];

    let slope = r.f32(offsets::SCL_SLOPE);
    let inter = r.f32(offsets::SCL_INTER);
    let scaled = slope.is_finite() && slope != 0.0 && (slope != 1.0 || (inter.is_finite() && inter != 0.0));

    let data = match datatype {
        DT_UINT8 if !scaled => VoxelData::U8(body.to_vec()),
        DT_UINT8 => VoxelData::F32(body.iter().map(|&b| b as f32 * slope + inter).collect()),
        _ => {
            let it = body.chunks_exact(4).map(B::read_f32);
            if scaled {
                VoxelData::F32(it.map(|v| v * slope + inter).collect())
            } else {
                VoxelData::F32(it.collect())
            }
        }
    };
    let vol = Volume::new(dims, spacing, origin, data)?;
    Ok((
        vol,
        FormatHeader {
            format: FileFormat::Nifti1,
            endian,
            encoding: Encoding::Raw,
            dims,
            spacing,
            origin,
        },
    ))
}

/// Parses a NIfTI-1 file, also returning header facts.
pub fn parse_nifti_with_header(bytes: &[u8]) -> Result<(Volume, FormatHeader), FormatError> {
    let inflated;
    let (file, encoding) = if is_gzip(bytes) {
        // Header size bounds the first read; the declared payload size is
        // only known after the header is decoded, so inflate twice at most.
        let head = gunzip_bounded(bytes, HEADER_SIZE)?;
        let limit = declared_file_size(&head).unwrap_or(HEADER_SIZE);
        inflated = gunzip_bounded(bytes, limit)?;
        (&inflated[..], Encoding::Gzip)
    } else {
        (bytes, Encoding::Raw)
    };
    if file.len() < HEADER_SIZE {
        return Err(FormatError::TruncatedPayload {
            expected: HEADER_SIZE,
            actual: file.len(),
        });
    }
    let h = &file[..HEADER_SIZE];
    let magic = &h[offsets::MAGIC..offsets::MAGIC + 4];
    if magic == b"ni1\0" {
        return Err(FormatError::BadMagic("detached-header NIfTI (ni1) is not supported".into()));
    }
    if magic != b"n+1\0" {
        return Err(FormatError::BadMagic(format!("expected \"n+1\\0\", found {magic:?}")));
    }
    let (vol, mut head) = if LittleEndian::read_i32(&h[offsets::SIZEOF_HDR..]) == HEADER_SIZE as i32 {
        decode::<LittleEndian>(h, file, Endian::Little)?
    } else if BigEndian::read_i32(&h[offsets::SIZEOF_HDR..]) == HEADER_SIZE as i32 {
        decode::<BigEndian>(h, file, Endian::Big)?
    } else {
        return Err(FormatError::MalformedHeader("sizeof_hdr is not 348".into()));
    };
    head.encoding = encoding;
    Ok((vol, head))
}

/// Upper bound on the file size implied by a header, if it decodes.
fn declared_file_size(h: &[u8]) -> Option<usize> {
    if h.len() < HEADER_SIZE {
        return None;
    }
    fn size<B: ByteOrder>(h: &[u8]) -> Option<usize> {
        let mut n: usize = 1;
        let ndim = B::read_i16(&h[offsets::DIM..]);
        if !(1..=7).contains(&ndim) {
            return None;
        }
        for i in 1..=ndim as usize {
            let d = B::read_i16(&h[offsets::DIM + 2 * i..]);
            n = n.checked_mul(usize::try_from(d).ok()?)?;
        }
        let bpp = match B::read_i16(&h[offsets::DATATYPE..]) {
            DT_UINT8 => 1,
            DT_FLOAT32 => 4,
            _ => return None,
        };
        let off = B::read_f32(&h[offsets::VOX_OFFSET..]);
        if !off.is_finite() || !(0.0..=u32::MAX as f32).contains(&off) {
            return None;
        }
        n.checked_mul(bpp)?.checked_add(off as usize)
    }
    if LittleEndian::read_i32(h) == HEADER_SIZE as i32 {
        size::<LittleEndian>(h)
    } else if BigEndian::read_i32(h) == HEADER_SIZE as i32 {
        size::<BigEndian>(h)
    } else {
        None
    }
}

/// Parses a single-file NIfTI-1 image; gzip input is detected by magic bytes.
pub fn parse_nifti(bytes: &[u8]) -> Result<Volume, FormatError> {
    parse_nifti_with_header(bytes).map(|(v, _)| v)
}

/// Serializes `vol` as little-endian NIfTI-1 with `vox_offset = 352`.
pub fn write_nifti(vol: &Volume, gzipped: bool) -> Vec<u8> {
    let mut h = vec![0u8; VOX_OFFSET];
    type L = LittleEndian;
    L::write_i32(&mut h[offsets::SIZEOF_HDR..], HEADER_SIZE as i32);
    let [nx, ny, nz] = vol.dims();
    let dim = [3i16, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        L::write_i16(&mut h[offsets::DIM + 2 * i..], *d);
    }
    let (datatype, bitpix) = match vol.data() {
        VoxelData::U8(_) => (DT_UINT8, 8),
        VoxelData::F32(_) => (DT_FLOAT32, 32),
    };
    L::write_i16(&mut h[offsets::DATATYPE..], datatype);
    L::write_i16(&mut h[offsets::BITPIX..], bitpix);
    let sp = vol.spacing();
    let pixdim = [1.0f32, sp[0], sp[1], sp[2], 0.0, 0.0, 0.0, 0.0];
    for (i, p) in pixdim.iter().enumerate() {
        L::write_f32(&mut h[offsets::PIXDIM + 4 * i..], *p);
    }
    L::write_f32(&mut h[offsets::VOX_OFFSET..], VOX_OFFSET as f32);
    L::write_f32(&mut h[offsets::SCL_SLOPE..], 1.0);
    L::write_f32(&mut h[offsets::SCL_INTER..], 0.0);
    h[offsets::XYZT_UNITS] = 2; // millimetres
    L::write_i16(&mut h[offsets::QFORM_CODE..], 1);
    L::write_i16(&mut h[offsets::SFORM_CODE..], 1);
    let o = vol.origin();
    for i in 0..3 {
        L::write_f32(&mut h[offsets::QOFFSET_X + 4 * i..], o[i]);
        let base = offsets::SROW_X + 16 * i;
        L::write_f32(&mut h[base + 4 * i..], sp[i]);
        L::write_f32(&mut h[base + 12..], o[i]);
    }
    h[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(b"n+1\0");

    match vol.data() {
        VoxelData::U8(v) => h.extend_from_slice(v),
        VoxelData::F32(v) => {
            h.reserve(v.len() * 4);
            for f in v {
                h.extend_from_slice(&f.to_le_bytes());
            }
        }
    }
    if gzipped {
        gzip(&h)
    } else {
        h
    }
}
