//! NRRD reader and writer (attached header, three spatial axes).
//!
//! Reference: <http://teem.sourceforge.net/nrrd/format.html>

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use log::warn;

use super::{gunzip_bounded, gzip, Encoding, Endian, FileFormat, FormatError, FormatHeader};
use crate::volume::{voxel_count, Volume, VoxelData};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "signed char" | "int8" | "int8_t" => Self::I8,
            "uchar" | "unsigned char" | "uint8" | "uint8_t" => Self::U8,
            "short" | "short int" | "signed short" | "signed short int" | "int16" | "int16_t" => {
                Self::I16
            }
            "ushort" | "unsigned short" | "unsigned short int" | "uint16" | "uint16_t" => Self::U16,
            "int" | "signed int" | "int32" | "int32_t" => Self::I32,
            "uint" | "unsigned int" | "uint32" | "uint32_t" => Self::U32,
            "float" => Self::F32,
            "double" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NrrdEncoding {
    Raw,
    Gzip,
    Ascii,
}

#[derive(Debug, Default)]
struct Fields {
    scalar: Option<ScalarType>,
    dimension: Option<usize>,
    sizes: Option<String>,
    encoding: Option<NrrdEncoding>,
    endian: Option<Endian>,
    directions: Option<[f32; 3]>,
    spacings: Option<[f32; 3]>,
    origin: Option<[f32; 3]>,
}

fn malformed(msg: impl Into<String>) -> FormatError {
    FormatError::MalformedHeader(msg.into())
}

fn unsupported(msg: impl Into<String>) -> FormatError {
    FormatError::UnsupportedFeature(msg.into())
}

/// Splits `bytes` at the first blank line. Returns (header text, payload).
fn split_header(bytes: &[u8]) -> Result<(&str, &[u8]), FormatError> {
    let mut i = 0;
    let mut end = None;
    while i < bytes.len() {
        if bytes[i] == b'\n' {
            let rest = &bytes[i + 1..];
            if rest.first() == Some(&b'\n') {
                end = Some((i, i + 2));
                break;
            }
            if rest.starts_with(b"\r\n") {
                end = Some((i, i + 3));
                break;
            }
        }
        i += 1;
    }
    let (h_end, p_start) = end.ok_or_else(|| malformed("missing blank line ending the header"))?;
    let header = std::str::from_utf8(&bytes[..h_end])
        .map_err(|_| malformed("header is not valid text"))?;
    Ok((header, &bytes[p_start..]))
}

fn parse_triple<T: std::str::FromStr>(s: &str, what: &str) -> Result<[T; 3], FormatError> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(malformed(format!("{what}: expected 3 values, got '{s}'")));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(
            p.parse::<T>()
                .map_err(|_| malformed(format!("{what}: non-numeric value '{p}'")))?,
        );
    }
    let mut it = out.into_iter();
    Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

/// Parses "(a,b,c)" into a numeric vector.
fn parse_vector(s: &str) -> Result<Vec<f64>, FormatError> {
    let s = s.trim();
    let inner = s
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| malformed(format!("vector '{s}' is not parenthesized")))?;
    inner
        .split(',')
        .map(|c| {
            c.trim()
                .parse::<f64>()
                .map_err(|_| malformed(format!("vector '{s}' has non-numeric component")))
        })
        .collect()
}

fn parse_vector_list(s: &str) -> Result<Vec<Vec<f64>>, FormatError> {
    let mut out = Vec::new();
    let mut rest = s.trim();
    while !rest.is_empty() {
        if rest.starts_with("none") {
            return Err(unsupported("'none' space direction on a spatial axis"));
        }
        let close = rest
            .find(')')
            .ok_or_else(|| malformed(format!("unterminated vector in '{s}'")))?;
        out.push(parse_vector(&rest[..=close])?);
        rest = rest[close + 1..].trim_start();
    }
    Ok(out)
}

fn diagonal_spacing(dirs: &[Vec<f64>]) -> Result<[f32; 3], FormatError> {
    if dirs.len() != 3 || dirs.iter().any(|d| d.len() != 3) {
        return Err(malformed("space directions must be three 3-vectors"));
    }
    let mut spacing = [0f32; 3];
    for (axis, d) in dirs.iter().enumerate() {
        for (j, &v) in d.iter().enumerate() {
            if !v.is_finite() {
                return Err(malformed("non-finite space direction"));
            }
            if j != axis && v != 0.0 {
                return Err(unsupported("non axis-aligned space directions"));
            }
        }
        let s = d[axis];
        if s == 0.0 {
            return Err(malformed("zero-length space direction"));
        }
        if s < 0.0 {
            warn!("NRRD axis {axis} has a flipped space direction; using its magnitude");
        }
        spacing[axis] = s.abs() as f32;
    }
    Ok(spacing)
}

fn parse_fields(header: &str) -> Result<Fields, FormatError> {
    let mut lines = header.lines();
    let magic = lines.next().unwrap_or("").trim_end_matches('\r');
    let ok_magic = magic.len() == 8
        && magic.starts_with("NRRD000")
        && matches!(magic.as_bytes()[7], b'1'..=b'5');
    if !ok_magic {
        return Err(FormatError::BadMagic(format!(
            "expected NRRD000X magic line, found '{}'",
            magic.chars().take(16).collect::<String>()
        )));
    }

    let mut f = Fields::default();
    for raw in lines {
        let line = raw.trim_end_matches('\r');
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if line.contains(":=") {
            continue;
        }
        let (key, value) = line
            .split_once(": ")
            .ok_or_else(|| malformed(format!("unparseable header line '{line}'")))?;
        let value = value.trim();
        match key {
            "type" => {
                f.scalar = Some(
                    ScalarType::parse(value)
                        .ok_or_else(|| unsupported(format!("scalar type '{value}'")))?,
                )
            }
            "dimension" => {
                f.dimension = Some(
                    value
                        .parse()
                        .map_err(|_| malformed(format!("dimension '{value}' is not an integer")))?,
                )
            }
            "sizes" => f.sizes = Some(value.to_string()),
            "encoding" => {
                f.encoding = Some(match value {
                    "raw" => NrrdEncoding::Raw,
                    "gzip" | "gz" => NrrdEncoding::Gzip,
                    "ascii" | "text" | "txt" => NrrdEncoding::Ascii,
                    other => return Err(unsupported(format!("encoding '{other}'"))),
                })
            }
            "endian" => {
                f.endian = Some(match value {
                    "little" => Endian::Little,
                    "big" => Endian::Big,
                    other => return Err(malformed(format!("endian '{other}'"))),
                })
            }
            "space directions" => f.directions = Some(diagonal_spacing(&parse_vector_list(value)?)?),
            "spacings" => f.spacings = Some(parse_triple(value, "spacings")?),
            "space origin" => {
                let v = parse_vector(value)?;
                if v.len() != 3 || v.iter().any(|c| !c.is_finite()) {
                    return Err(malformed("space origin must be a finite 3-vector"));
                }
                f.origin = Some([v[0] as f32, v[1] as f32, v[2] as f32]);
            }
            "data file" | "datafile" => {
                return Err(unsupported("detached data file"));
            }
            "line skip" | "lineskip" | "byte skip" | "byteskip" => {
                if value != "0" {
                    return Err(unsupported(format!("{key} {value}")));
                }
            }
            "space" | "space dimension" | "kinds" | "centers" | "centerings" | "content"
            | "space units" | "units" | "labels" | "measurement frame" | "thicknesses"
            | "min" | "max" | "old min" | "old max" | "axis mins" | "axis maxs" => {}
            other => warn!("ignoring unknown NRRD field '{other}'"),
        }
    }
    Ok(f)
}

fn decode_samples(bytes: &[u8], scalar: ScalarType, endian: Endian, n: usize) -> VoxelData {
    fn conv<B: ByteOrder>(bytes: &[u8], scalar: ScalarType, n: usize) -> VoxelData {
        let sz = scalar.size();
        let chunks = bytes.chunks_exact(sz).take(n);
        match scalar {
            ScalarType::U8 => VoxelData::U8(bytes[..n].to_vec()),
            ScalarType::I8 => VoxelData::F32(bytes[..n].iter().map(|&b| b as i8 as f32).collect()),
            ScalarType::I16 => VoxelData::F32(chunks.map(|c| B::read_i16(c) as f32).collect()),
            ScalarType::U16 => VoxelData::F32(chunks.map(|c| B::read_u16(c) as f32).collect()),
            ScalarType::I32 => VoxelData::F32(chunks.map(|c| B::read_i32(c) as f32).collect()),
            ScalarType::U32 => VoxelData::F32(chunks.map(|c| B::read_u32(c) as f32).collect()),
            ScalarType::F32 => VoxelData::F32(chunks.map(B::read_f32).collect()),
            ScalarType::F64 => VoxelData::F32(chunks.map(|c| B::read_f64(c) as f32).collect()),
        }
    }
    match endian {
        Endian::Little => conv::<LittleEndian>(bytes, scalar, n),
        Endian::Big => conv::<BigEndian>(bytes, scalar, n),
    }
}

fn decode_ascii(text: &[u8], scalar: ScalarType, n: usize) -> Result<VoxelData, FormatError> {
    let text = std::str::from_utf8(text).map_err(|_| malformed("ascii payload is not text"))?;
    let mut vals = Vec::with_capacity(n.min(text.len()));
    for tok in text.split(|c: char| c.is_whitespace() || c == ',') {
        if tok.is_empty() {
            continue;
        }
        let v: f64 = tok
            .parse()
            .map_err(|_| malformed(format!("ascii payload value '{tok}'")))?;
        vals.push(v);
        if vals.len() > n {
            break;
        }
    }
    if vals.len() != n {
        return Err(FormatError::PayloadSizeMismatch {
            expected: n,
            actual: vals.len(),
        });
    }
    Ok(match scalar {
        ScalarType::U8 => {
            if vals.iter().any(|&v| !(0.0..=255.0).contains(&v) || v.fract() != 0.0) {
                return Err(malformed("ascii uchar value out of range"));
            }
            VoxelData::U8(vals.into_iter().map(|v| v as u8).collect())
        }
        _ => VoxelData::F32(vals.into_iter().map(|v| v as f32).collect()),
    })
}

/// Parses header and payload, also returning header facts.
pub fn parse_nrrd_with_header(bytes: &[u8]) -> Result<(Volume, FormatHeader), FormatError> {
    if !bytes.starts_with(b"NRRD") {
        return Err(FormatError::BadMagic("missing NRRD magic".into()));
    }
    let (header, payload) = split_header(bytes)?;
    let f = parse_fields(header)?;

    let scalar = f.scalar.ok_or_else(|| malformed("missing required field 'type'"))?;
    let dimension = f
        .dimension
        .ok_or_else(|| malformed("missing required field 'dimension'"))?;
    if dimension != 3 {
        return Err(unsupported(format!("dimension {dimension} (only 3 is supported)")));
    }
    let dims: [usize; 3] = parse_triple(
        f.sizes
            .as_deref()
            .ok_or_else(|| malformed("missing required field 'sizes'"))?,
        "sizes",
    )?;
    let encoding = f
        .encoding
        .ok_or_else(|| malformed("missing required field 'encoding'"))?;
    let endian = match (f.endian, scalar.size()) {
        (Some(e), _) => e,
        (None, 1) => Endian::Little,
        (None, _) if encoding == NrrdEncoding::Ascii => Endian::Little,
        (None, _) => return Err(malformed("missing 'endian' for multi-byte type")),
    };

    let n = voxel_count(dims).map_err(|e| malformed(e.to_string()))?;
    let expected = n
        .checked_mul(scalar.size())
        .ok_or_else(|| malformed("sizes overflow"))?;

    let data = match encoding {
        NrrdEncoding::Raw | NrrdEncoding::Gzip => {
            let owned;
            let body = if encoding == NrrdEncoding::Gzip {
                owned = gunzip_bounded(payload, expected)?;
                &owned[..]
            } else {
                payload
            };
            if body.len() != expected {
                return Err(FormatError::PayloadSizeMismatch {
                    expected,
                    actual: body.len(),
                });
            }
            decode_samples(body, scalar, endian, n)
        }
        NrrdEncoding::Ascii => decode_ascii(payload, scalar, n)?,
    };

    let spacing = match (f.directions, f.spacings) {
        (Some(d), _) => d,
        (None, Some(s)) => {
            if s.iter().any(|v| !v.is_finite() || *v == 0.0) {
                return Err(malformed("spacings must be finite and nonzero"));
            }
            [s[0].abs(), s[1].abs(), s[2].abs()]
        }
        (None, None) => [1.0; 3],
    };
    let origin = f.origin.unwrap_or([0.0; 3]);
    let vol = Volume::new(dims, spacing, origin, data)?;
    let head = FormatHeader {
        format: FileFormat::Nrrd,
        endian,
        encoding: if encoding == NrrdEncoding::Gzip {
            Encoding::Gzip
        } else {
            Encoding::Raw
        },
        dims,
        spacing,
        origin,
    };
    Ok((vol, head))
}

/// Parses an attached-header NRRD byte stream.
pub fn parse_nrrd(bytes: &[u8]) -> Result<Volume, FormatError> {
    parse_nrrd_with_header(bytes).map(|(v, _)| v)
}

/// Serializes `vol` as NRRD0004 with little-endian samples.
pub fn write_nrrd(vol: &Volume, encoding: Encoding) -> Vec<u8> {
    let [nx, ny, nz] = vol.dims();
    let [sx, sy, sz] = vol.spacing();
    let [ox, oy, oz] = vol.origin();
    let ty = match vol.data() {
        VoxelData::U8(_) => "uchar",
        VoxelData::F32(_) => "float",
    };
    let mut h = String::new();
    h.push_str("NRRD0004\n");
    h.push_str(&format!("type: {ty}\n"));
    h.push_str("dimension: 3\n");
    h.push_str("space dimension: 3\n");
    h.push_str(&format!("sizes: {nx} {ny} {nz}\n"));
    h.push_str(&format!(
        "space directions: ({sx},0,0) (0,{sy},0) (0,0,{sz})\n"
    ));
    h.push_str(&format!("space origin: ({ox},{oy},{oz})\n"));
    if matches!(vol.data(), VoxelData::F32(_)) {
        h.push_str("endian: little\n");
    }
    h.push_str(match encoding {
        Encoding::Raw => "encoding: raw\n",
        Encoding::Gzip => "encoding: gzip\n",
    });
    h.push('\n');

    let payload: Vec<u8> = match vol.data() {
        VoxelData::U8(v) => v.clone(),
        VoxelData::F32(v) => v.iter().flat_map(|f| f.to_le_bytes()).collect(),
    };
    let mut out = h.into_bytes();
    match encoding {
        Encoding::Raw => out.extend_from_slice(&payload),
        Encoding::Gzip => out.extend_from_slice(&gzip(&payload)),
    }
    out
}
