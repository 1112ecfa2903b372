//! Reading and writing NPY v1.0 array files.
//!
//! Only little-endian, C-ordered `float32`, `uint8` and `uint32` payloads are
//! accepted. Anything else is rejected at the boundary instead of converted.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

/// Element type of an array file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    U8,
    U32,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::U8 => "|u1",
            Dtype::U32 => "<u4",
        }
    }

    fn from_descr(descr: &str) -> Result<Self> {
        match descr {
            "<f4" => Ok(Dtype::F32),
            "|u1" | "<u1" | "u1" | "|b1" => Ok(Dtype::U8),
            "<u4" => Ok(Dtype::U32),
            other => Err(Error::UnsupportedDtype(other.to_string())),
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 | Dtype::U32 => 4,
            Dtype::U8 => 1,
        }
    }
}

/// Typed contiguous payload of an [`ArrayFile`].
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    U8(Vec<u8>),
    U32(Vec<u32>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::U8(v) => v.len(),
            ArrayData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            ArrayData::F32(_) => Dtype::F32,
            ArrayData::U8(_) => Dtype::U8,
            ArrayData::U32(_) => Dtype::U32,
        }
    }
}

/// A row-major n-dimensional array as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayFile {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl ArrayFile {
    pub fn new(shape: Vec<usize>, data: ArrayData) -> Result<Self> {
        let arr = ArrayFile { shape, data };
        arr.validate()?;
        Ok(arr)
    }

    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, ArrayData::F32(data))
    }

    pub fn u8(shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        Self::new(shape, ArrayData::U8(data))
    }

    pub fn u32(shape: Vec<usize>, data: Vec<u32>) -> Result<Self> {
        Self::new(shape, ArrayData::U32(data))
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.is_empty() {
            return Err(Error::InvalidShape {
                shape: vec![],
                reason: "zero-dimensional arrays are not supported".into(),
            });
        }
        let count = element_count(&self.shape)?;
        if count != self.data.len() {
            return Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("shape implies {count} elements, buffer holds {}", self.data.len()),
            });
        }
        Ok(())
    }

    /// Consumes the array, returning its float buffer if the shape matches `rank`.
    pub fn into_f32(self, rank: usize) -> Result<(Vec<usize>, Vec<f32>)> {
        self.expect_rank(rank)?;
        match self.data {
            ArrayData::F32(v) => Ok((self.shape, v)),
            other => Err(Error::UnsupportedDtype(format!("{} (expected float32)", other.dtype().descr()))),
        }
    }

    pub fn into_u8(self, rank: usize) -> Result<(Vec<usize>, Vec<u8>)> {
        self.expect_rank(rank)?;
        match self.data {
            ArrayData::U8(v) => Ok((self.shape, v)),
            other => Err(Error::UnsupportedDtype(format!("{} (expected uint8)", other.dtype().descr()))),
        }
    }

    pub fn into_u32(self, rank: usize) -> Result<(Vec<usize>, Vec<u32>)> {
        self.expect_rank(rank)?;
        match self.data {
            ArrayData::U32(v) => Ok((self.shape, v)),
            other => Err(Error::UnsupportedDtype(format!("{} (expected uint32)", other.dtype().descr()))),
        }
    }

    fn expect_rank(&self, rank: usize) -> Result<()> {
        if self.shape.len() != rank {
            return Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("expected {rank} dimensions"),
            });
        }
        Ok(())
    }
}

fn element_count(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidShape { shape: shape.to_vec(), reason: "element count overflows".into() })
}

pub fn read_array(path: impl AsRef<Path>) -> Result<ArrayFile> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = std::io::BufReader::new(file);
    read_array_from(&mut reader).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses an NPY stream. Reads exactly the header plus the payload the
/// header declares; trailing bytes are left unread.
pub fn read_array_from<R: Read>(reader: &mut R) -> Result<ArrayFile> {
    let mut preamble = [0u8; 8];
    read_exact_or(reader, &mut preamble, || Error::MalformedHeader("file shorter than the magic preamble".into()))?;
    if &preamble[..6] != MAGIC {
        return Err(Error::MalformedHeader("bad magic string".into()));
    }
    let header_len = match preamble[6] {
        1 => {
            let mut len = [0u8; 2];
            read_exact_or(reader, &mut len, || Error::MalformedHeader("missing header length".into()))?;
            u16::from_le_bytes(len) as usize
        }
        2 => {
            let mut len = [0u8; 4];
            read_exact_or(reader, &mut len, || Error::MalformedHeader("missing header length".into()))?;
            u32::from_le_bytes(len) as usize
        }
        v => return Err(Error::MalformedHeader(format!("unsupported version {v}.{}", preamble[7]))),
    };
    let mut header = vec![0u8; header_len];
    read_exact_or(reader, &mut header, || Error::MalformedHeader("header shorter than declared".into()))?;
    let header = std::str::from_utf8(&header).map_err(|_| Error::MalformedHeader("header is not valid text".into()))?;
    let parsed = parse_header(header)?;
    if parsed.fortran_order {
        return Err(Error::MalformedHeader("fortran_order arrays are not supported".into()));
    }
    let dtype = Dtype::from_descr(&parsed.descr)?;
    if parsed.shape.is_empty() {
        return Err(Error::InvalidShape { shape: vec![], reason: "zero-dimensional arrays are not supported".into() });
    }
    let count = element_count(&parsed.shape)?;
    let expected = count
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::InvalidShape { shape: parsed.shape.clone(), reason: "byte size overflows".into() })?;

    let mut bytes = Vec::with_capacity(expected.min(1 << 30));
    reader.take(expected as u64).read_to_end(&mut bytes).map_err(|e| Error::io("<stream>", e))?;
    if bytes.len() < expected {
        return Err(Error::TruncatedData { expected, found: bytes.len() });
    }

    let data = match dtype {
        Dtype::F32 => {
            ArrayData::F32(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
        }
        Dtype::U32 => {
            ArrayData::U32(bytes.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
        }
        Dtype::U8 => ArrayData::U8(bytes),
    };
    Ok(ArrayFile { shape: parsed.shape, data })
}

fn read_exact_or<R: Read>(reader: &mut R, buf: &mut [u8], err: impl FnOnce() -> Error) -> Result<()> {
    match reader.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(err()),
        Err(e) => Err(Error::io("<stream>", e)),
    }
}

pub fn write_array(path: impl AsRef<Path>, arr: &ArrayFile) -> Result<()> {
    let path = path.as_ref();
    arr.validate()?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    write_array_to(&mut writer, arr).and_then(|_| writer.flush()).map_err(|e| Error::io(path, e))
}

pub fn write_array_to<W: Write>(writer: &mut W, arr: &ArrayFile) -> std::io::Result<()> {
    writer.write_all(&encode_header(arr))?;
    match &arr.data {
        ArrayData::F32(v) => {
            for x in v {
                writer.write_all(&x.to_le_bytes())?;
            }
        }
        ArrayData::U32(v) => {
            for x in v {
                writer.write_all(&x.to_le_bytes())?;
            }
        }
        ArrayData::U8(v) => writer.write_all(v)?,
    }
    Ok(())
}

fn encode_header(arr: &ArrayFile) -> Vec<u8> {
    let shape = match arr.shape.as_slice() {
        [d] => format!("({d},)"),
        dims => format!("({})", dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")),
    };
    let mut dict = format!("{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}", arr.dtype().descr(), shape);
    // magic(6) + version(2) + length(2) + dict + '\n' must be a multiple of 64
    let unpadded = MAGIC.len() + 4 + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    dict.extend(std::iter::repeat_n(' ', pad));
    dict.push('\n');

    let mut out = Vec::with_capacity(10 + dict.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

#[derive(Debug)]
struct Header {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Parses the Python dict literal written by numpy, e.g.
/// `{'descr': '<f4', 'fortran_order': False, 'shape': (3, 4), }`.
fn parse_header(text: &str) -> Result<Header> {
    let bad = |what: &str| Error::MalformedHeader(what.to_string());
    let body = text
        .trim()
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| bad("header is not a dict literal"))?;

    let mut descr = None;
    let mut fortran_order = None;
    let mut shape = None;
    let mut rest = body.trim_start();
    while !rest.is_empty() {
        let (key, after) = take_quoted(rest).ok_or_else(|| bad("expected quoted key"))?;
        let after = after.trim_start().strip_prefix(':').ok_or_else(|| bad("expected ':' after key"))?.trim_start();
        let after = match key {
            "descr" => {
                let (v, a) = take_quoted(after).ok_or_else(|| bad("descr must be a string"))?;
                descr = Some(v.to_string());
                a
            }
            "fortran_order" => {
                if let Some(a) = after.strip_prefix("False") {
                    fortran_order = Some(false);
                    a
                } else if let Some(a) = after.strip_prefix("True") {
                    fortran_order = Some(true);
                    a
                } else {
                    return Err(bad("fortran_order must be True or False"));
                }
            }
            "shape" => {
                let inner = after.strip_prefix('(').ok_or_else(|| bad("shape must be a tuple"))?;
                let close = inner.find(')').ok_or_else(|| bad("unterminated shape tuple"))?;
                let dims = inner[..close]
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.trim_end_matches('L').parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad("shape entries must be non-negative integers"))?;
                shape = Some(dims);
                &inner[close + 1..]
            }
            other => return Err(bad(&format!("unexpected key '{other}'"))),
        };
        let after = after.trim_start();
        rest = after.strip_prefix(',').unwrap_or(after).trim_start();
        if !after.starts_with(',') && !rest.is_empty() {
            return Err(bad("expected ',' between entries"));
        }
    }
    Ok(Header {
        descr: descr.ok_or_else(|| bad("missing 'descr'"))?,
        fortran_order: fortran_order.ok_or_else(|| bad("missing 'fortran_order'"))?,
        shape: shape.ok_or_else(|| bad("missing 'shape'"))?,
    })
}

fn take_quoted(s: &str) -> Option<(&str, &str)> {
    let quote = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let inner = &s[1..];
    let end = inner.find(quote)?;
    Some((&inner[..end], &inner[end + 1..]))
}
