//! Dense tensors in the NumPy `.npy` format (version 1.0, C order).
//!
//! Reading accepts little-endian `f4` and `f8` payloads and promotes them to
//! `f64`; versions 2.0 and 3.0 headers are read too. Writing always emits
//! version 1.0 with the header padded to a 64-byte boundary.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";

/// Element type on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn descr(self) -> &'static str {
        match self {
            DType::F32 => "<f4",
            DType::F64 => "<f8",
        }
    }

    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Row-major dense array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                found: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

struct Header {
    dtype: DType,
    shape: Vec<usize>,
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedHeader(msg.into())
}

/// Value text following `'key':` in the header dict.
fn dict_value<'a>(dict: &'a str, key: &str) -> Result<&'a str> {
    let pat = format!("'{key}'");
    let at = dict
        .find(&pat)
        .ok_or_else(|| malformed(format!("missing key {key}")))?;
    let rest = dict[at + pat.len()..].trim_start();
    rest.strip_prefix(':')
        .map(str::trim_start)
        .ok_or_else(|| malformed(format!("no value for {key}")))
}

fn parse_header(dict: &str) -> Result<Header> {
    let descr = dict_value(dict, "descr")?;
    let descr = descr
        .strip_prefix('\'')
        .and_then(|s| s.split('\'').next())
        .ok_or_else(|| malformed("descr is not a string"))?;
    let dtype = match descr {
        "<f8" => DType::F64,
        "<f4" => DType::F32,
        other => return Err(Error::UnsupportedDType(other.to_string())),
    };

    let fortran = dict_value(dict, "fortran_order")?;
    if fortran.starts_with("True") {
        return Err(Error::UnsupportedDType("fortran_order=True".into()));
    } else if !fortran.starts_with("False") {
        return Err(malformed("fortran_order is not a bool"));
    }

    let shape = dict_value(dict, "shape")?;
    let inner = shape
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| malformed("shape is not a tuple"))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| malformed(format!("bad dim {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Header { dtype, shape })
}

pub fn read_from<R: Read>(reader: &mut R) -> Result<Tensor> {
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| malformed(format!("read failed: {e}")))?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(malformed("missing magic string"));
    }
    let (header_len, start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(malformed("truncated preamble"));
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12,
            )
        }
        v => return Err(malformed(format!("unknown version {v}"))),
    };
    let end = start + header_len;
    if bytes.len() < end {
        return Err(malformed("truncated header"));
    }
    let dict = std::str::from_utf8(&bytes[start..end]).map_err(|_| malformed("header not utf-8"))?;
    let header = parse_header(dict)?;

    let n: usize = header.shape.iter().product();
    let payload = &bytes[end..];
    let need = n * header.dtype.size();
    if payload.len() != need {
        return Err(malformed(format!(
            "payload has {} bytes, header declares {need}",
            payload.len()
        )));
    }
    let data = match header.dtype {
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    Ok(Tensor {
        shape: header.shape,
        data,
    })
}

pub fn encode(tensor: &Tensor, dtype: DType) -> Vec<u8> {
    let dims = match tensor.shape.len() {
        1 => format!("{},", tensor.shape[0]),
        _ => tensor
            .shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(", "),
    };
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': ({dims}), }}",
        dtype.descr()
    );
    let unpadded = MAGIC.len() + 4 + dict.len() + 1;
    dict.extend(std::iter::repeat_n(' ', (64 - unpadded % 64) % 64));
    dict.push('\n');

    let mut out = Vec::with_capacity(10 + dict.len() + tensor.len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    match dtype {
        DType::F64 => tensor
            .data
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        DType::F32 => tensor
            .data
            .iter()
            .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
    }
    out
}

pub fn write_to<W: Write>(tensor: &Tensor, dtype: DType, writer: &mut W) -> std::io::Result<()> {
    writer.write_all(&encode(tensor, dtype))
}

/// Reads a `.npy` file, promoting its payload to `f64`.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingTensor(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    decode(&bytes)
}

/// Writes a little-endian `f8` file.
pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    write_tensor_as(tensor, DType::F64, path)
}

pub fn write_tensor_as(tensor: &Tensor, dtype: DType, path: impl AsRef<Path>) -> Result<()> {
    if tensor.is_empty() {
        return Err(Error::InvariantViolation(
            "refusing to write an empty tensor".into(),
        ));
    }
    super::write_atomic(path.as_ref(), &encode(tensor, dtype))
}
