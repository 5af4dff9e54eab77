//! Reading and writing tensors in the numpy `.npy` binary format.
//!
//! Only the subset needed for calibration data and weight exchange is
//! supported: version 1.0 headers, little-endian `<f4`/`<f8`, C order.
//! Values are held as `f64` in memory regardless of the stored dtype;
//! the dtype is remembered so a save reproduces the original file
//! bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: [u8; 6] = *b"\x93NUMPY";

/// Stored element type of a tensor file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// An n-dimensional tensor with row-major data, loaded from or destined
/// for a `.npy` file.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorFile {
    /// Construct a tensor, checking the element count against the shape
    /// and rejecting non-finite values.
    pub fn new(dtype: Dtype, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Geometry(format!(
                "tensor data has {} elements but shape {:?} implies {}",
                data.len(),
                shape,
                expected
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Geometry(format!(
                "tensor contains a non-finite value at flat index {pos}"
            )));
        }
        Ok(TensorFile { dtype, shape, data })
    }

    pub fn f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(Dtype::F64, shape, data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Load a tensor from a `.npy` file.
pub fn load_tensor(path: impl AsRef<Path>) -> Result<TensorFile> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    read_tensor(&mut reader, path)
}

/// Save a tensor as a `.npy` file (version 1.0 header).
pub fn save_tensor(t: &TensorFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    write_tensor(&mut writer, t).map_err(|e| Error::io(path, e))?;
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Read a tensor from any reader; `ctx` names the source in errors.
pub fn read_tensor<R: Read>(reader: &mut R, ctx: &Path) -> Result<TensorFile> {
    let fmt = |reason: String| Error::NpyFormat {
        path: ctx.to_path_buf(),
        reason,
    };
    let io = |e: std::io::Error| Error::io(ctx, e);

    let mut magic = [0u8; 6];
    reader.read_exact(&mut magic).map_err(io)?;
    if magic != MAGIC {
        return Err(fmt("bad magic number".into()));
    }
    let mut version = [0u8; 2];
    reader.read_exact(&mut version).map_err(io)?;
    if version != [1, 0] {
        return Err(fmt(format!(
            "unsupported version {}.{} (only 1.0 is supported)",
            version[0], version[1]
        )));
    }
    let mut len_bytes = [0u8; 2];
    reader.read_exact(&mut len_bytes).map_err(io)?;
    let header_len = u16::from_le_bytes(len_bytes) as usize;
    let mut header = vec![0u8; header_len];
    reader.read_exact(&mut header).map_err(io)?;
    let header =
        std::str::from_utf8(&header).map_err(|_| fmt("header is not valid ASCII".into()))?;

    let (descr, fortran_order, shape) = parse_header(header).map_err(fmt)?;
    let dtype = match descr.as_str() {
        "<f4" => Dtype::F32,
        "<f8" => Dtype::F64,
        other => {
            return Err(fmt(format!(
                "unsupported dtype `{other}` (only little-endian <f4/<f8)"
            )))
        }
    };
    if fortran_order {
        return Err(fmt("Fortran order is not supported".into()));
    }

    let count: usize = shape.iter().product();
    let mut raw = vec![0u8; count * dtype.size()];
    reader.read_exact(&mut raw).map_err(io)?;
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing).map_err(io)? != 0 {
        return Err(fmt("trailing bytes after tensor data".into()));
    }

    let data: Vec<f64> = match dtype {
        Dtype::F32 => raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect(),
        Dtype::F64 => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(fmt(format!("non-finite value at flat index {pos}")));
    }
    Ok(TensorFile { dtype, shape, data })
}

/// Write a tensor to any writer.
pub fn write_tensor<W: Write>(writer: &mut W, t: &TensorFile) -> std::io::Result<()> {
    let shape_str = match t.shape.len() {
        0 => String::new(),
        1 => format!("{},", t.shape[0]),
        _ => t
            .shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(", "),
    };
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': ({}), }}",
        t.dtype.descr(),
        shape_str
    );
    // pad with spaces and a trailing newline so the data starts on a
    // 64-byte boundary, as numpy does
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    let padding = (64 - unpadded % 64) % 64;
    dict.extend(std::iter::repeat_n(' ', padding));
    dict.push('\n');

    writer.write_all(&MAGIC)?;
    writer.write_all(&[1, 0])?;
    writer.write_all(&(dict.len() as u16).to_le_bytes())?;
    writer.write_all(dict.as_bytes())?;
    match t.dtype {
        Dtype::F32 => {
            for &v in &t.data {
                writer.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Dtype::F64 => {
            for &v in &t.data {
                writer.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Parse the python-literal header dict into (descr, fortran_order, shape).
fn parse_header(header: &str) -> std::result::Result<(String, bool, Vec<usize>), String> {
    let trimmed = header.trim();
    let inner = trimmed
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| "header is not a dict literal".to_string())?;

    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;

    for item in split_top_level(inner) {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        let (key, value) = item
            .split_once(':')
            .ok_or_else(|| format!("malformed header entry `{item}`"))?;
        let key = key.trim().trim_matches('\'').trim_matches('"');
        let value = value.trim();
        match key {
            "descr" => descr = Some(value.trim_matches('\'').trim_matches('"').to_string()),
            "fortran_order" => {
                fortran = Some(match value {
                    "False" => false,
                    "True" => true,
                    other => return Err(format!("bad fortran_order `{other}`")),
                })
            }
            "shape" => {
                let tuple = value
                    .strip_prefix('(')
                    .and_then(|s| s.strip_suffix(')'))
                    .ok_or_else(|| format!("bad shape tuple `{value}`"))?;
                let mut dims = Vec::new();
                for d in tuple.split(',') {
                    let d = d.trim();
                    if d.is_empty() {
                        continue; // trailing comma or scalar ()
                    }
                    dims.push(
                        d.parse::<usize>()
                            .map_err(|_| format!("bad shape dimension `{d}`"))?,
                    );
                }
                shape = Some(dims);
            }
            _ => {} // ignore unknown keys
        }
    }

    Ok((
        descr.ok_or("header missing `descr`")?,
        fortran.ok_or("header missing `fortran_order`")?,
        shape.ok_or("header missing `shape`")?,
    ))
}

/// Split on commas that are not inside parentheses.
fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    for (idx, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                parts.push(&s[start..idx]);
                start = idx + 1;
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts
}
