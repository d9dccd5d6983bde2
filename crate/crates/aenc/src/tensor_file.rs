//! AENC tensor container.
//!
//! Layout (little-endian):
//! - magic `b"AENC"`
//! - version: u8 = 1
//! - dtype: u8 (1 = f32, 2 = f64)
//! - ndim: u8
//! - shape: ndim * u64
//! - data: row-major, product(shape) values of dtype

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use aenc_core::Matrix;

use crate::error::{AencError, Result};

pub const MAGIC: &[u8; 4] = b"AENC";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn into_matrix(self) -> std::result::Result<Matrix, String> {
        match self.shape[..] {
            [rows, cols] => Matrix::from_vec(rows, cols, self.data).map_err(|e| e.to_string()),
            _ => Err(format!("expected a 2-d tensor, got shape {:?}", self.shape)),
        }
    }
}

/// Serializes one tensor; f32 output rounds each value.
pub fn write_to(
    w: &mut impl Write,
    dtype: DType,
    shape: &[usize],
    data: &[f64],
) -> std::io::Result<()> {
    let numel: usize = shape.iter().product();
    assert_eq!(
        numel,
        data.len(),
        "shape {shape:?} does not match {} values",
        data.len()
    );
    let ndim = u8::try_from(shape.len()).expect("at most 255 dimensions");
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, dtype as u8, ndim])?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    match dtype {
        DType::F32 => data
            .iter()
            .try_for_each(|v| w.write_all(&(*v as f32).to_le_bytes())),
        DType::F64 => data.iter().try_for_each(|v| w.write_all(&v.to_le_bytes())),
    }
}

/// Reads one tensor record. The reader may hold further records.
pub fn read_from(r: &mut impl Read) -> std::result::Result<Tensor, String> {
    let mut head = [0u8; 7];
    r.read_exact(&mut head)
        .map_err(|e| format!("truncated header: {e}"))?;
    if &head[..4] != MAGIC {
        return Err(format!("bad magic {:?}", &head[..4]));
    }
    if head[4] != VERSION {
        return Err(format!("unsupported version {}", head[4]));
    }
    let dtype =
        DType::from_code(head[5]).ok_or_else(|| format!("unknown dtype code {}", head[5]))?;
    let ndim = head[6] as usize;
    let mut shape = Vec::with_capacity(ndim);
    let mut word = [0u8; 8];
    for _ in 0..ndim {
        r.read_exact(&mut word)
            .map_err(|e| format!("truncated shape: {e}"))?;
        shape.push(
            usize::try_from(u64::from_le_bytes(word))
                .map_err(|_| "dimension overflows usize".to_string())?,
        );
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or("shape overflows usize")?;
    let bytes = numel
        .checked_mul(dtype.size())
        .ok_or("payload overflows usize")?;
    let mut payload = Vec::new();
    r.take(bytes as u64)
        .read_to_end(&mut payload)
        .map_err(|e| e.to_string())?;
    if payload.len() != bytes {
        return Err(format!(
            "header declares shape {shape:?} ({numel} values) but payload holds {} bytes",
            payload.len()
        ));
    }
    let data = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok(Tensor { dtype, shape, data })
}

pub fn write_tensor(path: &Path, dtype: DType, shape: &[usize], data: &[f64]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(AencError::io(dir))?;
    }
    let file = File::create(path).map_err(AencError::io(path))?;
    let mut w = BufWriter::new(file);
    write_to(&mut w, dtype, shape, data).map_err(AencError::io(path))?;
    w.flush().map_err(AencError::io(path))
}

/// Reads a file holding exactly one tensor.
pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(AencError::io(path))?;
    let mut r = BufReader::new(file);
    let t = read_from(&mut r).map_err(|e| AencError::format(path, e))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(AencError::io(path))? != 0 {
        return Err(AencError::format(path, "trailing bytes after payload"));
    }
    Ok(t)
}

pub fn write_matrix(path: &Path, dtype: DType, m: &Matrix) -> Result<()> {
    write_tensor(path, dtype, &[m.rows(), m.cols()], m.as_slice())
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    read_tensor(path)?
        .into_matrix()
        .map_err(|e| AencError::format(path, e))
}
