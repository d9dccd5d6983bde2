#![allow(dead_code)]

use std::path::{Path, PathBuf};

use aenc::tensor_file::{self, DType};
use serde::Deserialize;

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

#[derive(Debug, Deserialize)]
pub struct GoldenCase {
    pub file: String,
    pub dtype: u8,
    pub shape: Vec<usize>,
    pub bits: Vec<u64>,
}

pub fn golden_cases() -> Vec<GoldenCase> {
    let text = std::fs::read_to_string(golden_dir().join("golden.json")).expect("golden index");
    serde_json::from_str(&text).expect("golden index parses")
}

/// Reads each golden file, checks shape and values, re-encodes it and
/// compares bytes. Returns a description of the first mismatch.
pub fn check_golden() -> Result<usize, String> {
    let cases = golden_cases();
    for case in &cases {
        let path = golden_dir().join(&case.file);
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        let t = tensor_file::read_tensor(&path).map_err(|e| e.to_string())?;
        let dtype = match case.dtype {
            1 => DType::F32,
            2 => DType::F64,
            d => return Err(format!("unknown dtype {d}")),
        };
        if t.dtype != dtype || t.shape != case.shape {
            return Err(format!(
                "{}: header mismatch {:?} {:?}",
                case.file, t.dtype, t.shape
            ));
        }
        let bits: Vec<u64> = t.data.iter().map(|v| v.to_bits()).collect();
        if bits != case.bits {
            return Err(format!("{}: values differ", case.file));
        }
        let mut again = Vec::new();
        tensor_file::write_to(&mut again, dtype, &t.shape, &t.data).map_err(|e| e.to_string())?;
        if again != bytes {
            return Err(format!("{}: re-encoded bytes differ", case.file));
        }
    }
    Ok(cases.len())
}
