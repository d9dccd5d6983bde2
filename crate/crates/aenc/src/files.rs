use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{AencError, Result};

/// Writes through a sibling temporary file and renames it into place, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(AencError::io(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, bytes).map_err(AencError::io(tmp))?;
    fs::rename(tmp, path).map_err(AencError::io(path))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| AencError::Json {
        path: path.into(),
        source,
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(AencError::io(path))?;
    serde_json::from_slice(&bytes).map_err(|source| AencError::Json {
        path: path.into(),
        source,
    })
}

/// Fails if `path` exists unless `force` is set.
pub fn check_fresh(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(AencError::Exists(path.into()));
    }
    Ok(())
}
