//! Atomic file writes and little-endian f64 payloads.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{DsrError, Result};

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| DsrError::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn f64s_to_le_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn le_bytes_to_f64s(bytes: &[u8], path: &Path) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(DsrError::Format {
            path: path.to_path_buf(),
            reason: format!("payload of {} bytes is not a whole number of f64", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_atomic_replace() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("x.bin");
        let v = vec![1.5, -0.0, f64::MIN_POSITIVE, 1e300];
        write_atomic(&p, &f64s_to_le_bytes(&v)).unwrap();
        write_atomic(&p, &f64s_to_le_bytes(&v)).unwrap();
        let back = le_bytes_to_f64s(&fs::read(&p).unwrap(), &p).unwrap();
        assert_eq!(back, v);
        let names: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(names.len(), 1);
        assert!(le_bytes_to_f64s(&[0u8; 7], &p).is_err());
    }
}
