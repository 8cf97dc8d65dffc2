//! Flat binary parameter container with a plain-text sidecar index.
//!
//! Layout per entry: `u32` name length, name bytes, `u32` shape rank,
//! `u64` per dimension, then the values as little-endian `f64` bits.
//! Round-trips are bit-exact. The index (`<file>.idx`) lists one
//! `name shape offset count` line per entry.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use thiserror::Error;

use super::param::Parameter;

const MAGIC: &[u8; 8] = b"SKCHKPT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint has no entry named `{0}`")]
    MissingEntry(String),
    #[error("entry `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
}

/// Write entries atomically (temp file, then rename) plus the text index.
pub fn save_container(
    path: &Path,
    entries: &[(String, ArrayD<f64>)],
) -> Result<(), CheckpointError> {
    let tmp = path.with_extension("tmp-write");
    let mut index = String::from("skelsplat-checkpoint v1\n");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&(entries.len() as u32).to_le_bytes())?;
        let mut offset = (MAGIC.len() + 4) as u64;
        for (name, array) in entries {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&(array.ndim() as u32).to_le_bytes())?;
            for &d in array.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            offset += 4 + bytes.len() as u64 + 4 + 8 * array.ndim() as u64;
            let shape_str = if array.ndim() == 0 {
                "scalar".to_string()
            } else {
                array
                    .shape()
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join("x")
            };
            index.push_str(&format!("{name} {shape_str} {offset} {}\n", array.len()));
            for &v in array.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
            offset += 8 * array.len() as u64;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    let idx_path = index_path(path);
    let idx_tmp = idx_path.with_extension("tmp-write");
    fs::write(&idx_tmp, index)?;
    fs::rename(&idx_tmp, idx_path)?;
    Ok(())
}

fn index_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".idx");
    std::path::PathBuf::from(os)
}

pub fn load_container(path: &Path) -> Result<Vec<(String, ArrayD<f64>)>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::Corrupt("bad magic".into()));
    }
    let count = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 1 << 20 {
            return Err(CheckpointError::Corrupt("implausible name length".into()));
        }
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::Corrupt("non-utf8 name".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 32 {
            return Err(CheckpointError::Corrupt("implausible rank".into()));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        let array = ArrayD::from_shape_vec(IxDyn(&shape), data)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        entries.push((name, array));
    }
    Ok(entries)
}

/// Save parameters under their own names.
pub fn save_params(path: &Path, params: &[Parameter]) -> Result<(), CheckpointError> {
    let entries: Vec<_> = params.iter().map(|p| (p.name(), p.value())).collect();
    save_container(path, &entries)
}

/// Load values into existing parameters by name; every parameter must be
/// present with a matching shape.
pub fn load_into_params(path: &Path, params: &[Parameter]) -> Result<(), CheckpointError> {
    let entries = load_container(path)?;
    for p in params {
        let name = p.name();
        let (_, array) = entries
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| CheckpointError::MissingEntry(name.clone()))?;
        if array.shape() != p.shape().as_slice() {
            return Err(CheckpointError::ShapeMismatch {
                name,
                found: array.shape().to_vec(),
                expected: p.shape(),
            });
        }
        p.set_value(array.clone());
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
