//! CTF tensor files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CTF1"            4 bytes magic
//! rank              u8, 1..=3
//! dims              rank × u32
//! payload           numel × f32, row-major
//! ```
//!
//! Values are stored as `f32`; tensors are read back as `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CTF1";

pub fn encode(t: &Tensor) -> Vec<u8> {
    let dims = t.dims();
    let mut out = Vec::with_capacity(5 + 4 * dims.len() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Decode a CTF byte buffer. `path` is only used for error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let short = |detail: String| Error::ShortRead {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < 4 {
        return Err(short(format!("{} bytes, header needs 5", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let rank = *bytes
        .get(4)
        .ok_or_else(|| short("missing rank byte".into()))? as usize;
    if !(1..=3).contains(&rank) {
        return Err(Error::DataShape {
            path: path.to_path_buf(),
            expected: "rank 1..=3".into(),
            found: vec![rank],
        });
    }
    let header = 5 + 4 * rank;
    if bytes.len() < header {
        return Err(short(format!("{} bytes, header needs {header}", bytes.len())));
    }
    let dims: Vec<usize> = bytes[5..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let numel: usize = dims.iter().product();
    let expected = header + 4 * numel;
    if bytes.len() != expected {
        return Err(short(format!(
            "{} bytes, dims {dims:?} need {expected}",
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::new(&dims, data).map_err(|_| Error::DataShape {
        path: path.to_path_buf(),
        expected: "finite payload".into(),
        found: dims.clone(),
    })
}

pub fn write(path: &Path, t: &Tensor) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Round every value to the nearest `f32`, so a save/load round trip is exact.
pub fn quantize(t: &Tensor) -> Tensor {
    let data = t.data().iter().map(|&v| v as f32 as f64).collect();
    Tensor::new(t.dims(), data).expect("finite after f32 rounding")
}
