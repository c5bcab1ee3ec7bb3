//! Lossless tensor archive.
//!
//! Layout (all little-endian):
//!
//! ```text
//! bytes 0..4    magic "APE1"
//! byte  4       version (1)
//! byte  5       dtype code (1 = float32)
//! byte  6       rank (1..=8)
//! byte  7       reserved (0)
//! bytes 8..16   reserved (0)
//! then          rank x u64 dimensions
//! then          row-major float32 payload
//! ```
//!
//! A file is therefore exactly `16 + 8 * rank + 4 * numel` bytes, and the
//! round trip is bit-exact for every finite float32 tensor.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: [u8; 4] = *b"APE1";
const VERSION: u8 = 1;
const DTYPE_F32: u8 = 1;
const MAX_RANK: usize = 8;

/// Writes `tensor` to `path` in the archive format.
pub fn save_tensor_archive(tensor: &Tensor, path: &Path) -> Result<()> {
    if tensor.rank() > MAX_RANK {
        return Err(Error::config(format!(
            "archive supports rank <= {MAX_RANK}, got {}",
            tensor.rank()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION, DTYPE_F32, tensor.rank() as u8, 0])?;
    w.write_all(&[0u8; 8])?;
    for &dim in tensor.shape() {
        w.write_all(&(dim as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(tensor.numel() * 4);
    for &v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Reads a tensor back from `path`, validating every header field and the
/// payload length.
pub fn load_tensor_archive(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| Error::format(path, 0, "truncated header"))?;
    if header[0..4] != MAGIC {
        return Err(Error::format(
            path,
            0,
            format!("bad magic {:02x?}, expected \"APE1\"", &header[0..4]),
        ));
    }
    if header[4] != VERSION {
        return Err(Error::format(path, 4, format!("unsupported version {}", header[4])));
    }
    if header[5] != DTYPE_F32 {
        return Err(Error::format(path, 5, format!("unknown dtype code {}", header[5])));
    }
    let rank = header[6] as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::format(path, 6, format!("rank {rank} outside 1..=8")));
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let mut dim = [0u8; 8];
        r.read_exact(&mut dim)
            .map_err(|_| Error::format(path, (16 + 8 * i) as u64, "truncated dimension table"))?;
        shape.push(u64::from_le_bytes(dim) as usize);
    }
    let numel: usize = shape.iter().product();
    let payload_offset = (16 + 8 * rank) as u64;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != numel * 4 {
        return Err(Error::format(
            path,
            payload_offset,
            format!("payload is {} bytes, shape {shape:?} needs {}", payload.len(), numel * 4),
        ));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor::from_vec(shape, data)
}
