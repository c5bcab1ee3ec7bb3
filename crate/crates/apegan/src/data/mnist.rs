//! MNIST IDX ingestion.

use std::io::Read;
use std::path::Path;

use crate::data::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(r: &mut impl Read, path: &Path, offset: &mut u64) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(path, *offset, "truncated file"))?;
    *offset += 4;
    Ok(u32::from_be_bytes(buf))
}

fn load_images(path: &Path) -> Result<Tensor> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut offset = 0u64;
    let magic = read_u32_be(&mut r, path, &mut offset)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(
            path,
            0,
            format!("image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        ));
    }
    let n = read_u32_be(&mut r, path, &mut offset)? as usize;
    let h = read_u32_be(&mut r, path, &mut offset)? as usize;
    let w = read_u32_be(&mut r, path, &mut offset)? as usize;
    let mut bytes = vec![0u8; n * h * w];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::format(path, offset, format!("truncated pixel data, need {} bytes", n * h * w)))?;
    // scale {0..255} -> [0,1]
    let data: Vec<f32> = bytes.iter().map(|&b| f32::from(b) / 255.0).collect();
    Tensor::from_vec(vec![n, h, w, 1], data)
}

fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut offset = 0u64;
    let magic = read_u32_be(&mut r, path, &mut offset)?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(
            path,
            0,
            format!("label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        ));
    }
    let n = read_u32_be(&mut r, path, &mut offset)? as usize;
    let mut bytes = vec![0u8; n];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::format(path, offset, format!("truncated label data, need {n} bytes")))?;
    if let Some(pos) = bytes.iter().position(|&b| b > 9) {
        return Err(Error::format(
            path,
            offset + pos as u64,
            format!("label {} outside 0..=9", bytes[pos]),
        ));
    }
    Ok(bytes.into_iter().map(usize::from).collect())
}

/// Loads the four standard IDX files from `dir`:
/// `train-images-idx3-ubyte`, `train-labels-idx1-ubyte`,
/// `t10k-images-idx3-ubyte`, `t10k-labels-idx1-ubyte`.
pub fn load_mnist(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let train = LabeledDataset::new(
        load_images(&dir.join("train-images-idx3-ubyte"))?,
        load_labels(&dir.join("train-labels-idx1-ubyte"))?,
        Split::Train,
    )?;
    let test = LabeledDataset::new(
        load_images(&dir.join("t10k-images-idx3-ubyte"))?,
        load_labels(&dir.join("t10k-labels-idx1-ubyte"))?,
        Split::Test,
    )?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_images(path: &Path, images: &[[u8; 4]]) {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        for img in images {
            bytes.extend_from_slice(img);
        }
        std::fs::write(path, bytes).unwrap();
    }

    fn write_labels(path: &Path, labels: &[u8]) {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        bytes.extend_from_slice(labels);
        std::fs::write(path, bytes).unwrap();
    }

    #[test]
    fn loads_synthetic_idx_and_scales_pixels() {
        let dir = tempfile::tempdir().unwrap();
        write_images(&dir.path().join("train-images-idx3-ubyte"), &[[0, 51, 255, 128]]);
        write_labels(&dir.path().join("train-labels-idx1-ubyte"), &[7]);
        write_images(&dir.path().join("t10k-images-idx3-ubyte"), &[[255; 4]]);
        write_labels(&dir.path().join("t10k-labels-idx1-ubyte"), &[0]);
        let (train, test) = load_mnist(dir.path()).unwrap();
        assert_eq!(train.images.shape(), &[1, 2, 2, 1]);
        assert_eq!(train.labels, vec![7]);
        let px = train.images.data();
        assert_eq!(px[0], 0.0);
        assert!((px[1] - 0.2).abs() < 1e-6); // 51/255
        assert_eq!(px[2], 1.0); // 255 -> exactly 1.0
        assert_eq!(test.images.data()[0], 1.0);
    }

    #[test]
    fn wrong_magic_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("train-images-idx3-ubyte"), [0u8; 32]).unwrap();
        write_labels(&dir.path().join("train-labels-idx1-ubyte"), &[0]);
        let err = load_mnist(dir.path()).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
        assert!(err.contains("byte 0"), "{err}");
    }

    #[test]
    fn truncated_pixels_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&[0u8; 5]); // needs 8
        std::fs::write(dir.path().join("t.idx"), bytes).unwrap();
        let err = load_images(&dir.path().join("t.idx")).unwrap_err().to_string();
        assert!(err.contains("truncated pixel data"), "{err}");
    }
}
