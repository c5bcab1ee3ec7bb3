//! CIFAR10 binary-batch ingestion.

use std::path::Path;

use crate::data::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const RECORD: usize = 1 + 3 * 1024; // label + channel-planar RGB
const SIDE: usize = 32;

/// Parses one binary batch file: each 3073-byte record is a label byte
/// followed by 1024 red, 1024 green and 1024 blue pixel bytes.
fn load_batch(path: &Path, images: &mut Vec<f32>, labels: &mut Vec<usize>) -> Result<()> {
    let bytes = std::fs::read(path)?;
    if bytes.is_empty() || bytes.len() % RECORD != 0 {
        return Err(Error::format(
            path,
            (bytes.len() - bytes.len() % RECORD) as u64,
            format!("file size {} is not a multiple of the {RECORD}-byte record", bytes.len()),
        ));
    }
    for (i, rec) in bytes.chunks_exact(RECORD).enumerate() {
        let label = rec[0];
        if label > 9 {
            return Err(Error::format(
                path,
                (i * RECORD) as u64,
                format!("label {label} outside 0..=9"),
            ));
        }
        labels.push(usize::from(label));
        let planes = &rec[1..];
        // channel-planar -> NHWC interleave
        for px in 0..SIDE * SIDE {
            images.push(f32::from(planes[px]) / 255.0);
            images.push(f32::from(planes[1024 + px]) / 255.0);
            images.push(f32::from(planes[2048 + px]) / 255.0);
        }
    }
    Ok(())
}

/// Loads the standard CIFAR10 binary layout from `dir`:
/// `data_batch_1.bin` .. `data_batch_5.bin` plus `test_batch.bin`.
pub fn load_cifar10(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 1..=5 {
        load_batch(&dir.join(format!("data_batch_{i}.bin")), &mut images, &mut labels)?;
    }
    let n = labels.len();
    let train = LabeledDataset::new(
        Tensor::from_vec(vec![n, SIDE, SIDE, 3], images)?,
        labels,
        Split::Train,
    )?;

    let mut images = Vec::new();
    let mut labels = Vec::new();
    load_batch(&dir.join("test_batch.bin"), &mut images, &mut labels)?;
    let n = labels.len();
    let test = LabeledDataset::new(
        Tensor::from_vec(vec![n, SIDE, SIDE, 3], images)?,
        labels,
        Split::Test,
    )?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_planar_layout_maps_to_nhwc() {
        let dir = tempfile::tempdir().unwrap();
        // one record: label 3, red plane 255, green 0, blue 128
        let mut rec = vec![3u8];
        rec.extend(std::iter::repeat_n(255u8, 1024));
        rec.extend(std::iter::repeat_n(0u8, 1024));
        rec.extend(std::iter::repeat_n(128u8, 1024));
        let path = dir.path().join("b.bin");
        std::fs::write(&path, &rec).unwrap();
        let mut images = Vec::new();
        let mut labels = Vec::new();
        load_batch(&path, &mut images, &mut labels).unwrap();
        assert_eq!(labels, vec![3]);
        // every pixel: (r, g, b) = (1.0, 0.0, 128/255)
        for px in images.chunks_exact(3) {
            assert_eq!(px[0], 1.0);
            assert_eq!(px[1], 0.0);
            assert!((px[2] - 128.0 / 255.0).abs() < 1e-6);
        }
    }

    #[test]
    fn all_zero_record_is_black_label_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.bin");
        std::fs::write(&path, vec![0u8; RECORD]).unwrap();
        let mut images = Vec::new();
        let mut labels = Vec::new();
        load_batch(&path, &mut images, &mut labels).unwrap();
        assert_eq!(labels, vec![0]);
        assert!(images.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn record_size_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.bin");
        std::fs::write(&path, vec![0u8; RECORD + 10]).unwrap();
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let err = load_batch(&path, &mut images, &mut labels).unwrap_err().to_string();
        assert!(err.contains("record"), "{err}");
    }
}
