//! IDX containers (the MNIST file format): a big-endian magic number whose
//! low byte is the number of dimensions, followed by the dimensions as
//! big-endian `u32`s and the unsigned-byte payload.

use std::path::Path;

use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct IdxDataset {
    /// One flattened image per entry, pixels scaled to `[0, 1]`.
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse { offset, message: "truncated header".into() })
}

fn expect_magic(bytes: &[u8], magic: u32) -> Result<()> {
    let found = read_u32(bytes, 0)?;
    if found != magic {
        return Err(Error::Parse { offset: 0, message: format!("bad magic 0x{found:08x}, expected 0x{magic:08x}") });
    }
    Ok(())
}

fn payload(bytes: &[u8], start: usize, len: usize) -> Result<&[u8]> {
    bytes.get(start..start + len).ok_or_else(|| Error::Parse {
        offset: bytes.len(),
        message: format!("payload truncated: expected {len} bytes from offset {start}"),
    })
}

/// Parses an image file (`0x00000803`, dims `count x rows x cols`).
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    expect_magic(bytes, IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let size = rows * cols;
    let data = payload(bytes, 16, count * size)?;
    Ok(data.chunks(size.max(1)).take(count).map(|img| img.iter().map(|&p| p as f64 / 255.0).collect()).collect())
}

/// Parses a label file (`0x00000801`); labels must be digits `0..=9`.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    expect_magic(bytes, LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let data = payload(bytes, 8, count)?;
    if let Some(pos) = data.iter().position(|&l| l > 9) {
        return Err(Error::Validation(format!("label {} at byte offset {} exceeds 9", data[pos], 8 + pos)));
    }
    Ok(data.to_vec())
}

pub fn load_idx_dataset(images: &Path, labels: &Path) -> Result<IdxDataset> {
    let images = parse_idx_images(&std::fs::read(images)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels)?)?;
    if images.len() != labels.len() {
        return Err(Error::Validation(format!("{} images but {} labels", images.len(), labels.len())));
    }
    Ok(IdxDataset { images, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_fixture(count: u32) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        b.extend_from_slice(&count.to_be_bytes());
        b.extend_from_slice(&28u32.to_be_bytes());
        b.extend_from_slice(&28u32.to_be_bytes());
        for i in 0..count as usize * 784 {
            b.push((i % 256) as u8);
        }
        b
    }

    fn label_fixture(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn parses_four_images() {
        let imgs = parse_idx_images(&image_fixture(4)).unwrap();
        assert_eq!(imgs.len(), 4);
        assert!(imgs.iter().all(|v| v.len() == 784));
        assert_eq!(imgs[0][255], 1.0);
        assert_eq!(imgs[0][0], 0.0);
        assert!(imgs.iter().flatten().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn truncated_header_reports_offset() {
        let bytes = &image_fixture(1)[..10];
        match parse_idx_images(bytes) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("{other:?}"),
        }
        let short = &image_fixture(2)[..16 + 784];
        assert!(matches!(parse_idx_images(short), Err(Error::Parse { .. })));
    }

    #[test]
    fn bad_magic() {
        let mut b = image_fixture(1);
        b[3] = 0x01;
        assert!(matches!(parse_idx_images(&b), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(parse_idx_labels(&image_fixture(1)), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn labels_validated() {
        assert_eq!(parse_idx_labels(&label_fixture(&[0, 9, 3])).unwrap(), vec![0, 9, 3]);
        let err = parse_idx_labels(&label_fixture(&[1, 10])).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn loads_pair_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        std::fs::write(&ip, image_fixture(3)).unwrap();
        std::fs::write(&lp, label_fixture(&[1, 2, 3])).unwrap();
        let ds = load_idx_dataset(&ip, &lp).unwrap();
        assert_eq!(ds.labels, vec![1, 2, 3]);
        std::fs::write(&lp, label_fixture(&[1, 2])).unwrap();
        assert!(load_idx_dataset(&ip, &lp).is_err());
    }
}
