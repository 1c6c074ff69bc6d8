use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Grayscale images (row-major bytes) with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImages {
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
    /// SHA-256 of the image file bytes followed by the label file bytes.
    pub digest: String,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated(format!("{what}: header ends at byte {}", bytes.len())))
}

fn check_magic(bytes: &[u8], want: u32, what: &str) -> Result<()> {
    let got = read_u32(bytes, 0, what)?;
    if got != want {
        return Err(Error::Format(format!("{what}: bad magic 0x{got:08x}, expected 0x{want:08x}")));
    }
    Ok(())
}

/// Parses an IDX3 image file into `(images, rows, cols)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<Vec<u8>>, usize, usize)> {
    check_magic(bytes, IMAGE_MAGIC, "image file")?;
    let count = read_u32(bytes, 4, "image file")? as usize;
    let rows = read_u32(bytes, 8, "image file")? as usize;
    let cols = read_u32(bytes, 12, "image file")? as usize;
    let size = rows * cols;
    let body = &bytes[16..];
    if body.len() < count * size {
        return Err(Error::Truncated(format!(
            "image file: {count} images of {rows}×{cols} need {} bytes, found {}",
            count * size,
            body.len()
        )));
    }
    let images = body[..count * size].chunks(size.max(1)).take(count).map(<[u8]>::to_vec).collect();
    Ok((images, rows, cols))
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC, "label file")?;
    let count = read_u32(bytes, 4, "label file")? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::Truncated(format!(
            "label file: {count} labels declared, {} bytes present",
            body.len()
        )));
    }
    Ok(body[..count].to_vec())
}

pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledImages> {
    let ib = fs::read(images_path.as_ref()).map_err(|e| Error::io(images_path.as_ref(), e))?;
    let lb = fs::read(labels_path.as_ref()).map_err(|e| Error::io(labels_path.as_ref(), e))?;
    let (images, rows, cols) = parse_idx_images(&ib)?;
    let labels = parse_idx_labels(&lb)?;
    if images.len() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let mut h = Sha256::new();
    h.update(&ib);
    h.update(&lb);
    Ok(LabeledImages {
        images,
        labels,
        rows,
        cols,
        digest: hex::encode(h.finalize()),
    })
}

pub fn write_idx_images(images: &[Vec<u8>], rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IMAGE_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (Vec<Vec<u8>>, Vec<u8>) {
        let images = (0..4).map(|k| (0..784).map(|i| ((i * 7 + k * 31) % 256) as u8).collect()).collect();
        (images, vec![3, 1, 4, 1])
    }

    #[test]
    fn four_image_fixture() {
        let (images, labels) = fixture();
        let (parsed, r, c) = parse_idx_images(&write_idx_images(&images, 28, 28)).unwrap();
        assert_eq!((r, c), (28, 28));
        assert_eq!(parsed, images);
        assert_eq!(parse_idx_labels(&write_idx_labels(&labels)).unwrap(), labels);
    }

    #[test]
    fn bad_magic_names_the_value() {
        let mut bytes = write_idx_labels(&[1, 2]);
        bytes[3] = 0x02;
        let err = parse_idx_labels(&bytes).unwrap_err();
        assert!(matches!(&err, Error::Format(m) if m.contains("0x00000802")), "{err}");
        assert!(matches!(parse_idx_images(&write_idx_labels(&[1])), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_is_distinct() {
        let (images, _) = fixture();
        let bytes = write_idx_images(&images, 28, 28);
        assert!(matches!(parse_idx_images(&bytes[..bytes.len() - 1]), Err(Error::Truncated(_))));
        assert!(matches!(parse_idx_images(&bytes[..10]), Err(Error::Truncated(_))));
        assert!(matches!(parse_idx_labels(&write_idx_labels(&[1, 2])[..9]), Err(Error::Truncated(_))));
    }

    #[test]
    fn count_mismatch_and_missing_files() {
        let dir = std::env::temp_dir().join(format!("pinset-idx-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let (images, _) = fixture();
        fs::write(dir.join("i"), write_idx_images(&images, 28, 28)).unwrap();
        fs::write(dir.join("l"), write_idx_labels(&[0, 1, 2])).unwrap();
        assert!(matches!(load_mnist_idx(dir.join("i"), dir.join("l")), Err(Error::Consistency(_))));
        assert!(matches!(load_mnist_idx(dir.join("nope"), dir.join("l")), Err(Error::Io { .. })));
        fs::write(dir.join("l"), write_idx_labels(&[0, 1, 2, 3])).unwrap();
        let a = load_mnist_idx(dir.join("i"), dir.join("l")).unwrap();
        let b = load_mnist_idx(dir.join("i"), dir.join("l")).unwrap();
        assert_eq!(a.digest, b.digest);
        assert_eq!(a.len(), 4);
        fs::remove_dir_all(&dir).unwrap();
    }
}
