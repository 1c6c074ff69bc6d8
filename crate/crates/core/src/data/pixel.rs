use std::ops::Range;

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::Tensor;

use super::idx::LabeledImages;
use super::SetDataset;

/// One image as a set of `(x, y, gray)` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelSet {
    pub elements: Tensor,
    pub label: usize,
}

fn coord(k: usize, extent: usize) -> f64 {
    if extent <= 1 {
        0.0
    } else {
        2.0 * k as f64 / (extent - 1) as f64 - 1.0
    }
}

/// Row per pixel: `x` from the column, `y` from the row (top-left is `(−1, −1)`),
/// gray value divided by 255. Rows are shuffled when `rng` is given.
pub fn image_to_pixel_set(img: &[u8], rows: usize, cols: usize, rng: Option<&mut RngState>) -> Result<Tensor> {
    if img.len() != rows * cols {
        return Err(Error::Shape {
            shape: vec![rows, cols],
            reason: format!("image has {} bytes", img.len()),
        });
    }
    let mut data = Vec::with_capacity(img.len() * 3);
    for r in 0..rows {
        for c in 0..cols {
            data.extend_from_slice(&[coord(c, cols), coord(r, rows), img[r * cols + c] as f64 / 255.0]);
        }
    }
    let set = Tensor::matrix(rows * cols, 3, data)?;
    match rng {
        Some(rng) => set.permute_rows(&rng.permutation(rows * cols)),
        None => Ok(set),
    }
}

/// Averages 2×2 blocks (rounded half up); odd trailing rows/columns are dropped.
pub fn downsample_2x2(img: &[u8], rows: usize, cols: usize) -> (Vec<u8>, usize, usize) {
    let (r2, c2) = (rows / 2, cols / 2);
    let mut out = Vec::with_capacity(r2 * c2);
    for r in 0..r2 {
        for c in 0..c2 {
            let s: u32 = [(0, 0), (0, 1), (1, 0), (1, 1)]
                .iter()
                .map(|(dr, dc)| img[(2 * r + dr) * cols + 2 * c + dc] as u32)
                .sum();
            out.push(((s + 2) / 4) as u8);
        }
    }
    (out, r2, c2)
}

/// Converts `range` of the images into pixel sets.
pub fn pixel_dataset(
    images: &LabeledImages,
    range: Range<usize>,
    downsample: bool,
    mut rng: Option<&mut RngState>,
) -> Result<SetDataset> {
    if range.end > images.len() {
        return Err(Error::Consistency(format!(
            "requested images {range:?} but only {} are available",
            images.len()
        )));
    }
    let mut sets = Vec::with_capacity(range.len());
    let mut labels = Vec::with_capacity(range.len());
    for i in range {
        let (img, r, c) = if downsample {
            downsample_2x2(&images.images[i], images.rows, images.cols)
        } else {
            (images.images[i].clone(), images.rows, images.cols)
        };
        sets.push(image_to_pixel_set(&img, r, c, rng.as_deref_mut())?);
        labels.push(images.labels[i] as usize);
    }
    let class_count = labels.iter().max().map_or(10, |&m| (m + 1).max(10));
    let mut ds = SetDataset::new(sets, labels, class_count)?;
    ds.note("gray_normalization", "byte/255");
    ds.note("coordinates", "x=column, y=row, top-left (-1,-1)");
    ds.note("source_digest", images.digest.clone());
    if downsample {
        ds.note("downsample", "2x2 mean");
    }
    Ok(ds)
}
