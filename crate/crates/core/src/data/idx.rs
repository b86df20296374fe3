//! IDX (MNIST) files: big-endian u32 header words followed by raw bytes.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "{} truncated at byte {}",
                    self.what,
                    self.bytes.len()
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} has {} trailing bytes",
                self.what,
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Parses in-memory image and label files into an `n × (rows·cols)` dataset
/// with pixel values scaled by 1/255.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let mut img = Reader {
        bytes: images,
        pos: 0,
        what: "image file",
    };
    let magic = img.u32()?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "image file magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let count = img.u32()? as usize;
    let rows = img.u32()? as usize;
    let cols = img.u32()? as usize;
    let pixels = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
    let raw = img.take(pixels)?;
    img.finish()?;

    let mut lab = Reader {
        bytes: labels,
        pos: 0,
        what: "label file",
    };
    let magic = lab.u32()?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "label file magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let label_count = lab.u32()? as usize;
    if label_count != count {
        return Err(Error::Format(format!(
            "{count} images but {label_count} labels"
        )));
    }
    let label_bytes = lab.take(label_count)?;
    lab.finish()?;

    if count == 0 || rows == 0 || cols == 0 {
        return Err(Error::Format("empty IDX dataset".into()));
    }
    let features: Vec<f32> = raw.iter().map(|&b| b as f32 / 255.0).collect();
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(
        Tensor::new(vec![count, rows * cols], features)?,
        labels,
        class_count,
    )
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

/// Encodes an image tensor whose values are multiples of 1/255.
pub fn encode_idx_images(ds: &Dataset, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if ds.sample_shape().iter().product::<usize>() != rows * cols {
        return Err(Error::Dimension(format!(
            "samples of shape {:?} are not {rows}×{cols}",
            ds.sample_shape()
        )));
    }
    let mut out = Vec::with_capacity(16 + ds.features().len());
    for word in [IMAGES_MAGIC, ds.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend(
        ds.features()
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    Ok(out)
}

pub fn encode_idx_labels(ds: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + ds.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    for &l in ds.labels() {
        out.push(
            u8::try_from(l).map_err(|_| Error::Format(format!("label {l} does not fit a byte")))?,
        );
    }
    Ok(out)
}

pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    ds: &Dataset,
    rows: usize,
    cols: usize,
) -> Result<()> {
    std::fs::write(images_path, encode_idx_images(ds, rows, cols)?)?;
    std::fs::write(labels_path, encode_idx_labels(ds)?)?;
    Ok(())
}
