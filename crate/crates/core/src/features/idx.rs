//! Reader for the IDX image/label format used by MNIST-style datasets.
//! Files may be gzip-compressed; compression is detected from the magic
//! bytes, not the file name.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use nalgebra::DMatrix;

use super::Dataset;
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

fn idx_error(path: &Path, offset: u64, reason: impl Into<String>) -> Error {
    Error::Idx {
        path: path.to_path_buf(),
        offset,
        reason: reason.into(),
    }
}

/// File contents, decompressed if gzip.
pub fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| idx_error(path, 0, format!("gzip decoding failed: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| idx_error(path, offset as u64, "file truncated inside header"))
}

/// Images as `(count, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(idx_error(
            path,
            0,
            format!("bad image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}"),
        ));
    }
    let count = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(idx_error(
            path,
            (16 + body.len()) as u64,
            format!(
                "truncated: {count} images of {rows}x{cols} need {need} bytes, found {}",
                body.len()
            ),
        ));
    }
    Ok((count, rows, cols, body[..need].to_vec()))
}

pub fn parse_labels(bytes: &[u8], path: &Path, classes: usize) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(idx_error(
            path,
            0,
            format!("bad label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}"),
        ));
    }
    let count = read_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(idx_error(
            path,
            (8 + body.len()) as u64,
            format!("truncated: {count} labels expected, found {}", body.len()),
        ));
    }
    body[..count]
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if (l as usize) < classes {
                Ok(l as usize)
            } else {
                Err(idx_error(
                    path,
                    (8 + i) as u64,
                    format!("label {l} outside 0..{classes}"),
                ))
            }
        })
        .collect()
}

/// Loads an image file and its label file, mapping pixels `[0, 255]` to
/// `[−1, 1]`.
pub fn load_idx_files(images: &Path, labels: &Path, name: &str) -> Result<Dataset> {
    let (count, rows, cols, pixels) = parse_images(&read_maybe_gzip(images)?, images)?;
    let labels_vec = parse_labels(&read_maybe_gzip(labels)?, labels, 10)?;
    if labels_vec.len() != count {
        return Err(idx_error(
            labels,
            4,
            format!(
                "{} labels but {count} images in {}",
                labels_vec.len(),
                images.display()
            ),
        ));
    }
    let d = rows * cols;
    let inputs = DMatrix::from_row_iterator(
        count,
        d,
        pixels.iter().map(|&p| p as f64 / 255.0 * 2.0 - 1.0),
    );
    Dataset::new(inputs, labels_vec, 10, name)
}

/// Training and test splits of a dataset directory.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Dataset,
    pub test: Dataset,
}

fn find(dir: &Path, stem: &str) -> Result<PathBuf> {
    for candidate in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(&candidate);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::io(
        format!("{}", dir.join(stem).display()),
        std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "file not found (also tried .gz)",
        ),
    ))
}

/// Reads the standard `train-*` / `t10k-*` IDX file quartet.
pub fn load_idx_dataset(dir: &Path) -> Result<DatasetSplit> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir.display().to_string(),
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let train = load_idx_files(
        &find(dir, "train-images-idx3-ubyte")?,
        &find(dir, "train-labels-idx1-ubyte")?,
        &format!("{name}-train"),
    )?;
    let test = load_idx_files(
        &find(dir, "t10k-images-idx3-ubyte")?,
        &find(dir, "t10k-labels-idx1-ubyte")?,
        &format!("{name}-test"),
    )?;
    Ok(DatasetSplit { train, test })
}

/// Serializes images and labels in IDX layout (uncompressed).
pub fn encode_idx(
    images: &[Vec<u8>],
    rows: usize,
    cols: usize,
    labels: &[u8],
) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + images.len() * rows * cols);
    img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    for im in images {
        img.extend_from_slice(im);
    }
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}
