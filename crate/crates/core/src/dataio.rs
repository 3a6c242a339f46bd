//! MNIST IDX files, synthetic Gaussian blobs and IID partitioning.

use std::fs;
use std::io;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::learner::{Dataset, LearnerError};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("expected {kind} magic {expected:#010x}, found {found:#010x}")]
    BadMagic { kind: &'static str, expected: u32, found: u32 },
    #[error("truncated IDX file: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("IDX file has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("label {label} at index {index} is not a digit class")]
    LabelOutOfRange { index: usize, label: u8 },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("cannot split {samples} samples into {parts} parts")]
    TooManyParts { samples: usize, parts: usize },
    #[error("invalid synthetic data parameters: {0}")]
    InvalidSynthetic(String),
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

/// Raw IDX image payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImageSet {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(DataError::Truncated { expected: at + 4, actual: bytes.len() })
}

fn check_payload(bytes: &[u8], expected: usize) -> Result<(), DataError> {
    match bytes.len().cmp(&expected) {
        std::cmp::Ordering::Less => Err(DataError::Truncated { expected, actual: bytes.len() }),
        std::cmp::Ordering::Greater => Err(DataError::TrailingBytes(bytes.len() - expected)),
        std::cmp::Ordering::Equal => Ok(()),
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<RawImageSet, DataError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic { kind: "image", expected: IMAGE_MAGIC, found: magic });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    check_payload(bytes, 16 + count * rows * cols)?;
    Ok(RawImageSet { count, rows, cols, pixels: bytes[16..].to_vec() })
}

pub fn read_idx_images(path: impl AsRef<Path>) -> Result<RawImageSet, DataError> {
    parse_idx_images(&read_file(path.as_ref())?)
}

pub fn write_idx_images(images: &RawImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic { kind: "label", expected: LABEL_MAGIC, found: magic });
    }
    let count = be_u32(bytes, 4)? as usize;
    check_payload(bytes, 8 + count)?;
    let labels = bytes[8..].to_vec();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= MNIST_CLASSES) {
        return Err(DataError::LabelOutOfRange { index, label });
    }
    Ok(labels)
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>, DataError> {
    parse_idx_labels(&read_file(path.as_ref())?)
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Pixels scaled to `[0, 1]`, one flattened row-major image per sample.
pub fn to_dataset(images: &RawImageSet, labels: &[u8]) -> Result<Dataset, DataError> {
    if images.count != labels.len() {
        return Err(DataError::CountMismatch { images: images.count, labels: labels.len() });
    }
    let dims = images.rows * images.cols;
    let features = Array2::from_shape_vec(
        (images.count, dims),
        images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )
    .expect("payload length checked at parse time");
    Ok(Dataset::new(features, labels.iter().map(|&l| l as usize).collect(), MNIST_CLASSES)?)
}

/// Loads an image file and its label file as a dataset.
pub fn load_mnist(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset, DataError> {
    to_dataset(&read_idx_images(images)?, &read_idx_labels(labels)?)
}

/// Seeded shuffle of `0..len`, cut into `parts` contiguous runs whose sizes
/// differ by at most one (the first `len % parts` runs get the extra sample).
pub fn partition_indices(len: usize, parts: usize, seed: u64) -> Result<Vec<Vec<usize>>, DataError> {
    if parts == 0 || parts > len {
        return Err(DataError::TooManyParts { samples: len, parts });
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (len / parts, len % parts);
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for k in 0..parts {
        let size = base + usize::from(k < extra);
        out.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(out)
}

pub fn partition_iid(data: &Dataset, parts: usize, seed: u64) -> Result<Vec<Dataset>, DataError> {
    Ok(partition_indices(data.len(), parts, seed)?.iter().map(|idx| data.subset(idx)).collect())
}

/// Spherical Gaussian clusters, one per class, with centers drawn uniformly
/// from the unit cube. Samples are ordered class by class.
pub fn synthetic_blobs(
    classes: usize,
    dims: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if classes == 0 || dims == 0 || per_class == 0 {
        return Err(DataError::InvalidSynthetic(format!(
            "classes={classes}, dims={dims}, per_class={per_class} must all be positive"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(DataError::InvalidSynthetic(format!("spread {spread} must be >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> =
        (0..classes).map(|_| (0..dims).map(|_| rng.random::<f64>()).collect()).collect();
    let mut features = Array2::zeros((classes * per_class, dims));
    let mut labels = Vec::with_capacity(classes * per_class);
    for (class, center) in centers.iter().enumerate() {
        for k in 0..per_class {
            let mut row = features.row_mut(class * per_class + k);
            for (x, c) in row.iter_mut().zip(center) {
                let noise: f64 = rng.sample(StandardNormal);
                *x = c + spread * noise;
            }
            labels.push(class);
        }
    }
    Ok(Dataset::new(features, labels, classes)?)
}
