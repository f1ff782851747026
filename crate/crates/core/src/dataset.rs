//! Labelled image sets and IDX (MNIST-format) ingestion.
//!
//! Pixels are normalized to `[-1, 1]`. The network input is the binarized
//! image: a pixel becomes bit 1 (+1) when its normalized value is `>= 0`.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use thiserror::Error;

use crate::bitcore::BitTensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: bad magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: file is truncated, {missing} bytes missing")]
    Truncated { path: PathBuf, missing: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at index {index} is not below the class count {classes}")]
    LabelRange { index: usize, label: usize, classes: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("{0}")]
    Shape(String),
    #[error("no {name} file in {dir}")]
    Missing { dir: PathBuf, name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Images stored row-major as `(H, W, C)` with values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    shape: [usize; 3],
    images: Vec<f32>,
    labels: Vec<usize>,
    classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        shape: [usize; 3],
        images: Vec<f32>,
        labels: Vec<usize>,
        classes: usize,
        split: Split,
    ) -> Result<Self, DataError> {
        let per = shape.iter().product::<usize>();
        if per == 0 {
            return Err(DataError::Shape(format!("image shape {shape:?} is empty")));
        }
        if images.len() != per * labels.len() {
            return Err(DataError::CountMismatch { images: images.len() / per, labels: labels.len() });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(DataError::LabelRange { index, label, classes });
        }
        if let Some(v) = images.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(DataError::Shape(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(Dataset { shape, images, labels, classes, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn pixels(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.pixels();
        &self.images[i * n..(i + 1) * n]
    }

    /// Binarized image shaped `(H, W, C)`.
    pub fn input_bits(&self, i: usize) -> BitTensor {
        let bits: Vec<bool> = self.image(i).iter().map(|&v| v >= 0.0).collect();
        BitTensor::from_bits(&bits, &self.shape).expect("shape matches pixel count")
    }

    /// Binarized image as `±1` values.
    pub fn input_signs(&self, i: usize) -> Vec<f64> {
        self.image(i).iter().map(|&v| if v >= 0.0 { 1.0 } else { -1.0 }).collect()
    }

    /// Samples `range` as a new set tagged `split`.
    pub fn slice(&self, range: std::ops::Range<usize>, split: Split) -> Dataset {
        let n = self.pixels();
        Dataset {
            shape: self.shape,
            images: self.images[range.start * n..range.end * n].to_vec(),
            labels: self.labels[range].to_vec(),
            classes: self.classes,
            split,
        }
    }
}

/// Train, validation and test sets.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    let io = |source| DataError::Io { path: path.to_path_buf(), source };
    let raw = fs::read(path).map_err(io)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn check_header(path: &Path, bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>, DataError> {
    let header = 4 + 4 * dims;
    if bytes.len() < 4 {
        return Err(DataError::Truncated { path: path.into(), missing: header - bytes.len() });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(DataError::BadMagic { path: path.into(), found, expected: magic });
    }
    if bytes.len() < header {
        return Err(DataError::Truncated { path: path.into(), missing: header - bytes.len() });
    }
    let dims: Vec<usize> = (0..dims).map(|d| be_u32(bytes, 4 + 4 * d) as usize).collect();
    let need = header + dims.iter().product::<usize>();
    if bytes.len() < need {
        return Err(DataError::Truncated { path: path.into(), missing: need - bytes.len() });
    }
    Ok(dims)
}

/// Raw IDX image file: count, rows, cols and the pixel bytes.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>), DataError> {
    let bytes = read_file(path)?;
    let d = check_header(path, &bytes, IMAGE_MAGIC, 3)?;
    let body = bytes[16..16 + d[0] * d[1] * d[2]].to_vec();
    Ok((d[0], d[1], d[2], body))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>, DataError> {
    let bytes = read_file(path)?;
    let d = check_header(path, &bytes, LABEL_MAGIC, 1)?;
    Ok(bytes[8..8 + d[0]].to_vec())
}

/// Image and label IDX files as one normalized 10-class set. Files ending in
/// `.gz` are decompressed.
pub fn load_idx(images: &Path, labels: &Path, split: Split) -> Result<Dataset, DataError> {
    let (n, rows, cols, pixels) = read_idx_images(images)?;
    let labels = read_idx_labels(labels)?;
    if n != labels.len() {
        return Err(DataError::CountMismatch { images: n, labels: labels.len() });
    }
    let images = pixels.iter().map(|&p| p as f32 / 127.5 - 1.0).collect();
    Dataset::new([rows, cols, 1], images, labels.into_iter().map(usize::from).collect(), 10, split)
}

fn find(dir: &Path, stem: &str) -> Result<PathBuf, DataError> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(DataError::Missing { dir: dir.into(), name: stem.into() })
}

/// Loads the standard `train-*` / `t10k-*` IDX files from `dir`.
///
/// The last `val_fraction` of the training file becomes the validation
/// set; file order is kept everywhere.
pub fn load_idx_dir(dir: &Path, val_fraction: f64) -> Result<DataSplits, DataError> {
    let train = load_idx(&find(dir, "train-images-idx3-ubyte")?, &find(dir, "train-labels-idx1-ubyte")?, Split::Train)?;
    let test = load_idx(&find(dir, "t10k-images-idx3-ubyte")?, &find(dir, "t10k-labels-idx1-ubyte")?, Split::Test)?;
    if train.is_empty() || test.is_empty() {
        return Err(DataError::Empty);
    }
    let n_val = ((train.len() as f64) * val_fraction.clamp(0.0, 1.0)).round() as usize;
    let cut = train.len() - n_val.min(train.len() - 1);
    Ok(DataSplits {
        val: train.slice(cut..train.len(), Split::Val),
        train: train.slice(0..cut, Split::Train),
        test,
    })
}
