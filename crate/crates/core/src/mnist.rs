//! MNIST ingestion from IDX files.
//!
//! IDX layout: a big-endian `u32` magic (`0x00000803` for images,
//! `0x00000801` for labels), one big-endian `u32` extent per dimension, then
//! the row-major unsigned-byte payload. Gzip-compressed files are detected by
//! their header and decompressed transparently.

use std::fs;
use std::io::Read;
use std::ops::Range;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::ops::one_hot_index;
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

pub const TRAIN_SIZE: usize = 55_000;
pub const VALIDATION_SIZE: usize = 5_000;
pub const TEST_SIZE: usize = 10_000;
const SOURCE_TRAIN_SIZE: usize = TRAIN_SIZE + VALIDATION_SIZE;

/// Divisor applied to raw pixel bytes; 255 maps pixels into `[0, 1]`.
pub const DEFAULT_PIXEL_SCALE: f64 = 255.0;

fn idx_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Idx {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| idx_err(path, e.to_string()))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| idx_err(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parsed IDX container: extents plus unsigned-byte payload.
struct Idx {
    dims: Vec<usize>,
    payload: Vec<u8>,
}

fn parse_idx(path: &Path, bytes: Vec<u8>, magic: u32) -> Result<Idx> {
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| idx_err(path, "truncated header"))
    };
    let found = word(0)?;
    if found != magic {
        return Err(idx_err(
            path,
            format!("wrong magic number {found:#010x}, expected {magic:#010x}"),
        ));
    }
    let rank = (magic & 0xff) as usize;
    let dims = (1..=rank)
        .map(|i| word(i).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 * (rank + 1);
    let expected: usize = dims.iter().product();
    let available = bytes.len() - header;
    if available < expected {
        return Err(idx_err(
            path,
            format!("truncated payload: header declares {expected} bytes, found {available}"),
        ));
    }
    if available > expected {
        return Err(idx_err(
            path,
            format!("dimension mismatch: header declares {expected} bytes, found {available}"),
        ));
    }
    let mut payload = bytes;
    payload.drain(..header);
    Ok(Idx { dims, payload })
}

/// Images as `[N, rows, cols, 1]`, pixels divided by `pixel_scale`.
pub fn load_idx_images_scaled(path: impl AsRef<Path>, pixel_scale: f64) -> Result<Tensor> {
    let path = path.as_ref();
    let idx = parse_idx(path, read_maybe_gzip(path)?, IMAGE_MAGIC)?;
    let [n, rows, cols] = idx.dims[..] else {
        unreachable!("image magic fixes rank 3")
    };
    if n == 0 || rows == 0 || cols == 0 {
        return Err(idx_err(path, format!("empty image set {n}x{rows}x{cols}")));
    }
    let data = idx
        .payload
        .iter()
        .map(|&p| f64::from(p) / pixel_scale)
        .collect();
    Tensor::new(vec![n, rows, cols, 1], data)
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Tensor> {
    load_idx_images_scaled(path, DEFAULT_PIXEL_SCALE)
}

/// Raw class labels.
pub fn load_idx_label_bytes(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let idx = parse_idx(path, read_maybe_gzip(path)?, LABEL_MAGIC)?;
    if let Some(&bad) = idx.payload.iter().find(|&&l| usize::from(l) >= NUM_CLASSES) {
        return Err(idx_err(path, format!("label {bad} out of range 0..=9")));
    }
    if idx.payload.is_empty() {
        return Err(idx_err(path, "empty label set"));
    }
    Ok(idx.payload)
}

/// Labels as an `[N]` tensor of class indices.
pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = load_idx_label_bytes(path)?;
    Tensor::vector(bytes.into_iter().map(f64::from).collect())
}

pub fn one_hot(label: usize) -> Result<Tensor> {
    if label >= NUM_CLASSES {
        return Err(Error::InvalidArgument(format!(
            "label {label} outside 0..={}",
            NUM_CLASSES - 1
        )));
    }
    let mut t = Tensor::zeros(&[NUM_CLASSES]);
    t.data_mut()[label] = 1.0;
    Ok(t)
}

/// Images `[N, H, W, C]` with one-hot labels `[N, 10]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Tensor,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Tensor) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::InvalidArgument(format!(
                "images must be [N, H, W, C], got {}",
                images.shape_string()
            )));
        }
        if labels.shape() != [images.shape()[0], NUM_CLASSES] {
            return Err(Error::InvalidArgument(format!(
                "labels {} do not match {} images",
                labels.shape_string(),
                images.shape()[0]
            )));
        }
        for (i, row) in labels.data().chunks_exact(NUM_CLASSES).enumerate() {
            if one_hot_index(row).is_none() {
                return Err(Error::InvalidArgument(format!(
                    "label row {i} is not one-hot"
                )));
            }
        }
        Ok(Self { images, labels })
    }

    /// From `[N, H, W, C]` images and `[N]` class indices.
    pub fn from_class_indices(images: Tensor, classes: &[u8]) -> Result<Self> {
        let mut labels = vec![0.0; classes.len() * NUM_CLASSES];
        for (i, &c) in classes.iter().enumerate() {
            if usize::from(c) >= NUM_CLASSES {
                return Err(Error::InvalidArgument(format!(
                    "label {c} at row {i} out of range"
                )));
            }
            labels[i * NUM_CLASSES + usize::from(c)] = 1.0;
        }
        Self::new(
            images,
            Tensor::new(vec![classes.len(), NUM_CLASSES], labels)?,
        )
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[H, W, C]` of one sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &Tensor {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let len = self.sample_len();
        &self.images.data()[i * len..(i + 1) * len]
    }

    pub fn label_row(&self, i: usize) -> &[f64] {
        &self.labels.data()[i * NUM_CLASSES..(i + 1) * NUM_CLASSES]
    }

    pub fn class(&self, i: usize) -> usize {
        one_hot_index(self.label_row(i)).expect("labels validated as one-hot")
    }

    /// Copies the given sample indices into a new dataset.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty selection".into()));
        }
        let len = self.sample_len();
        let mut images = Vec::with_capacity(indices.len() * len);
        let mut labels = Vec::with_capacity(indices.len() * NUM_CLASSES);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "index {i} out of range for {} samples",
                    self.len()
                )));
            }
            images.extend_from_slice(self.image(i));
            labels.extend_from_slice(self.label_row(i));
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        Ok(Self {
            images: Tensor::new(shape, images)?,
            labels: Tensor::new(vec![indices.len(), NUM_CLASSES], labels)?,
        })
    }

    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        self.select(&range.collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl DataSplits {
    /// Arbitrary splits (subsets, synthetic data). [`make_splits`] produces
    /// the standard 55,000 / 5,000 / 10,000 partition.
    pub fn new(train: Dataset, validation: Dataset, test: Dataset) -> Result<Self> {
        if train.sample_shape() != validation.sample_shape()
            || train.sample_shape() != test.sample_shape()
        {
            return Err(Error::InvalidArgument(
                "splits disagree on sample shape".into(),
            ));
        }
        Ok(Self {
            train,
            validation,
            test,
        })
    }
}

fn split_images(images: Tensor, at: usize) -> Result<(Tensor, Tensor)> {
    let shape = images.shape().to_vec();
    let per: usize = shape[1..].iter().product();
    let mut head = images.into_data();
    let tail = head.split_off(at * per);
    let mut head_shape = shape.clone();
    head_shape[0] = at;
    let mut tail_shape = shape;
    tail_shape[0] -= at;
    Ok((
        Tensor::new(head_shape, head)?,
        Tensor::new(tail_shape, tail)?,
    ))
}

fn labels_to_classes(labels: &Tensor) -> Result<Vec<u8>> {
    if labels.rank() != 1 {
        return Err(Error::InvalidArgument(format!(
            "labels must be [N], got {}",
            labels.shape_string()
        )));
    }
    labels
        .data()
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && (0.0..NUM_CLASSES as f64).contains(&v) {
                Ok(v as u8)
            } else {
                Err(Error::InvalidArgument(format!("invalid class label {v}")))
            }
        })
        .collect()
}

/// First 55,000 training records → train, last 5,000 → validation, the test
/// file → test. File order is preserved.
pub fn make_splits(
    train_images: Tensor,
    train_labels: Tensor,
    test_images: Tensor,
    test_labels: Tensor,
) -> Result<DataSplits> {
    let check = |what: &str, images: &Tensor, labels: &Tensor, n: usize| -> Result<()> {
        if images.shape() != [n, 28, 28, 1] || labels.shape() != [n] {
            return Err(Error::InvalidArgument(format!(
                "{what}: expected {n} 28x28 images and labels, got {} and {}",
                images.shape_string(),
                labels.shape_string()
            )));
        }
        Ok(())
    };
    check(
        "training file",
        &train_images,
        &train_labels,
        SOURCE_TRAIN_SIZE,
    )?;
    check("test file", &test_images, &test_labels, TEST_SIZE)?;

    let classes = labels_to_classes(&train_labels)?;
    let (train_imgs, val_imgs) = split_images(train_images, TRAIN_SIZE)?;
    let train = Dataset::from_class_indices(train_imgs, &classes[..TRAIN_SIZE])?;
    let validation = Dataset::from_class_indices(val_imgs, &classes[TRAIN_SIZE..])?;
    let test = Dataset::from_class_indices(test_images, &labels_to_classes(&test_labels)?)?;
    DataSplits::new(train, validation, test)
}

/// Locates `name` or `name.gz` inside `dir`.
fn locate(dir: &Path, name: &str) -> Option<PathBuf> {
    [dir.join(name), dir.join(format!("{name}.gz"))]
        .into_iter()
        .find(|p| p.is_file())
}

pub const CANONICAL_FILES: [&str; 4] = [TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS];

/// Loads the four canonical files from `dir` and builds the standard splits.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<DataSplits> {
    let dir = dir.as_ref();
    let found: Vec<Option<PathBuf>> = CANONICAL_FILES.iter().map(|n| locate(dir, n)).collect();
    let missing: Vec<String> = CANONICAL_FILES
        .iter()
        .zip(&found)
        .filter(|(_, f)| f.is_none())
        .map(|(n, _)| n.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingData {
            dir: dir.to_path_buf(),
            missing,
        });
    }
    let paths: Vec<PathBuf> = found.into_iter().flatten().collect();
    make_splits(
        load_idx_images(&paths[0])?,
        load_idx_labels(&paths[1])?,
        load_idx_images(&paths[2])?,
        load_idx_labels(&paths[3])?,
    )
}
