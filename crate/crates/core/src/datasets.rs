//! Labeled datasets: MNIST IDX files, numeric CSV files, a synthetic
//! two-cluster generator, and seeded train/test partitioning.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape {
                op: "LabeledDataset::new",
                left: features.shape(),
                right: (labels.len(), 1),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Range {
                value: bad,
                limit: num_classes,
            });
        }
        if !features.is_finite() {
            return Err(Error::Domain("features contain NaN or infinite values".into()));
        }
        Ok(LabeledDataset {
            name: name.into(),
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            name: self.name.clone(),
            features: self.features.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Concatenates two datasets with identical feature width.
    pub fn concat(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        let features = self.features.vstack(&other.features)?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        LabeledDataset::new(
            self.name.clone(),
            features,
            labels,
            self.num_classes.max(other.num_classes),
        )
    }

    /// Seeded subsample of `n` rows (whole dataset when `n >= len`).
    pub fn subsample(&self, n: usize, rng: &mut Rng) -> LabeledDataset {
        if n >= self.len() {
            return self.clone();
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        rng.shuffle(&mut idx);
        idx.truncate(n);
        idx.sort_unstable();
        self.subset(&idx)
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub fraction: f64,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Shuffles row indices with `rng` and puts the first `⌊fraction·N⌋` into
/// the training partition.
pub fn split_train_test(ds: &LabeledDataset, fraction: f64, rng: &mut Rng) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Bounds(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = ds.len();
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let n_train = (fraction * n as f64).floor() as usize;
    let test_indices = idx.split_off(n_train);
    let train_indices = idx;
    Ok(Split {
        train: ds.subset(&train_indices),
        test: ds.subset(&test_indices),
        fraction,
        train_indices,
        test_indices,
    })
}

pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(labels.len(), num_classes);
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::Range {
                value: l,
                limit: num_classes,
            });
        }
        m.set(i, l, 1.0);
    }
    Ok(m)
}

/// Two isotropic unit-variance Gaussian clusters whose means sit
/// `separation` apart along the all-ones direction. Labels alternate
/// 0, 1, 0, ... so class counts differ by at most one.
pub fn synth_binary(n: usize, d: usize, separation: f64, rng: &mut Rng) -> Result<LabeledDataset> {
    if n < 2 || d == 0 {
        return Err(Error::Config(format!(
            "synth_binary needs n >= 2 and d >= 1 (got n={n}, d={d})"
        )));
    }
    let offset = 0.5 * separation / (d as f64).sqrt();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let sign = if label == 1 { 1.0 } else { -1.0 };
        for _ in 0..d {
            data.push(sign * offset + rng.gaussian());
        }
        labels.push(label);
    }
    LabeledDataset::new("synth_binary", Matrix::from_vec(n, d, data)?, labels, 2)
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: bytes.len(),
            message: format!("file truncated: expected 4 header bytes at offset {offset}"),
        })
}

/// Parsed IDX image file: `count` images of `rows × cols` pixels, scaled to [0, 1].
#[derive(Debug, Clone)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Matrix,
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        });
    }
    let count = read_u32_be(bytes, 4)? as usize;
    let rows = read_u32_be(bytes, 8)? as usize;
    let cols = read_u32_be(bytes, 12)? as usize;
    let body = &bytes[16..];
    let need = count * rows * cols;
    if body.len() < need {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!(
                "image data truncated: header promises {need} pixel bytes, found {}",
                body.len()
            ),
        });
    }
    let data = body[..need].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: Matrix::from_vec(count, rows * cols, data)?,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
        });
    }
    let count = read_u32_be(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!(
                "label data truncated: header promises {count} labels, found {}",
                body.len()
            ),
        });
    }
    Ok(body[..count].iter().map(|&b| usize::from(b)).collect())
}

/// Loads an IDX image/label file pair. Pixels are divided by 255.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let img_bytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let lbl_bytes = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    mnist_from_bytes(&img_bytes, &lbl_bytes, "mnist")
}

pub fn mnist_from_bytes(images: &[u8], labels: &[u8], name: &str) -> Result<LabeledDataset> {
    let images = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if images.count != labels.len() {
        return Err(Error::Format {
            offset: 4,
            message: format!(
                "image/label count mismatch: {} images vs {} labels",
                images.count,
                labels.len()
            ),
        });
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    LabeledDataset::new(name, images.pixels, labels, num_classes)
}

/// Serializes features back to IDX image bytes (`round(v·255)` per pixel).
pub fn write_idx_images(features: &Matrix, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if features.cols() != rows * cols {
        return Err(Error::Shape {
            op: "write_idx_images",
            left: features.shape(),
            right: (rows, cols),
        });
    }
    let mut out = Vec::with_capacity(16 + features.data().len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(features.rows() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for &v in features.data() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("pixel value {v} outside [0, 1]")));
        }
        out.push((v * 255.0).round() as u8);
    }
    Ok(out)
}

pub fn write_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        let b = u8::try_from(l).map_err(|_| Error::Range { value: l, limit: 256 })?;
        out.push(b);
    }
    Ok(out)
}

/// Reads a numeric CSV: every column but the last is a feature, the last
/// is an integer class label. A first row that does not parse as numbers
/// is treated as a header.
pub fn load_csv(path: &Path) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    parse_csv(&text, &name)
}

pub fn parse_csv(text: &str, name: &str) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.is_empty() || (record.len() == 1 && record[0].is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if line == 0 => continue, // header
            Err(e) => {
                return Err(Error::Format {
                    offset: record.position().map_or(0, |p| p.byte() as usize),
                    message: format!("line {}: {e}", line + 1),
                })
            }
        };
        if values.len() < 2 {
            return Err(Error::Format {
                offset: record.position().map_or(0, |p| p.byte() as usize),
                message: format!("line {}: need at least one feature and a label", line + 1),
            });
        }
        let w = *width.get_or_insert(values.len());
        if values.len() != w {
            return Err(Error::Format {
                offset: record.position().map_or(0, |p| p.byte() as usize),
                message: format!("line {}: expected {w} fields, found {}", line + 1, values.len()),
            });
        }
        let label = values[w - 1];
        if label < 0.0 || label.fract() != 0.0 {
            return Err(Error::Format {
                offset: record.position().map_or(0, |p| p.byte() as usize),
                message: format!("line {}: label {label} is not a class index", line + 1),
            });
        }
        data.extend_from_slice(&values[..w - 1]);
        labels.push(label as usize);
    }
    let d = width.map_or(0, |w| w - 1);
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let features = Matrix::from_vec(labels.len(), d, data)?;
    LabeledDataset::new(name, features, labels, num_classes)
}
