//! Dataset ingestion: the IDX format (Fashion-MNIST distribution) and the
//! CIFAR-10 binary format, plus per-channel standardization.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;

/// Images scaled to `[0, 1]` (optionally standardized) with integer labels.
#[derive(Clone, Debug)]
pub struct Dataset<T: Scalar = f32> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub split: String,
    pub num_classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        images: Tensor<T>,
        labels: Vec<usize>,
        split: &str,
        num_classes: usize,
    ) -> Result<Dataset<T>> {
        if images.rank() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "dataset images must be N x C x H x W, got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::Format(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Format(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            split: split.to_string(),
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Copy of examples `[start, end)` as a batch tensor plus labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let shape = self.images.shape();
        let per = shape[1] * shape[2] * shape[3];
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        let mut bshape = shape.to_vec();
        bshape[0] = indices.len();
        (
            Tensor::from_vec(&bshape, data).expect("dataset tensors are finite"),
            labels,
        )
    }

    /// First `n` examples (or all, if fewer).
    pub fn take(&self, n: usize) -> Dataset<T> {
        let n = n.min(self.len());
        let indices: Vec<usize> = (0..n).collect();
        let (images, labels) = self.batch(&indices);
        Dataset {
            images,
            labels,
            split: self.split.clone(),
            num_classes: self.num_classes,
        }
    }
}

fn read_u32_be(bytes: &[u8], off: usize, what: &str) -> Result<u32> {
    bytes
        .get(off..off + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format(format!("truncated file while reading {what}")))
}

/// Load an IDX image file: big-endian magic 0x00000803, then N, H, W and
/// raw pixel bytes. Pixels are scaled to `[0, 1]`.
pub fn load_idx_images<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path)?;
    let magic = read_u32_be(&bytes, 0, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad IDX image magic 0x{magic:08x}",
            path.display()
        )));
    }
    let n = read_u32_be(&bytes, 4, "count")? as usize;
    let h = read_u32_be(&bytes, 8, "height")? as usize;
    let w = read_u32_be(&bytes, 12, "width")? as usize;
    let want = 16 + n * h * w;
    if bytes.len() != want {
        return Err(Error::Format(format!(
            "{}: expected {want} bytes for {n} images of {h}x{w}, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let data: Vec<T> = bytes[16..]
        .iter()
        .map(|&b| T::from_f64(b as f64 / 255.0))
        .collect();
    Tensor::from_vec(&[n, 1, h, w], data)
}

/// Load an IDX label file: big-endian magic 0x00000801, then N label bytes.
pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = fs::read(path)?;
    let magic = read_u32_be(&bytes, 0, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad IDX label magic 0x{magic:08x}",
            path.display()
        )));
    }
    let n = read_u32_be(&bytes, 4, "count")? as usize;
    if bytes.len() != 8 + n {
        return Err(Error::Format(format!(
            "{}: expected {} bytes for {n} labels, found {}",
            path.display(),
            8 + n,
            bytes.len()
        )));
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

/// Load an image/label IDX pair into a dataset.
pub fn load_idx<T: Scalar>(
    images_path: &Path,
    labels_path: &Path,
    split: &str,
    num_classes: usize,
) -> Result<Dataset<T>> {
    let images = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if images.shape()[0] != labels.len() {
        return Err(Error::Format(format!(
            "image/label count mismatch: {} vs {}",
            images.shape()[0],
            labels.len()
        )));
    }
    Dataset::new(images, labels, split, num_classes)
}

/// Serialize images back to IDX bytes (pixels quantized to `round(v * 255)`).
pub fn write_idx_images<T: Scalar>(images: &Tensor<T>) -> Result<Vec<u8>> {
    if images.rank() != 4 || images.shape()[1] != 1 {
        return Err(Error::ShapeMismatch(format!(
            "IDX images must be N x 1 x H x W, got {:?}",
            images.shape()
        )));
    }
    let (n, h, w) = (images.shape()[0], images.shape()[2], images.shape()[3]);
    let mut out = Vec::with_capacity(16 + n * h * w);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(n as u32).to_be_bytes());
    out.extend_from_slice(&(h as u32).to_be_bytes());
    out.extend_from_slice(&(w as u32).to_be_bytes());
    for &v in images.data() {
        out.push((v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    Ok(out)
}

pub fn write_idx_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    out
}

/// Load a CIFAR-10 binary batch: records of one label byte followed by
/// 3072 pixel bytes (R, G, B planes of a 32x32 image).
pub fn load_cifar_bin<T: Scalar>(path: &Path, split: &str) -> Result<Dataset<T>> {
    let bytes = fs::read(path)?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::Format(format!(
            "{}: length {} is not a positive multiple of {CIFAR_RECORD_BYTES}",
            path.display(),
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * 3072);
    for rec in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&b| T::from_f64(b as f64 / 255.0)));
    }
    let images = Tensor::from_vec(&[n, 3, 32, 32], data)?;
    Dataset::new(images, labels, split, 10)
}

/// Serialize a 3-channel dataset back to CIFAR binary bytes.
pub fn write_cifar_bin<T: Scalar>(ds: &Dataset<T>) -> Result<Vec<u8>> {
    let shape = ds.images.shape();
    if shape[1] != 3 || shape[2] != 32 || shape[3] != 32 {
        return Err(Error::ShapeMismatch(format!(
            "CIFAR binary wants N x 3 x 32 x 32, got {shape:?}"
        )));
    }
    let per = 3072;
    let mut out = Vec::with_capacity(ds.len() * CIFAR_RECORD_BYTES);
    for i in 0..ds.len() {
        out.push(ds.labels[i] as u8);
        for &v in &ds.images.data()[i * per..(i + 1) * per] {
            out.push((v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(out)
}

/// Per-channel affine `(x - mean) / std`, with statistics taken from a
/// training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit<T: Scalar>(ds: &Dataset<T>) -> Normalizer {
        let shape = ds.images.shape();
        let (n, c, inner) = (shape[0], shape[1], shape[2] * shape[3]);
        let mut mean = vec![0.0f64; c];
        let mut std = vec![0.0f64; c];
        let count = (n * inner) as f64;
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * inner;
                for t in 0..inner {
                    mean[ch] += ds.images.data()[base + t].as_f64();
                }
            }
        }
        for m in mean.iter_mut() {
            *m /= count;
        }
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * inner;
                for t in 0..inner {
                    let d = ds.images.data()[base + t].as_f64() - mean[ch];
                    std[ch] += d * d;
                }
            }
        }
        for s in std.iter_mut() {
            *s = (*s / count).sqrt().max(1e-8);
        }
        Normalizer { mean, std }
    }

    pub fn apply<T: Scalar>(&self, ds: &Dataset<T>) -> Result<Dataset<T>> {
        let shape = ds.images.shape();
        let (c, inner) = (shape[1], shape[2] * shape[3]);
        if c != self.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "normalizer has {} channels, images have {c}",
                self.mean.len()
            )));
        }
        let data: Vec<T> = ds
            .images
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / inner) % c;
                T::from_f64((v.as_f64() - self.mean[ch]) / self.std[ch])
            })
            .collect();
        Ok(Dataset {
            images: Tensor::from_vec(shape, data)?,
            labels: ds.labels.clone(),
            split: ds.split.clone(),
            num_classes: ds.num_classes,
        })
    }

    /// `mean:...;std:...` with full float round-trip precision.
    pub fn encode(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        format!("mean:{};std:{}", join(&self.mean), join(&self.std))
    }

    pub fn decode(s: &str) -> Result<Normalizer> {
        let err = || Error::Format(format!("bad normalizer encoding `{s}`"));
        let (mean_part, std_part) = s.split_once(';').ok_or_else(err)?;
        let parse = |part: &str, prefix: &str| -> Result<Vec<f64>> {
            part.strip_prefix(prefix)
                .ok_or_else(err)?
                .split(',')
                .map(|x| x.parse::<f64>().map_err(|_| err()))
                .collect()
        };
        Ok(Normalizer {
            mean: parse(mean_part, "mean:")?,
            std: parse(std_part, "std:")?,
        })
    }
}
