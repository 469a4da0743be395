//! Datasets: seeded Gaussian blobs and the IDX (MNIST) file format.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Substreams;
use crate::tensor::Tensor;

/// Distance between neighbouring class means, in units of the per-class
/// standard deviation.
pub const DEFAULT_SEPARATION: f64 = 6.0;

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[n, ...sample shape]`.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub tag: SplitTag,
}

impl Dataset {
    pub fn new(
        features: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
        tag: SplitTag,
    ) -> Result<Dataset> {
        if features.shape().is_empty() || features.batch() != labels.len() {
            return Err(Error::Shape(format!(
                "{} labels for features {:?}",
                labels.len(),
                features.shape()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            tag,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        self.features.sample_shape()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            tag: self.tag,
        }
    }

    /// Contiguous shards of the given sizes.
    pub fn shards_sized(&self, sizes: &[usize]) -> Result<Vec<Dataset>> {
        let total: usize = sizes.iter().sum();
        if total > self.len() {
            return Err(Error::InvalidArgument(format!(
                "shards need {total} examples, dataset has {}",
                self.len()
            )));
        }
        let mut at = 0;
        Ok(sizes
            .iter()
            .map(|&s| {
                let idx: Vec<usize> = (at..at + s).collect();
                at += s;
                self.subset(&idx)
            })
            .collect())
    }

    /// `parts` equal contiguous shards; the remainder is left out.
    pub fn shards(&self, parts: usize) -> Result<Vec<Dataset>> {
        if parts == 0 {
            return Err(Error::InvalidArgument("cannot shard into 0 parts".into()));
        }
        self.shards_sized(&vec![self.len() / parts; parts])
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        self.labels.iter().for_each(|&y| counts[y] += 1);
        counts
    }

    /// Features rounded to the 256 levels an IDX file can hold.
    pub fn quantized(&self) -> Dataset {
        let mut out = self.clone();
        out.features = self.features.map(|v| quantize(v) as f64 / 255.0);
        out
    }
}

/// `k` Gaussian classes with unit variance in `dim` dimensions, balanced
/// (`label(i) = i mod k`).
pub fn synth_blobs(n: usize, k: usize, dim: usize, seed: u64) -> Result<Dataset> {
    synth_blobs_with(n, k, dim, seed, DEFAULT_SEPARATION)
}

pub fn synth_blobs_with(
    n: usize,
    k: usize,
    dim: usize,
    seed: u64,
    separation: f64,
) -> Result<Dataset> {
    let means = class_means(k, dim, seed, separation)?;
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "need n >= k, got n = {n}, k = {k}"
        )));
    }
    sample_blobs(
        &means,
        n,
        Substreams::new(seed).stream("data", &[0]),
        SplitTag::Train,
    )
}

/// Disjoint train and test draws around the same class means.
pub fn synth_train_test(
    n_train: usize,
    n_test: usize,
    k: usize,
    dim: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let train = synth_blobs(n_train, k, dim, seed)?;
    let means = class_means(k, dim, seed, DEFAULT_SEPARATION)?;
    let test = sample_blobs(
        &means,
        n_test,
        Substreams::new(seed).stream("data", &[1]),
        SplitTag::Test,
    )?;
    Ok((train, test))
}

fn class_means(k: usize, dim: usize, seed: u64, separation: f64) -> Result<Vec<Vec<f64>>> {
    if k < 2 || dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "need k >= 2 and dim >= 1, got k = {k}, dim = {dim}"
        )));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "separation must be > 0, got {separation}"
        )));
    }
    if k <= dim {
        // Scaled basis vectors: every pair is exactly `separation` apart.
        let s = separation / 2f64.sqrt();
        return Ok((0..k)
            .map(|c| (0..dim).map(|j| if j == c { s } else { 0.0 }).collect())
            .collect());
    }
    let mut rng = Substreams::new(seed).stream("means", &[]);
    let radius = separation * k as f64;
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..100_000 {
        if means.len() == k {
            break;
        }
        let m: Vec<f64> = (0..dim)
            .map(|_| rng.random_range(-radius..radius))
            .collect();
        if means.iter().all(|o| dist(o, &m) >= separation) {
            means.push(m);
        }
    }
    if means.len() < k {
        return Err(Error::InvalidArgument(format!(
            "could not place {k} separated means in {dim} dimensions"
        )));
    }
    Ok(means)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn sample_blobs(
    means: &[Vec<f64>],
    n: usize,
    mut rng: crate::rng::StreamRng,
    tag: SplitTag,
) -> Result<Dataset> {
    let (k, dim) = (means.len(), means[0].len());
    let mut features = Tensor::zeros(&[n, dim]);
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    for (i, &y) in labels.iter().enumerate() {
        for (j, m) in means[y].iter().enumerate() {
            features.data_mut()[i * dim + j] = m + rng.sample::<f64, _>(StandardNormal);
        }
    }
    Dataset::new(features, labels, k, tag)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Format {
                offset: self.at as u64,
                message: format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.at
                ),
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32("magic number")?;
        if found != expected {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {found:#010x}, expected {expected:#010x}"),
            });
        }
        Ok(())
    }
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut r = Reader { bytes, at: 0 };
    r.magic(IDX_IMAGES)?;
    let n = r.u32("image count")? as usize;
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    let pixels = r.take(n * rows * cols, "pixel data")?.to_vec();
    Ok((n, rows, cols, pixels))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader { bytes, at: 0 };
    r.magic(IDX_LABELS)?;
    let n = r.u32("label count")? as usize;
    Ok(r.take(n, "label data")?.to_vec())
}

/// Builds a dataset of shape `[n, 1, rows, cols]` with pixels in `[0, 1]`.
/// `num_classes` is one more than the largest label (at least 2).
pub fn idx_dataset(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != n {
        return Err(Error::Format {
            offset: 4,
            message: format!("{n} images but {} labels", labels.len()),
        });
    }
    let data = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let features = Tensor::new(vec![n, 1, rows, cols], data)?;
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let k = labels.iter().max().map_or(2, |m| (m + 1).max(2));
    Dataset::new(features, labels, k, SplitTag::Train)
}

pub fn read_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    idx_dataset(&fs::read(images_path)?, &fs::read(labels_path)?)
}

/// Encodes a dataset as IDX image and label files. Samples of shape
/// `[c, rows, cols]` (with `c = 1`), `[rows, cols]` or `[d]` (one row) are
/// accepted; values are clamped to `[0, 1]` and rounded to bytes.
pub fn encode_idx(ds: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let (rows, cols) = match ds.sample_shape() {
        [1, r, c] | [r, c] => (*r, *c),
        [d] => (1, *d),
        other => {
            return Err(Error::Shape(format!(
                "cannot store samples of shape {other:?} as IDX"
            )))
        }
    };
    if ds.num_classes > 256 {
        return Err(Error::InvalidArgument(
            "IDX labels hold at most 256 classes".into(),
        ));
    }
    let mut images = Vec::with_capacity(16 + ds.features.len());
    for v in [IDX_IMAGES, ds.len() as u32, rows as u32, cols as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend(ds.features.data().iter().map(|&v| quantize(v)));
    let mut labels = Vec::with_capacity(8 + ds.len());
    for v in [IDX_LABELS, ds.len() as u32] {
        labels.extend_from_slice(&v.to_be_bytes());
    }
    labels.extend(ds.labels.iter().map(|&y| y as u8));
    Ok((images, labels))
}

pub fn write_idx(
    ds: &Dataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (images, labels) = encode_idx(ds)?;
    fs::write(images_path, images)?;
    fs::write(labels_path, labels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_balanced_and_deterministic() {
        let a = synth_blobs(300, 3, 2, 1).unwrap();
        assert_eq!(a, synth_blobs(300, 3, 2, 1).unwrap());
        assert_eq!(a.class_counts(), vec![100, 100, 100]);
        assert_ne!(a, synth_blobs(300, 3, 2, 2).unwrap());
        assert!(synth_blobs(2, 3, 2, 1).is_err());
    }

    #[test]
    fn many_classes_in_few_dims_use_sampled_means() {
        let ds = synth_blobs(50, 5, 2, 4).unwrap();
        assert_eq!(ds.class_counts(), vec![10; 5]);
    }

    #[test]
    fn header_only_files_give_empty_dataset() {
        let (img, lab) = encode_idx(
            &Dataset::new(Tensor::zeros(&[0, 1, 28, 28]), vec![], 10, SplitTag::Train).unwrap(),
        )
        .unwrap();
        assert_eq!(img.len(), 16);
        let ds = idx_dataset(&img, &lab).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.sample_shape(), &[1, 28, 28]);
    }

    #[test]
    fn format_errors_carry_offsets() {
        let ds = synth_blobs(6, 3, 4, 0).unwrap();
        let (img, lab) = encode_idx(&ds).unwrap();
        let err = idx_dataset(&img[..img.len() - 1], &lab).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 16, .. }), "{err:?}");
        let mut bad = img.clone();
        bad[3] = 0x01;
        assert!(matches!(
            idx_dataset(&bad, &lab),
            Err(Error::Format { offset: 0, .. })
        ));
        let (_, fewer) = encode_idx(&ds.subset(&[0, 1])).unwrap();
        assert!(idx_dataset(&img, &fewer).is_err());
    }
}
