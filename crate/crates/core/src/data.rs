//! Dataset ingestion: IDX parsing, downsampling, target encoding,
//! seeded splits, and a synthetic two-blob toy problem.
//!
//! Parsing works on byte slices so it stays `no_std`; reading files (and
//! gunzipping them) is the companion crate's job.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::losses::Observation;
use crate::rng::{derive_seed, domains, standard_normal, stream};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A grayscale image with pixels normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

fn read_u32_be(bytes: &[u8], offset: usize, field: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Parse(format!("file truncated reading {field}")));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses an IDX image container (magic `0x00000803`), normalizing pixel
/// bytes to `[0, 1]` by division by 255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<GrayImage>> {
    let magic = read_u32_be(bytes, 0, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse(format!(
            "image magic is {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = read_u32_be(bytes, 4, "image count")? as usize;
    let rows = read_u32_be(bytes, 8, "image rows")? as usize;
    let cols = read_u32_be(bytes, 12, "image cols")? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(Error::Parse(format!(
            "pixel data truncated: file has {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let start = 16 + i * rows * cols;
        let pixels = bytes[start..start + rows * cols]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        images.push(GrayImage {
            width: cols,
            height: rows,
            pixels,
        });
    }
    Ok(images)
}

/// Parses an IDX label container (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32_be(bytes, 0, "label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse(format!(
            "label magic is {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let count = read_u32_be(bytes, 4, "label count")? as usize;
    if bytes.len() < 8 + count {
        return Err(Error::Parse(format!(
            "label data truncated: file has {} bytes, header implies {}",
            bytes.len(),
            8 + count
        )));
    }
    Ok(bytes[8..8 + count].to_vec())
}

/// 2x2 non-overlapping average pooling; halves each dimension.
pub fn downsample(image: &GrayImage) -> Result<GrayImage> {
    if image.width % 2 != 0 || image.height % 2 != 0 {
        return Err(Error::Shape(format!(
            "downsampling needs even dimensions, got {}x{}",
            image.width, image.height
        )));
    }
    if image.pixels.len() != image.width * image.height {
        return Err(Error::Shape("pixel buffer does not match dimensions".into()));
    }
    let (w, h) = (image.width / 2, image.height / 2);
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let base = 2 * y * image.width + 2 * x;
            let sum = image.pixels[base]
                + image.pixels[base + 1]
                + image.pixels[base + image.width]
                + image.pixels[base + image.width + 1];
            pixels.push(sum / 4.0);
        }
    }
    Ok(GrayImage {
        width: w,
        height: h,
        pixels,
    })
}

/// One-hot target vector of length 10 for a digit label.
pub fn encode_target(label: u8) -> Result<Vec<f64>> {
    Ok(Observation::from_label(label as usize, 10)?.one_hot())
}

/// One input/target pair. `input` carries the constant bias 1 in slot 0,
/// followed by the feature values.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    input: Vec<f64>,
    label: usize,
    observation: Observation,
}

impl Sample {
    /// Builds a sample from bias-free features.
    pub fn from_features(features: &[f64], label: usize, classes: usize) -> Result<Self> {
        let observation = Observation::from_label(label, classes)?;
        let mut input = Vec::with_capacity(features.len() + 1);
        input.push(1.0);
        input.extend_from_slice(features);
        Ok(Self {
            input,
            label,
            observation,
        })
    }

    /// Full input vector, bias slot included.
    pub fn input(&self) -> &[f64] {
        &self.input
    }

    /// Feature values without the bias slot.
    pub fn features(&self) -> &[f64] {
        &self.input[1..]
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn observation(&self) -> &Observation {
        &self.observation
    }
}

/// How a dataset was produced, enough to rebuild it exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub source: String,
    pub seed: u64,
    pub train_count: usize,
    pub test_count: usize,
}

/// A train/test split of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    train: Vec<Sample>,
    test: Vec<Sample>,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(train: Vec<Sample>, test: Vec<Sample>, provenance: Provenance) -> Self {
        Self {
            train,
            test,
            provenance,
        }
    }

    pub fn train(&self) -> &[Sample] {
        &self.train
    }

    pub fn test(&self) -> &[Sample] {
        &self.test
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }
}

/// Builds a dataset from raw images: seeded disjoint draw of
/// `train_count + test_count` images, each downsampled to 14x14,
/// bias-prepended, and one-hot encoded.
pub fn make_split(
    images: &[GrayImage],
    labels: &[u8],
    seed: u64,
    train_count: usize,
    test_count: usize,
) -> Result<Dataset> {
    if images.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let total = train_count + test_count;
    if images.len() < total {
        return Err(Error::Data(format!(
            "need {total} images, only {} available",
            images.len()
        )));
    }

    let mut rng = stream(derive_seed(seed, domains::SPLIT, 0));
    let mut indices: Vec<usize> = (0..images.len()).collect();
    indices.shuffle(&mut rng);
    indices.truncate(total);

    let build = |idx: &[usize]| -> Result<Vec<Sample>> {
        idx.iter()
            .map(|&i| {
                let small = downsample(&images[i])?;
                Sample::from_features(&small.pixels, labels[i] as usize, 10)
            })
            .collect()
    };
    let train = build(&indices[..train_count])?;
    let test = build(&indices[train_count..])?;

    Ok(Dataset {
        train,
        test,
        provenance: Provenance {
            source: String::from("idx"),
            seed,
            train_count,
            test_count,
        },
    })
}

/// The standard split: a seeded 10000-image pool divided 6:4.
pub fn make_dataset(images: &[GrayImage], labels: &[u8], seed: u64) -> Result<Dataset> {
    make_split(images, labels, seed, 6000, 4000)
}

/// Two Gaussian blobs in the plane, one per class: a linearly separable
/// toy problem for desk-scale training checks.
///
/// Class 0 centers at `(-distance, -distance)`, class 1 at
/// `(distance, distance)`, both with isotropic standard deviation
/// `spread`.
pub fn two_blob_dataset(
    train_count: usize,
    test_count: usize,
    distance: f64,
    spread: f64,
    seed: u64,
) -> Dataset {
    let mut rng = stream(derive_seed(seed, domains::TOY, 0));
    let mut draw = |n: usize| -> Vec<Sample> {
        (0..n)
            .map(|_| {
                let label = rng.gen_range(0..2usize);
                let center = if label == 0 { -distance } else { distance };
                let x = center + spread * standard_normal(&mut rng);
                let y = center + spread * standard_normal(&mut rng);
                Sample::from_features(&[x, y], label, 2).unwrap()
            })
            .collect()
    };
    let train = draw(train_count);
    let test = draw(test_count);
    Dataset {
        train,
        test,
        provenance: Provenance {
            source: String::from("two-blobs"),
            seed,
            train_count,
            test_count,
        },
    }
}
