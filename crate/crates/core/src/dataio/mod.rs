//! Dataset ingestion and preprocessing: PGM frames, CSV manifests, mouth
//! crops, train/validation/test splits and the synthetic smile corpus.

pub mod manifest;
pub mod pgm;
pub mod preprocess;
pub mod split;
pub mod synth;

use std::path::Path;

pub use manifest::{DatasetManifest, ManifestRecord, MANIFEST_FILE};
pub use pgm::{load_pgm, parse_pgm, save_pgm, PgmError};
pub use preprocess::{crop_resize, global_mouth_box, InputKind, PixelBox};
pub use split::{reduce_no_au, split, SplitMode, SplitSpec};
pub use synth::{synth_generate, SynthCorpus, SynthParams};

use crate::error::{Error, Result};
use crate::nnops::Tensor;
use crate::parallel::map_indexed;

/// Greyscale image with intensities in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    /// Values outside `[0, 1]` are clamped.
    pub fn new(height: usize, width: usize, mut pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(
                "image",
                format!("zero dimension {height}x{width}"),
            ));
        }
        if pixels.len() != height * width {
            return Err(Error::shape(
                "image",
                "pixel count",
                height * width,
                pixels.len(),
            ));
        }
        for p in &mut pixels {
            *p = p.clamp(0.0, 1.0);
        }
        Ok(GrayImage {
            height,
            width,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }
}

/// Equal-sized images with their binary labels, ready to batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    labels: Vec<usize>,
}

impl ImageSet {
    pub fn new(images: &[GrayImage], labels: Vec<usize>) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::invalid("image set", "no images"))?;
        if images.len() != labels.len() {
            return Err(Error::shape(
                "image set",
                "label count",
                images.len(),
                labels.len(),
            ));
        }
        let (height, width) = (first.height, first.width);
        let mut pixels = Vec::with_capacity(images.len() * height * width);
        for (i, img) in images.iter().enumerate() {
            if (img.height, img.width) != (height, width) {
                return Err(Error::shape(
                    "image set",
                    format!("image {i} size"),
                    format!("{height}x{width}"),
                    format!("{}x{}", img.height, img.width),
                ));
            }
            pixels.extend_from_slice(&img.pixels);
        }
        Ok(ImageSet {
            height,
            width,
            pixels,
            labels,
        })
    }

    /// Reads every image named by `manifest`, resolving paths against `base`.
    pub fn load(manifest: &DatasetManifest, base: &Path) -> Result<Self> {
        let records = manifest.records();
        let images = map_indexed(records.len(), |i| {
            load_pgm(base.join(&records[i].image_path))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let labels = records.iter().map(|r| r.label as usize).collect();
        Self::new(&images, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// `[indices.len(), 1, H, W]` batch plus matching labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let plane = self.height * self.width;
        let mut data = Vec::with_capacity(indices.len() * plane);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.pixels[i * plane..(i + 1) * plane]);
            labels.push(self.labels[i]);
        }
        let t = Tensor::new(vec![indices.len(), 1, self.height, self.width], data)?;
        Ok((t, labels))
    }
}

/// A manifest together with its decoded frames, loaded once and reused
/// across splits and repeated runs.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    manifest: DatasetManifest,
    images: Vec<GrayImage>,
    by_path: std::collections::HashMap<String, usize>,
}

impl Corpus {
    pub fn new(manifest: DatasetManifest, images: Vec<GrayImage>) -> Result<Self> {
        if manifest.len() != images.len() {
            return Err(Error::shape(
                "corpus",
                "image count",
                manifest.len(),
                images.len(),
            ));
        }
        let by_path = manifest
            .records()
            .iter()
            .enumerate()
            .map(|(i, r)| (r.image_path.clone(), i))
            .collect();
        Ok(Corpus {
            manifest,
            images,
            by_path,
        })
    }

    /// Reads `dir/manifest.csv` and every frame it lists.
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "data directory not found"),
            ));
        }
        let manifest = DatasetManifest::read(dir.join(MANIFEST_FILE))?;
        let records = manifest.records();
        let images = map_indexed(records.len(), |i| {
            load_pgm(dir.join(&records[i].image_path))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Self::new(manifest, images)
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn images(&self) -> &[GrayImage] {
        &self.images
    }

    /// Frame size shared by every image, `(height, width)`.
    pub fn frame_size(&self) -> Option<(usize, usize)> {
        self.images.first().map(|i| (i.height(), i.width()))
    }

    /// Images of a sub-manifest whose paths all belong to this corpus.
    pub fn image_set(&self, subset: &DatasetManifest) -> Result<ImageSet> {
        let mut images = Vec::with_capacity(subset.len());
        for r in subset.records() {
            let &i = self.by_path.get(&r.image_path).ok_or_else(|| {
                Error::Manifest(format!("{} is not part of the corpus", r.image_path))
            })?;
            images.push(self.images[i].clone());
        }
        let labels = subset.records().iter().map(|r| r.label as usize).collect();
        ImageSet::new(&images, labels)
    }
}
