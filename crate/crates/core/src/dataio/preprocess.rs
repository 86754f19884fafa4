//! Mouth/face input preparation: one global mouth box over the whole corpus,
//! then corner-aligned bilinear crop-and-resize.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{load_pgm, save_pgm, DatasetManifest, GrayImage, ManifestRecord, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::parallel::map_indexed;

/// Inclusive pixel rectangle; `left`/`right` are columns, `top`/`bottom` rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelBox {
    pub left: usize,
    pub top: usize,
    pub right: usize,
    pub bottom: usize,
}

impl PixelBox {
    pub fn full(img: &GrayImage) -> Self {
        PixelBox {
            left: 0,
            top: 0,
            right: img.width() - 1,
            bottom: img.height() - 1,
        }
    }

    pub fn width(&self) -> usize {
        self.right + 1 - self.left
    }

    pub fn height(&self) -> usize {
        self.bottom + 1 - self.top
    }

    fn is_degenerate(&self) -> bool {
        self.right < self.left || self.bottom < self.top
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputKind {
    Mouth,
    Face,
}

impl InputKind {
    /// Default `(height, width)` of the network input.
    pub fn default_size(self) -> (usize, usize) {
        match self {
            InputKind::Mouth => (69, 85),
            InputKind::Face => (128, 104),
        }
    }
}

impl FromStr for InputKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mouth" => Ok(InputKind::Mouth),
            "face" => Ok(InputKind::Face),
            other => Err(Error::Config(format!(
                "input kind must be mouth or face, got {other:?}"
            ))),
        }
    }
}

/// Union of the per-image bounding boxes of the mouth landmarks, grown by
/// `margin` times its extent on each side and clamped to an
/// `image_height × image_width` frame.
pub fn global_mouth_box(
    manifest: &DatasetManifest,
    mouth_indices: &[usize],
    margin: f64,
    image_height: usize,
    image_width: usize,
) -> Result<PixelBox> {
    let op = "global_mouth_box";
    if manifest.is_empty() {
        return Err(Error::invalid(op, "empty manifest"));
    }
    if mouth_indices.is_empty() {
        return Err(Error::invalid(op, "no mouth landmark indices"));
    }
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::invalid(
            op,
            format!("margin must be non-negative, got {margin}"),
        ));
    }
    if image_height == 0 || image_width == 0 {
        return Err(Error::invalid(op, "zero image dimension"));
    }
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (i, r) in manifest.records().iter().enumerate() {
        let points = r.landmarks.as_ref().ok_or_else(|| {
            Error::Manifest(format!("record {i} ({}) has no landmarks", r.image_path))
        })?;
        for &idx in mouth_indices {
            let &(x, y) = points.get(idx).ok_or_else(|| {
                Error::invalid(
                    op,
                    format!(
                        "landmark index {idx} out of range ({} points)",
                        points.len()
                    ),
                )
            })?;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
    }
    let (dx, dy) = (margin * (x1 - x0), margin * (y1 - y0));
    let clamp = |v: f64, hi: usize| v.clamp(0.0, (hi - 1) as f64) as usize;
    Ok(PixelBox {
        left: clamp((x0 - dx).floor(), image_width),
        top: clamp((y0 - dy).floor(), image_height),
        right: clamp((x1 + dx).ceil(), image_width),
        bottom: clamp((y1 + dy).ceil(), image_height),
    })
}

/// Sample positions along one axis: the first and last land exactly on the
/// box edges.
fn sample_positions(start: usize, end: usize, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![start as f64];
    }
    let step = (end - start) as f64 / (n - 1) as f64;
    (0..n).map(|i| start as f64 + i as f64 * step).collect()
}

/// Crops `bx` out of `img` and resamples it to `target_h × target_w` by
/// corner-aligned bilinear interpolation.
pub fn crop_resize(
    img: &GrayImage,
    bx: PixelBox,
    target_h: usize,
    target_w: usize,
) -> Result<GrayImage> {
    let op = "crop_resize";
    if bx.is_degenerate() {
        return Err(Error::invalid(op, format!("degenerate box {bx:?}")));
    }
    if bx.right >= img.width() || bx.bottom >= img.height() {
        return Err(Error::invalid(
            op,
            format!("box {bx:?} exceeds {}x{} image", img.height(), img.width()),
        ));
    }
    if target_h == 0 || target_w == 0 {
        return Err(Error::invalid(op, "zero target dimension"));
    }
    let ys = sample_positions(bx.top, bx.bottom, target_h);
    let xs = sample_positions(bx.left, bx.right, target_w);
    let mut out = Vec::with_capacity(target_h * target_w);
    for &y in &ys {
        let r0 = y.floor() as usize;
        let r1 = (r0 + 1).min(bx.bottom);
        let fy = y - r0 as f64;
        for &x in &xs {
            let c0 = x.floor() as usize;
            let c1 = (c0 + 1).min(bx.right);
            let fx = x - c0 as f64;
            let top = img.get(r0, c0) * (1.0 - fx) + img.get(r0, c1) * fx;
            let bottom = img.get(r1, c0) * (1.0 - fx) + img.get(r1, c1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    GrayImage::new(target_h, target_w, out)
}

/// Preprocessing options for [`preprocess_corpus`].
#[derive(Clone, Debug)]
pub struct PreprocessOptions {
    pub kind: InputKind,
    pub height: usize,
    pub width: usize,
    pub mouth_indices: Vec<usize>,
    pub margin: f64,
}

/// Crops and resizes every frame of `manifest` (paths relative to
/// `source_dir`) and writes `frame_NNNNNN.pgm` files plus a manifest to
/// `out_dir`. Landmarks are dropped from the output manifest since they
/// refer to source-frame coordinates.
pub fn preprocess_corpus(
    manifest: &DatasetManifest,
    source_dir: &Path,
    opts: &PreprocessOptions,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let records = manifest.records();
    if records.is_empty() {
        return Err(Error::Manifest("empty manifest".into()));
    }
    let images = map_indexed(records.len(), |i| {
        load_pgm(source_dir.join(&records[i].image_path))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (h, w) = (images[0].height(), images[0].width());
    if let Some(i) = images
        .iter()
        .position(|im| (im.height(), im.width()) != (h, w))
    {
        return Err(Error::shape(
            "preprocess",
            format!("frame {i} size"),
            format!("{h}x{w}"),
            format!("{}x{}", images[i].height(), images[i].width()),
        ));
    }
    let bx = match opts.kind {
        InputKind::Face => PixelBox::full(&images[0]),
        InputKind::Mouth => global_mouth_box(manifest, &opts.mouth_indices, opts.margin, h, w)?,
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let out_records = map_indexed(records.len(), |i| {
        let img = crop_resize(&images[i], bx, opts.height, opts.width)?;
        let name = format!("frame_{i:06}.pgm");
        save_pgm(&img, out_dir.join(&name))?;
        Ok(ManifestRecord {
            image_path: name,
            landmarks: None,
            ..records[i].clone()
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let out = DatasetManifest::new(out_records)?;
    out.write(out_dir.join(MANIFEST_FILE))?;
    Ok(out)
}
