//! Synthetic stand-in for smile data: one anti-aliased parabolic arc per
//! image on a noisy background. U-shaped arcs are smiles (label 1),
//! ∩-shaped arcs are not (label 0).

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{save_pgm, DatasetManifest, GrayImage, ManifestRecord, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::parallel::map_indexed;
use crate::rng::{stream_rng, Stream};

pub const MIN_SYNTH_DIM: usize = 16;

/// Distinct subject ids cycled through the corpus.
const SUBJECTS: usize = 10;

/// Share of non-smile frames flagged as having some other action unit.
const OTHER_AU_RATE: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthParams {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub manifest: DatasetManifest,
    pub images: Vec<GrayImage>,
}

impl SynthCorpus {
    /// Writes every image as PGM plus `manifest.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (r, img) in self.manifest.records().iter().zip(&self.images) {
            save_pgm(img, dir.join(&r.image_path))?;
        }
        self.manifest.write(dir.join(MANIFEST_FILE))
    }
}

struct Arc {
    center_x: f64,
    half_width: f64,
    top: f64,
    depth: f64,
    smile: bool,
}

impl Arc {
    fn y(&self, x: f64) -> f64 {
        let u = (x - self.center_x) / self.half_width;
        if self.smile {
            self.top + self.depth * (1.0 - u * u)
        } else {
            self.top + self.depth * u * u
        }
    }

    /// Left end, vertex, right end.
    fn landmarks(&self) -> Vec<(f64, f64)> {
        let round = |v: f64| (v * 100.0).round() / 100.0;
        [
            self.center_x - self.half_width,
            self.center_x,
            self.center_x + self.half_width,
        ]
        .into_iter()
        .map(|x| (round(x), round(self.y(x))))
        .collect()
    }
}

fn render(p: &SynthParams, smile: bool, index: usize) -> (GrayImage, Vec<(f64, f64)>, bool) {
    let mut rng = stream_rng(p.seed, Stream::Synth, index as u64 + 1);
    let (h, w) = (p.height as f64, p.width as f64);
    let background = rng.gen_range(0.15..0.45);
    let contrast = rng.gen_range(0.35..0.5);
    let thickness = rng.gen_range(1.2..2.5);
    let depth = rng.gen_range(0.15..0.3) * h;
    let arc = Arc {
        center_x: w * (0.5 + rng.gen_range(-0.08..0.08)),
        half_width: rng.gen_range(0.25..0.38) * w,
        top: rng.gen_range(0.15 * h..0.85 * h - depth),
        depth,
        smile,
    };
    let other_au = !smile && rng.gen_bool(OTHER_AU_RATE);

    let samples = 8 * p.width;
    let curve: Vec<(f64, f64)> = (0..=samples)
        .map(|s| {
            let x =
                arc.center_x - arc.half_width + 2.0 * arc.half_width * s as f64 / samples as f64;
            (x, arc.y(x))
        })
        .collect();
    let noise = Normal::new(0.0, p.noise_sigma).expect("sigma validated");
    let mut pixels = Vec::with_capacity(p.height * p.width);
    for r in 0..p.height {
        for c in 0..p.width {
            let (x, y) = (c as f64, r as f64);
            let dist = curve
                .iter()
                .map(|&(cx, cy)| (cx - x).hypot(cy - y))
                .fold(f64::INFINITY, f64::min);
            let coverage = (thickness / 2.0 + 0.5 - dist).clamp(0.0, 1.0);
            let v = background + contrast * coverage + noise.sample(&mut rng);
            // Quantized so the in-memory corpus equals its PGM encoding.
            pixels.push((v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
        }
    }
    let img = GrayImage::new(p.height, p.width, pixels).expect("dimensions validated");
    (img, arc.landmarks(), other_au)
}

/// Generates a class-balanced corpus, deterministic per seed.
pub fn synth_generate(p: &SynthParams) -> Result<SynthCorpus> {
    let op = "synth_generate";
    if p.n < 2 || !p.n.is_multiple_of(2) {
        return Err(Error::invalid(
            op,
            format!("n must be even and at least 2, got {}", p.n),
        ));
    }
    if p.height < MIN_SYNTH_DIM || p.width < MIN_SYNTH_DIM {
        return Err(Error::invalid(
            op,
            format!(
                "images must be at least {MIN_SYNTH_DIM}x{MIN_SYNTH_DIM}, got {}x{}",
                p.height, p.width
            ),
        ));
    }
    if !(p.noise_sigma >= 0.0 && p.noise_sigma.is_finite()) {
        return Err(Error::invalid(
            op,
            format!("noise must be non-negative, got {}", p.noise_sigma),
        ));
    }
    let mut labels: Vec<bool> = (0..p.n).map(|i| i < p.n / 2).collect();
    labels.shuffle(&mut stream_rng(p.seed, Stream::Synth, 0));

    let rendered = map_indexed(p.n, |i| render(p, labels[i], i));
    let mut images = Vec::with_capacity(p.n);
    let mut records = Vec::with_capacity(p.n);
    for (i, (img, landmarks, other_au)) in rendered.into_iter().enumerate() {
        let smile = labels[i];
        records.push(ManifestRecord {
            image_path: format!("img_{i:05}.pgm"),
            label: u8::from(smile),
            any_au: Some(u8::from(smile || other_au)),
            subject_id: Some(format!("subj{:02}", i % SUBJECTS)),
            landmarks: Some(landmarks),
        });
        images.push(img);
    }
    Ok(SynthCorpus {
        manifest: DatasetManifest::new(records)?,
        images,
    })
}
