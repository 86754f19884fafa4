use std::collections::{BTreeMap, HashSet};
use std::str::FromStr;

use rand::seq::{index, SliceRandom};

use super::{DatasetManifest, ManifestRecord};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Slack used when flooring `ratio × n` so that e.g. `0.2 × 10` is 2.
const FLOOR_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitMode {
    /// Frames shuffled independently.
    FrameRandom,
    /// Whole subjects assigned to one split each.
    SubjectGrouped,
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frame-random" | "frame" => Ok(SplitMode::FrameRandom),
            "subject-grouped" | "subject" => Ok(SplitMode::SubjectGrouped),
            other => Err(Error::Config(format!(
                "split mode must be frame-random or subject-grouped, got {other:?}"
            ))),
        }
    }
}

impl SplitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitMode::FrameRandom => "frame-random",
            SplitMode::SubjectGrouped => "subject-grouped",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
    pub mode: SplitMode,
}

impl Default for SplitSpec {
    /// 60/20/20, frame-random.
    fn default() -> Self {
        SplitSpec {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed: 0,
            mode: SplitMode::FrameRandom,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let ratios = [self.train, self.val, self.test];
        if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::invalid(
                "split",
                format!("ratios must be positive: {ratios:?}"),
            ));
        }
        let sum: f64 = ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "split",
                format!("ratios sum to {sum}, not 1"),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestSplits {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub test: DatasetManifest,
}

fn floor_count(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 + FLOOR_EPS).floor() as usize
}

fn gather(records: &[ManifestRecord], mut idx: Vec<usize>) -> Result<DatasetManifest> {
    idx.sort_unstable();
    DatasetManifest::new(idx.into_iter().map(|i| records[i].clone()).collect())
}

/// Partitions `manifest` into train/validation/test. Records keep their
/// manifest order inside each part.
pub fn split(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<ManifestSplits> {
    spec.validate()?;
    let n = manifest.len();
    if n == 0 {
        return Err(Error::Manifest("cannot split an empty manifest".into()));
    }
    if n < 5 {
        return Err(Error::Manifest(format!(
            "need at least 5 records to split, got {n}"
        )));
    }
    let parts = match spec.mode {
        SplitMode::FrameRandom => frame_random(n, spec),
        SplitMode::SubjectGrouped => subject_grouped(manifest, spec)?,
    };
    let [train, val, test] = parts;
    let records = manifest.records();
    Ok(ManifestSplits {
        train: gather(records, train)?,
        val: gather(records, val)?,
        test: gather(records, test)?,
    })
}

fn frame_random(n: usize, spec: &SplitSpec) -> [Vec<usize>; 3] {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(spec.seed, Stream::Split, 0));
    let n_val = floor_count(spec.val, n);
    let n_test = floor_count(spec.test, n);
    let n_train = n - n_val - n_test;
    let test = perm.split_off(n_train + n_val);
    let val = perm.split_off(n_train);
    [perm, val, test]
}

fn subject_grouped(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records().iter().enumerate() {
        let id = r.subject_id.as_deref().ok_or_else(|| {
            Error::Manifest(format!(
                "record {i} has no subject_id for a subject-grouped split"
            ))
        })?;
        groups.entry(id).or_default().push(i);
    }
    if groups.len() < 3 {
        return Err(Error::Manifest(format!(
            "subject-grouped split needs at least 3 subjects, got {}",
            groups.len()
        )));
    }
    let mut subjects: Vec<Vec<usize>> = groups.into_values().collect();
    subjects.shuffle(&mut stream_rng(spec.seed, Stream::Split, 0));

    let n = manifest.len() as f64;
    let targets = [spec.train * n, spec.val * n, spec.test * n];
    let mut parts: [Vec<usize>; 3] = Default::default();
    let total = subjects.len();
    for (k, members) in subjects.into_iter().enumerate() {
        let remaining = total - k;
        let empty: Vec<usize> = (0..3).filter(|&s| parts[s].is_empty()).collect();
        let candidates: Vec<usize> = if remaining <= empty.len() {
            empty
        } else {
            (0..3).collect()
        };
        // Largest shortfall against the target wins; ties go to the earlier split.
        let mut best = candidates[0];
        for &s in &candidates[1..] {
            if targets[s] - parts[s].len() as f64 > targets[best] - parts[best].len() as f64 {
                best = s;
            }
        }
        parts[best].extend(members);
    }
    Ok(parts)
}

/// Keeps every record with `any_au = 1` and a seeded uniform sample of
/// `⌊keep_fraction · m⌋` of the `m` records with `any_au = 0`.
pub fn reduce_no_au(
    manifest: &DatasetManifest,
    keep_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(0.0..=1.0).contains(&keep_fraction) {
        return Err(Error::invalid(
            "reduce_no_au",
            format!("keep_fraction must lie in [0, 1], got {keep_fraction}"),
        ));
    }
    let mut no_au = Vec::new();
    for (i, r) in manifest.records().iter().enumerate() {
        match r.any_au {
            Some(0) => no_au.push(i),
            Some(_) => {}
            None => {
                return Err(Error::Manifest(format!(
                    "record {i} ({}) has no any_au flag",
                    r.image_path
                )))
            }
        }
    }
    let keep = reduced_count(no_au.len(), keep_fraction);
    let mut rng = stream_rng(seed, Stream::Reduce, 0);
    let kept: HashSet<usize> = index::sample(&mut rng, no_au.len(), keep)
        .into_iter()
        .map(|k| no_au[k])
        .collect();
    let records = manifest
        .records()
        .iter()
        .enumerate()
        .filter(|(i, r)| r.any_au != Some(0) || kept.contains(i))
        .map(|(_, r)| r.clone())
        .collect();
    DatasetManifest::new(records)
}

/// Number of no-AU records kept out of `m`.
pub fn reduced_count(m: usize, keep_fraction: f64) -> usize {
    floor_count(keep_fraction, m).min(m)
}
