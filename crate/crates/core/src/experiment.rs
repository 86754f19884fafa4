//! One complete run: split the corpus, build a network, train it.

use std::io::Write;

use crate::dataio::{split, Corpus, SplitSpec};
use crate::error::{Error, Result};
use crate::network::{ArchitectureConfig, Network};
use crate::train::{train, DataSplits, TrainConfig, TrainReport};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub arch: ArchitectureConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
}

impl ExperimentSpec {
    /// Same spec with both the weight/shuffle seed and the split seed set
    /// to `seed`.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.train.seed = seed;
        s.split.seed = seed;
        s
    }
}

pub fn data_splits(corpus: &Corpus, spec: &SplitSpec) -> Result<DataSplits> {
    let parts = split(corpus.manifest(), spec)?;
    Ok(DataSplits {
        train: corpus.image_set(&parts.train)?,
        val: corpus.image_set(&parts.val)?,
        test: corpus.image_set(&parts.test)?,
    })
}

pub fn run_experiment(
    corpus: &Corpus,
    spec: &ExperimentSpec,
    log: Option<&mut dyn Write>,
) -> Result<(Network, TrainReport)> {
    let (h, w) = corpus
        .frame_size()
        .ok_or_else(|| Error::Manifest("corpus is empty".into()))?;
    if (h, w) != (spec.arch.input_height, spec.arch.input_width) {
        return Err(Error::shape(
            "experiment",
            "input size",
            format!("{}x{}", spec.arch.input_height, spec.arch.input_width),
            format!("{h}x{w}"),
        ));
    }
    let data = data_splits(corpus, &spec.split)?;
    let net = Network::build(spec.arch.clone(), spec.train.seed)?;
    train(net, &data, &spec.train, log)
}
