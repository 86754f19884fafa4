//! Mini-batch SGD with classic momentum, evaluation and repeat statistics.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::dataio::ImageSet;
use crate::error::{Error, Result};
use crate::network::{mean_cross_entropy, Mode, Network, Parameters};
use crate::nnops::Tensor;
use crate::parallel::map_indexed;
use crate::rng::{derive_seed, stream_rng, Stream};

/// Samples per inference batch during evaluation.
const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Evaluate every this many epochs; the last epoch is always evaluated.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 500,
            epochs: 1000,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let op = "train config";
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(
                op,
                format!("learning_rate {}", self.learning_rate),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(
                op,
                format!("momentum {} not in [0, 1)", self.momentum),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid(op, "batch_size must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid(op, "eval_every must be at least 1"));
        }
        Ok(())
    }
}

/// Classic momentum: `v ← μ·v − α·g`, then `w ← w + v`.
pub fn sgd_momentum_step(
    param: &mut Tensor,
    grad: &Tensor,
    velocity: &mut Tensor,
    learning_rate: f64,
    momentum: f64,
) -> Result<()> {
    if !param.same_shape(grad) || !param.same_shape(velocity) {
        return Err(Error::shape(
            "sgd_momentum_step",
            "shape",
            format!("{:?}", param.shape()),
            format!("grad {:?}, velocity {:?}", grad.shape(), velocity.shape()),
        ));
    }
    for ((w, v), g) in param
        .data_mut()
        .iter_mut()
        .zip(velocity.data_mut())
        .zip(grad.data())
    {
        *v = momentum * *v - learning_rate * g;
        *w += *v;
    }
    Ok(())
}

/// Zero-initialized velocity for every parameter tensor.
#[derive(Clone, Debug)]
pub struct Momentum {
    velocity: Parameters,
}

impl Momentum {
    pub fn new(net: &Network) -> Result<Self> {
        Ok(Momentum {
            velocity: Parameters::zeros_like(net.config())?,
        })
    }

    pub fn velocity(&self) -> &Parameters {
        &self.velocity
    }

    pub fn step(
        &mut self,
        params: &mut Parameters,
        grads: &Parameters,
        learning_rate: f64,
        momentum: f64,
    ) -> Result<()> {
        for ((w, g), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.velocity.tensors_mut())
        {
            sgd_momentum_step(w, g, v, learning_rate, momentum)?;
        }
        Ok(())
    }
}

pub struct DataSplits {
    pub train: ImageSet,
    pub val: ImageSet,
    pub test: ImageSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean training loss over the epoch's batches.
    pub train_loss: f64,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub secs: f64,
}

impl EpochRecord {
    /// `epoch <i> loss <f> val_acc <f> test_acc <f> secs <f>`; accuracies of
    /// epochs that were not evaluated print as `nan`.
    pub fn log_line(&self) -> String {
        let acc = |a: Option<f64>| a.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        format!(
            "epoch {} loss {:.6} val_acc {} test_acc {} secs {:.3}",
            self.epoch,
            self.train_loss,
            acc(self.val_acc),
            acc(self.test_acc),
            self.secs
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Evaluated epoch with the highest validation accuracy, earliest on ties.
    pub best_epoch: Option<usize>,
    pub best_val_acc: Option<f64>,
    /// Test accuracy of the best-validation epoch.
    pub test_acc_at_best: Option<f64>,
    /// Test accuracy after the last epoch.
    pub final_test_acc: Option<f64>,
    /// Highest test accuracy seen at any evaluated epoch, with that epoch.
    pub max_test_acc: Option<(usize, f64)>,
}

impl TrainReport {
    pub fn summary_lines(&self) -> Vec<String> {
        let f = |v: Option<f64>| v.map_or_else(|| "nan".into(), |v| format!("{v:.6}"));
        vec![
            format!(
                "best_epoch {}",
                self.best_epoch
                    .map_or_else(|| "none".into(), |e| e.to_string())
            ),
            format!("best_val_acc {}", f(self.best_val_acc)),
            format!("test_acc_at_best {}", f(self.test_acc_at_best)),
            format!("final_test_acc {}", f(self.final_test_acc)),
            match self.max_test_acc {
                Some((e, a)) => format!("max_test_acc {a:.6} epoch {e}"),
                None => "max_test_acc nan".into(),
            },
        ]
    }
}

/// Fraction of positions where `predictions` and `labels` agree.
pub fn classification_rate(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(
            "classification_rate",
            "length",
            labels.len(),
            predictions.len(),
        ));
    }
    if labels.is_empty() {
        return Err(Error::invalid("classification_rate", "empty input"));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn predict_all(net: &Network, set: &ImageSet) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for chunk in all.chunks(EVAL_BATCH) {
        let (x, _) = set.batch(chunk)?;
        out.extend(net.predict(&x)?);
    }
    Ok(out)
}

pub fn evaluate(net: &Network, set: &ImageSet) -> Result<f64> {
    classification_rate(&predict_all(net, set)?, set.labels())
}

/// Trains `net` in place of a copy and returns the parameters of the best
/// validation epoch (the untouched network when `epochs` is 0) plus the
/// report. Every line of the training log goes to `log` when given.
pub fn train(
    net: Network,
    data: &DataSplits,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<(Network, TrainReport)> {
    cfg.validate()?;
    for (name, set) in [
        ("train", &data.train),
        ("val", &data.val),
        ("test", &data.test),
    ] {
        if set.is_empty() {
            return Err(Error::invalid("train", format!("{name} split is empty")));
        }
    }
    let mut net = net;
    let mut momentum = Momentum::new(&net)?;
    let mut report = TrainReport::default();
    let mut best: Option<Network> = None;
    let n = data.train.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut stream_rng(cfg.seed, Stream::Shuffle, epoch as u64));
        let mut dropout_rng = stream_rng(cfg.seed, Stream::Dropout, epoch as u64);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = data.train.batch(chunk)?;
            let (probs, cache) = net.forward(&x, Mode::Train, &mut dropout_rng)?;
            let loss = mean_cross_entropy(&probs, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                });
            }
            loss_sum += loss * chunk.len() as f64;
            let grads = net.backward(&cache, &y)?;
            momentum.step(net.params_mut(), &grads, cfg.learning_rate, cfg.momentum)?;
        }

        let mut record = EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            val_acc: None,
            test_acc: None,
            secs: 0.0,
        };
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let val = evaluate(&net, &data.val)?;
            let test = evaluate(&net, &data.test)?;
            record.val_acc = Some(val);
            record.test_acc = Some(test);
            if report.best_val_acc.is_none_or(|b| val > b) {
                report.best_epoch = Some(epoch);
                report.best_val_acc = Some(val);
                report.test_acc_at_best = Some(test);
                best = Some(net.clone());
            }
            if report.max_test_acc.is_none_or(|(_, t)| test > t) {
                report.max_test_acc = Some((epoch, test));
            }
            report.final_test_acc = Some(test);
        }
        record.secs = started.elapsed().as_secs_f64();
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", record.log_line()).map_err(|e| Error::io("training log", e))?;
        }
        report.epochs.push(record);
    }
    Ok((best.unwrap_or(net), report))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RepeatStats {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator).
    pub std: f64,
}

pub fn mean_and_sample_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::invalid(
            "repeat",
            format!("need at least 2 values, got {}", values.len()),
        ));
    }
    // Welford's update; identical inputs give exactly zero spread.
    let (mut mean, mut m2) = (0.0, 0.0);
    for (k, &v) in values.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (v - mean);
    }
    Ok((mean, (m2 / (values.len() - 1) as f64).sqrt()))
}

/// Seed for run `i` of a repeated experiment.
pub fn repeat_seed(master: u64, i: usize) -> u64 {
    derive_seed(master, Stream::Repeat, i as u64)
}

/// Runs `run(i, seed_i)` for `i in 0..n` with pre-derived seeds and summarizes
/// the returned accuracies. Runs may execute concurrently; the result is the
/// same as running them in order.
pub fn repeat_experiment<F>(n: usize, master_seed: u64, run: F) -> Result<RepeatStats>
where
    F: Fn(usize, u64) -> Result<f64> + Sync + Send,
{
    if n < 2 {
        return Err(Error::invalid(
            "repeat",
            format!("need at least 2 runs, got {n}"),
        ));
    }
    let accuracies = map_indexed(n, |i| run(i, repeat_seed(master_seed, i)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let (mean, std) = mean_and_sample_std(&accuracies)?;
    Ok(RepeatStats {
        accuracies,
        mean,
        std,
    })
}
