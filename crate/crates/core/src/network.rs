//! The convolutional smile classifier: a stack of conv/ReLU/max-pool stages
//! followed by ReLU hidden layers with dropout and a two-way softmax.

use std::fmt;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::nnops::{
    conv2d_backward, conv2d_valid, dense_backward_batch, dense_forward_batch, dropout_backward,
    dropout_forward, maxpool2x2_backward, maxpool2x2_forward, neg_log_prob, relu, relu_backward,
    softmax_rows, ConvParams, DenseParams, DropoutMask, PoolIndices, Tensor,
};
use crate::parallel::map_indexed;
use crate::rng::{stream_rng, Rng, Stream};

pub const KERNEL_SIZE: usize = 5;
pub const FEATURE_MAPS: usize = 32;
pub const POOL_SIZE: usize = 2;
pub const NUM_CLASSES: usize = 2;

/// Smallest spatial size a conv stage accepts: the kernel plus one so that
/// the following pool sees at least a 2×2 window.
pub const MIN_STAGE_INPUT: usize = KERNEL_SIZE + 1;

/// Samples per chunk when accumulating conv gradients.
const GRAD_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct ArchitectureConfig {
    pub num_convolutions: usize,
    pub num_hidden_layers: usize,
    pub units_per_hidden_layer: usize,
    pub dropout_rate: f64,
    pub input_height: usize,
    pub input_width: usize,
}

impl Default for ArchitectureConfig {
    /// Selection defaults (1 conv, 1 hidden layer of 100 units, dropout 0.5)
    /// on a mouth-sized input.
    fn default() -> Self {
        ArchitectureConfig {
            num_convolutions: 1,
            num_hidden_layers: 1,
            units_per_hidden_layer: 100,
            dropout_rate: 0.5,
            input_height: 69,
            input_width: 85,
        }
    }
}

impl ArchitectureConfig {
    /// Selected mouth model: 2 convs, 2 hidden layers of 400 units, dropout 0.1,
    /// on 69×85 (height × width) crops.
    pub fn mouth() -> Self {
        ArchitectureConfig {
            num_convolutions: 2,
            num_hidden_layers: 2,
            units_per_hidden_layer: 400,
            dropout_rate: 0.1,
            input_height: 69,
            input_width: 85,
        }
    }

    /// Selected face model: 1 conv, 1 hidden layer of 400 units, no dropout,
    /// on 128×104 (height × width) frames.
    pub fn face() -> Self {
        ArchitectureConfig {
            num_convolutions: 1,
            num_hidden_layers: 1,
            units_per_hidden_layer: 400,
            dropout_rate: 0.0,
            input_height: 128,
            input_width: 104,
        }
    }

    pub fn with_input(mut self, height: usize, width: usize) -> Self {
        self.input_height = height;
        self.input_width = width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let op = "architecture";
        if self.num_convolutions == 0 {
            return Err(Error::invalid(op, "num_convolutions must be at least 1"));
        }
        if self.num_hidden_layers == 0 {
            return Err(Error::invalid(op, "num_hidden_layers must be at least 1"));
        }
        if self.units_per_hidden_layer == 0 {
            return Err(Error::invalid(
                op,
                "units_per_hidden_layer must be at least 1",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(
                op,
                format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate),
            ));
        }
        self.shape_plan().map(|_| ())
    }

    /// Propagates the input size through every stage.
    pub fn shape_plan(&self) -> Result<ShapePlan> {
        let mut stages = Vec::with_capacity(self.num_convolutions);
        let (mut h, mut w) = (self.input_height, self.input_width);
        let mut in_maps = 1;
        for stage in 0..self.num_convolutions {
            if h < MIN_STAGE_INPUT || w < MIN_STAGE_INPUT {
                return Err(Error::SpatialUnderflow {
                    stage: stage + 1,
                    height: h,
                    width: w,
                    required: MIN_STAGE_INPUT,
                });
            }
            let conv = (h - KERNEL_SIZE + 1, w - KERNEL_SIZE + 1);
            let pooled = (conv.0 / POOL_SIZE, conv.1 / POOL_SIZE);
            stages.push(ConvStageShape {
                input: (h, w),
                in_maps,
                conv,
                pooled,
            });
            (h, w) = pooled;
            in_maps = FEATURE_MAPS;
        }
        let flatten = FEATURE_MAPS * h * w;
        let mut dense = Vec::with_capacity(self.num_hidden_layers + 1);
        let mut fan_in = flatten;
        for _ in 0..self.num_hidden_layers {
            dense.push((fan_in, self.units_per_hidden_layer));
            fan_in = self.units_per_hidden_layer;
        }
        dense.push((fan_in, NUM_CLASSES));
        Ok(ShapePlan {
            stages,
            flatten,
            dense,
        })
    }

    pub fn parameter_count(&self) -> Result<usize> {
        let plan = self.shape_plan()?;
        let conv: usize = plan
            .stages
            .iter()
            .map(|s| FEATURE_MAPS * s.in_maps * KERNEL_SIZE * KERNEL_SIZE + FEATURE_MAPS)
            .sum();
        let dense: usize = plan.dense.iter().map(|&(i, o)| i * o + o).sum();
        Ok(conv + dense)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvStageShape {
    /// `(height, width)` entering the convolution.
    pub input: (usize, usize),
    pub in_maps: usize,
    pub conv: (usize, usize),
    pub pooled: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapePlan {
    pub stages: Vec<ConvStageShape>,
    pub flatten: usize,
    /// `(in_units, out_units)` for every dense layer, output layer last.
    pub dense: Vec<(usize, usize)>,
}

impl fmt::Display for ShapePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.stages.iter().enumerate() {
            if i == 0 {
                write!(f, "{}x{}", s.input.0, s.input.1)?;
            }
            write!(
                f,
                " -> {}x{} -> {}x{}",
                s.conv.0, s.conv.1, s.pooled.0, s.pooled.1
            )?;
        }
        write!(f, " | flatten {}", self.flatten)?;
        for (_, o) in &self.dense {
            write!(f, " -> {o}")?;
        }
        Ok(())
    }
}

/// Every trainable tensor of a network; also the shape of its gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    pub convs: Vec<ConvParams>,
    /// Hidden layers in order, then the output layer.
    pub dense: Vec<DenseParams>,
}

impl Parameters {
    pub fn zeros_like(config: &ArchitectureConfig) -> Result<Self> {
        let plan = config.shape_plan()?;
        Ok(Parameters {
            convs: plan
                .stages
                .iter()
                .map(|s| ConvParams::zeros(FEATURE_MAPS, s.in_maps, KERNEL_SIZE))
                .collect(),
            dense: plan
                .dense
                .iter()
                .map(|&(i, o)| DenseParams::zeros(o, i))
                .collect(),
        })
    }

    /// Tensors in build order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(2 * (self.convs.len() + self.dense.len()));
        for c in &self.convs {
            out.push(&c.kernels);
            out.push(&c.bias);
        }
        for d in &self.dense {
            out.push(&d.weights);
            out.push(&d.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(2 * (self.convs.len() + self.dense.len()));
        for c in &mut self.convs {
            out.push(&mut c.kernels);
            out.push(&mut c.bias);
        }
        for d in &mut self.dense {
            out.push(&mut d.weights);
            out.push(&mut d.bias);
        }
        out
    }

    /// Names matching [`Parameters::tensors`].
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 1..=self.convs.len() {
            out.push(format!("conv{i}.kernels"));
            out.push(format!("conv{i}.bias"));
        }
        let hidden = self.dense.len().saturating_sub(1);
        for i in 1..=hidden {
            out.push(format!("hidden{i}.weights"));
            out.push(format!("hidden{i}.bias"));
        }
        out.push("output.weights".into());
        out.push("output.bias".into());
        out
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Values saved by a forward pass for the matching backward pass.
#[derive(Debug)]
pub struct ForwardCache {
    samples: Vec<SampleCache>,
    /// Input to every dense layer; `[0]` is the flattened conv output.
    dense_inputs: Vec<Tensor>,
    /// Post-ReLU, pre-dropout activations of the hidden layers.
    hidden: Vec<Tensor>,
    masks: Vec<DropoutMask>,
    probs: Tensor,
}

impl ForwardCache {
    pub fn probs(&self) -> &Tensor {
        &self.probs
    }
}

#[derive(Debug)]
struct SampleCache {
    /// `[0]` is the image; `[s + 1]` is the pooled output of stage `s`.
    activations: Vec<Tensor>,
    indices: Vec<PoolIndices>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: ArchitectureConfig,
    params: Parameters,
}

fn glorot(rng: &mut Rng, t: &mut Tensor, fan_in: usize, fan_out: usize) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in t.data_mut() {
        *v = (2.0 * rng.gen::<f64>() - 1.0) * limit;
    }
}

impl Network {
    /// Builds the network for `config` with Glorot-uniform weights and zero
    /// biases drawn from `seed`.
    pub fn build(config: ArchitectureConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = Parameters::zeros_like(&config)?;
        let mut rng = stream_rng(seed, Stream::Init, 0);
        let field = KERNEL_SIZE * KERNEL_SIZE;
        for c in &mut params.convs {
            let (fan_in, fan_out) = (c.in_maps() * field, c.out_maps() * field);
            glorot(&mut rng, &mut c.kernels, fan_in, fan_out);
        }
        for d in &mut params.dense {
            let (fan_in, fan_out) = (d.in_units(), d.out_units());
            glorot(&mut rng, &mut d.weights, fan_in, fan_out);
        }
        Ok(Network { config, params })
    }

    /// Wraps existing parameters after checking them against `config`.
    pub fn from_parameters(config: ArchitectureConfig, params: Parameters) -> Result<Self> {
        config.validate()?;
        let expected = Parameters::zeros_like(&config)?;
        let want = expected.tensors();
        let got = params.tensors();
        if want.len() != got.len() {
            return Err(Error::shape(
                "network",
                "tensor count",
                want.len(),
                got.len(),
            ));
        }
        for ((name, w), g) in expected.names().iter().zip(&want).zip(&got) {
            if w.shape() != g.shape() {
                return Err(Error::shape(
                    "network",
                    name.clone(),
                    format!("{:?}", w.shape()),
                    format!("{:?}", g.shape()),
                ));
            }
        }
        Ok(Network { config, params })
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let op = "network forward";
        batch.expect_rank(op, 4)?;
        let s = batch.shape();
        if s[1] != 1 {
            return Err(Error::shape(op, "channels", 1, s[1]));
        }
        if s[2] != self.config.input_height {
            return Err(Error::shape(op, "height", self.config.input_height, s[2]));
        }
        if s[3] != self.config.input_width {
            return Err(Error::shape(op, "width", self.config.input_width, s[3]));
        }
        Ok(s[0])
    }

    fn conv_forward(&self, image: Tensor) -> Result<SampleCache> {
        let mut activations = Vec::with_capacity(self.params.convs.len() + 1);
        let mut indices = Vec::with_capacity(self.params.convs.len());
        activations.push(image);
        for conv in &self.params.convs {
            let z = conv2d_valid(activations.last().unwrap(), conv)?;
            let (pooled, idx) = maxpool2x2_forward(&relu(&z))?;
            activations.push(pooled);
            indices.push(idx);
        }
        Ok(SampleCache {
            activations,
            indices,
        })
    }

    fn run(
        &self,
        batch: &Tensor,
        mode: Mode,
        rng: Option<&mut Rng>,
    ) -> Result<(Tensor, ForwardCache)> {
        let n = self.check_batch(batch)?;
        let (h, w) = (self.config.input_height, self.config.input_width);
        let plane = h * w;
        let samples = map_indexed(n, |s| {
            let img = batch.data()[s * plane..(s + 1) * plane].to_vec();
            self.conv_forward(Tensor::new(vec![1, h, w], img)?)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        let flat_len = samples[0].activations.last().unwrap().len();
        let mut flat = Vec::with_capacity(n * flat_len);
        for s in &samples {
            flat.extend_from_slice(s.activations.last().unwrap().data());
        }
        let mut x = Tensor::new(vec![n, flat_len], flat)?;

        let hidden_count = self.params.dense.len() - 1;
        let mut dense_inputs = Vec::with_capacity(hidden_count + 1);
        let mut hidden = Vec::with_capacity(hidden_count);
        let mut masks = Vec::with_capacity(hidden_count);
        let mut rng = rng;
        for layer in &self.params.dense[..hidden_count] {
            let a = relu(&dense_forward_batch(&x, layer)?);
            let next = match (mode, rng.as_deref_mut()) {
                (Mode::Train, Some(r)) => {
                    let (d, mask) = dropout_forward(&a, self.config.dropout_rate, r)?;
                    masks.push(mask);
                    d
                }
                (Mode::Train, None) => {
                    return Err(Error::invalid("network forward", "train mode needs an rng"))
                }
                (Mode::Infer, _) => a.clone(),
            };
            dense_inputs.push(x);
            hidden.push(a);
            x = next;
        }
        let logits = dense_forward_batch(&x, self.params.dense.last().unwrap())?;
        dense_inputs.push(x);
        let probs = softmax_rows(&logits)?;
        let cache = ForwardCache {
            samples,
            dense_inputs,
            hidden,
            masks,
            probs: probs.clone(),
        };
        Ok((probs, cache))
    }

    /// Class probabilities `[B, 2]` for a `[B, 1, H, W]` batch. Dropout is
    /// active only in [`Mode::Train`], where `rng` supplies the masks.
    pub fn forward(
        &self,
        batch: &Tensor,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Tensor, ForwardCache)> {
        self.run(batch, mode, Some(rng))
    }

    /// Inference-mode probabilities.
    pub fn probabilities(&self, batch: &Tensor) -> Result<Tensor> {
        self.run(batch, Mode::Infer, None).map(|(p, _)| p)
    }

    /// Gradients of the batch-mean cross-entropy with respect to every
    /// parameter.
    pub fn backward(&self, cache: &ForwardCache, labels: &[usize]) -> Result<Parameters> {
        let n = cache.samples.len();
        if labels.len() != n {
            return Err(Error::shape(
                "network backward",
                "label count",
                n,
                labels.len(),
            ));
        }
        if self.config.dropout_rate > 0.0 && cache.masks.len() != cache.hidden.len() {
            return Err(Error::invalid(
                "network backward",
                "cache comes from an inference-mode forward pass",
            ));
        }
        let mut g = cache.probs.clone();
        for (row, &label) in g.data_mut().chunks_exact_mut(NUM_CLASSES).zip(labels) {
            if label >= NUM_CLASSES {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: NUM_CLASSES,
                });
            }
            row[label] -= 1.0;
        }
        g.scale(1.0 / n as f64);

        let mut grads = Parameters::zeros_like(&self.config)?;
        for l in (0..self.params.dense.len()).rev() {
            let (gx, gp) = dense_backward_batch(&cache.dense_inputs[l], &self.params.dense[l], &g)?;
            grads.dense[l] = gp;
            g = gx;
            if l > 0 {
                if let Some(mask) = cache.masks.get(l - 1) {
                    g = dropout_backward(&g, mask)?;
                }
                g = relu_backward(&cache.hidden[l - 1], &g)?;
            }
        }

        let flat_len = g.shape()[1];
        let top_shape = cache.samples[0]
            .activations
            .last()
            .unwrap()
            .shape()
            .to_vec();
        for start in (0..n).step_by(GRAD_CHUNK) {
            let len = GRAD_CHUNK.min(n - start);
            let per_sample = map_indexed(len, |i| {
                let s = start + i;
                let row = g.data()[s * flat_len..(s + 1) * flat_len].to_vec();
                self.conv_backward(&cache.samples[s], Tensor::new(top_shape.clone(), row)?)
            });
            for sample_grads in per_sample {
                for (acc, gp) in grads.convs.iter_mut().zip(sample_grads?) {
                    acc.kernels.add_assign(&gp.kernels)?;
                    acc.bias.add_assign(&gp.bias)?;
                }
            }
        }
        Ok(grads)
    }

    fn conv_backward(&self, cache: &SampleCache, mut g: Tensor) -> Result<Vec<ConvParams>> {
        let stages = self.params.convs.len();
        let mut out = Vec::with_capacity(stages);
        for s in (0..stages).rev() {
            // Pooling routes each gradient to a cell holding exactly the pooled
            // value, so the ReLU mask can be read off the pooled output.
            g = relu_backward(&cache.activations[s + 1], &g)?;
            g = maxpool2x2_backward(&g, &cache.indices[s])?;
            let (gi, gp) = conv2d_backward(&cache.activations[s], &self.params.convs[s], &g)?;
            out.push(gp);
            g = gi;
        }
        out.reverse();
        Ok(out)
    }

    /// Predicted class per sample; exact ties go to class 0.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let probs = self.probabilities(batch)?;
        Ok(probs.data().chunks_exact(NUM_CLASSES).map(argmax).collect())
    }
}

/// Index of the largest entry, first one on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Batch-mean cross-entropy of `[B, classes]` probabilities.
pub fn mean_cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    probs.expect_rank("mean_cross_entropy", 2)?;
    let classes = probs.shape()[1];
    if labels.len() != probs.shape()[0] {
        return Err(Error::shape(
            "mean_cross_entropy",
            "label count",
            probs.shape()[0],
            labels.len(),
        ));
    }
    let mut total = 0.0;
    for (row, &label) in probs.data().chunks_exact(classes).zip(labels) {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        total += neg_log_prob(row[label]);
    }
    Ok(total / labels.len() as f64)
}
