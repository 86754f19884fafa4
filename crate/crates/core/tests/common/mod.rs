//! Independent reference implementations and helpers shared by the
//! integration tests. Nothing here calls the library's numeric kernels.
// Oracles index explicitly to mirror the textbook loops.
#![allow(dead_code, clippy::needless_range_loop)]

pub mod gradcheck;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smilenet::dataio::GrayImage;
use smilenet::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// One-sided slopes of a smooth loss differ by about `step·|f''|`; a gap
/// this large only appears when the step crosses a ReLU or max-pool kink.
pub const KINK_SLOPE_GAP: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| r.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Values in `[-1, 1]` with magnitude at least `gap`, so that a finite
/// difference step never straddles zero.
pub fn away_from_zero(r: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.gen_range(gap..1.0);
            if r.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Direct four-loop valid cross-correlation: input `[C,H,W]`, kernels
/// `[O,C,k,k]`, bias `[O]`.
pub fn conv_oracle(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Vec<f64> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (o, k) = (kernels.shape()[0], kernels.shape()[2]);
    let (oh, ow) = (h - k + 1, w - k + 1);
    let x = input.data();
    let kw = kernels.data();
    let mut out = vec![0.0; o * oh * ow];
    for m in 0..o {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = bias.data()[m];
                for ch in 0..c {
                    for a in 0..k {
                        for b in 0..k {
                            acc += kw[((m * c + ch) * k + a) * k + b]
                                * x[(ch * h + i + a) * w + j + b];
                        }
                    }
                }
                out[(m * oh + i) * ow + j] = acc;
            }
        }
    }
    out
}

/// Direct double loop `W·x + b` with `W` stored `[out, in]`.
pub fn dense_oracle(x: &[f64], weights: &Tensor, bias: &Tensor) -> Vec<f64> {
    let (m, n) = (weights.shape()[0], weights.shape()[1]);
    (0..m)
        .map(|i| {
            let mut acc = bias.data()[i];
            for j in 0..n {
                acc += weights.data()[i * n + j] * x[j];
            }
            acc
        })
        .collect()
}

/// Window maxima over non-overlapping 2×2 blocks, dropping an odd edge.
pub fn pool_oracle(input: &Tensor) -> Vec<f64> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for a in 0..2 {
                    for b in 0..2 {
                        best = best.max(x[(ch * h + 2 * i + a) * w + 2 * j + b]);
                    }
                }
                out.push(best);
            }
        }
    }
    out
}

/// Central differences of `f` at every coordinate of `x` (or only at
/// `coords` when given).
pub fn numeric_gradient<F>(x: &[f64], coords: Option<&[usize]>, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let plus = f(&probe);
            probe[i] = orig - FD_STEP;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Like [`numeric_gradient`], but returns `None` when the one-sided slopes
/// at some coordinate disagree, meaning the step crossed a kink of `f`.
pub fn numeric_gradient_smooth<F>(x: &[f64], coords: &[usize], mut f: F) -> Option<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let f0 = f(x);
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + FD_STEP;
        let plus = f(&probe);
        probe[i] = orig - FD_STEP;
        let minus = f(&probe);
        probe[i] = orig;
        let (right, left) = ((plus - f0) / FD_STEP, (f0 - minus) / FD_STEP);
        if (right - left).abs() > KINK_SLOPE_GAP * (1.0 + right.abs() + left.abs()) {
            return None;
        }
        out.push((plus - minus) / (2.0 * FD_STEP));
    }
    Some(out)
}

/// `‖a − b‖ / max(‖a‖ + ‖b‖, 1e-12)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-12)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Separability probe: 5×5 mean filter, keep the brightest tenth of the
/// filtered pixels, least-squares fit `row = a·col² + b·col + c`. Rows grow
/// downward, so a smile (vertex lowest) has `a < 0`.
pub fn probe_is_smile(img: &GrayImage) -> bool {
    let (h, w) = (img.height(), img.width());
    let mut filtered = Vec::with_capacity(h * w);
    for r in 2..h - 2 {
        for c in 2..w - 2 {
            let mut s = 0.0;
            for dr in 0..5 {
                for dc in 0..5 {
                    s += img.get(r + dr - 2, c + dc - 2);
                }
            }
            filtered.push((s / 25.0, r as f64, c as f64));
        }
    }
    filtered.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let keep = filtered.len() / 10;
    let pts = &filtered[..keep];

    // Normal equations for the three coefficients.
    let mut m = [[0.0f64; 3]; 3];
    let mut v = [0.0f64; 3];
    for &(_, row, col) in pts {
        let basis = [col * col, col, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += basis[i] * basis[j];
            }
            v[i] += basis[i] * row;
        }
    }
    solve3(m, v)[0] < 0.0
}

fn solve3(mut m: [[f64; 3]; 3], mut v: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        v.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            v[row] -= f * v[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = v[row];
        for k in row + 1..3 {
            s -= m[row][k] * x[k];
        }
        x[row] = s / m[row][row];
    }
    x
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_smilenet")
}

/// Runs the binary sequentially (no worker pool).
pub fn run_cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(cwd)
        .env("SMILENET_THREADS", "0")
        .output()
        .expect("spawn smilenet")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

/// Value following `key` on the first stdout line that starts with it.
pub fn field(out: &str, key: &str) -> Option<f64> {
    out.lines().find_map(|l| {
        let mut it = l.split_whitespace();
        while let Some(tok) = it.next() {
            if tok == key {
                return it.next()?.parse().ok();
            }
        }
        None
    })
}

pub fn write_config(dir: &Path, name: &str, lines: &[&str]) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

/// Largest absolute deviation of `conv2d_valid` from [`conv_oracle`] over
/// random instances with spatial sizes up to 8×8.
pub fn conv_oracle_gap(instances: usize, seed: u64) -> f64 {
    use smilenet::nnops::{conv2d_valid, ConvParams};
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (c, o) = (r.gen_range(1..=4), r.gen_range(1..=4));
        let k = r.gen_range(1..=5);
        let (h, w) = (r.gen_range(k.max(1)..=8), r.gen_range(k.max(1)..=8));
        let x = random_tensor(&mut r, &[c, h, w], -1.0, 1.0);
        let kernels = random_tensor(&mut r, &[o, c, k, k], -1.0, 1.0);
        let bias = random_tensor(&mut r, &[o], -1.0, 1.0);
        let expected = conv_oracle(&x, &kernels, &bias);
        let got = conv2d_valid(&x, &ConvParams::new(kernels, bias).unwrap()).unwrap();
        assert_eq!(got.shape(), [o, h - k + 1, w - k + 1]);
        for (a, b) in got.data().iter().zip(&expected) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Largest absolute deviation of `dense_forward` from [`dense_oracle`] over
/// random instances with up to 64 inputs and 8 outputs.
pub fn dense_oracle_gap(instances: usize, seed: u64) -> f64 {
    use smilenet::nnops::{dense_forward, DenseParams};
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (n, m) = (r.gen_range(1..=64), r.gen_range(1..=8));
        let x = random_tensor(&mut r, &[n], -1.0, 1.0);
        let wts = random_tensor(&mut r, &[m, n], -1.0, 1.0);
        let bias = random_tensor(&mut r, &[m], -1.0, 1.0);
        let expected = dense_oracle(x.data(), &wts, &bias);
        let got = dense_forward(&x, &DenseParams::new(wts, bias).unwrap()).unwrap();
        for (a, b) in got.data().iter().zip(&expected) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Hand-computed chains: `(input, [(conv, pooled); stages], flatten)`.
/// Each stage shrinks by 4 (5×5 valid) then halves with floor.
pub type ShapeRow = (
    (usize, usize),
    &'static [((usize, usize), (usize, usize))],
    usize,
);

pub const SHAPE_TABLE: [ShapeRow; 6] = [
    ((69, 85), &[((65, 81), (32, 40))], 40960),
    (
        (69, 85),
        &[((65, 81), (32, 40)), ((28, 36), (14, 18))],
        8064,
    ),
    (
        (69, 85),
        &[
            ((65, 81), (32, 40)),
            ((28, 36), (14, 18)),
            ((10, 14), (5, 7)),
        ],
        1120,
    ),
    ((128, 104), &[((124, 100), (62, 50))], 99200),
    (
        (128, 104),
        &[((124, 100), (62, 50)), ((58, 46), (29, 23))],
        21344,
    ),
    (
        (128, 104),
        &[
            ((124, 100), (62, 50)),
            ((58, 46), (29, 23)),
            ((25, 19), (12, 9)),
        ],
        3456,
    ),
];

/// Returns a description of the first row of [`SHAPE_TABLE`] that the
/// built network disagrees with.
pub fn shape_table_mismatch() -> Option<String> {
    use smilenet::network::ArchitectureConfig;
    for (input, stages, flatten) in SHAPE_TABLE {
        let cfg = ArchitectureConfig {
            num_convolutions: stages.len(),
            ..ArchitectureConfig::default()
        }
        .with_input(input.0, input.1);
        let plan = match cfg.shape_plan() {
            Ok(p) => p,
            Err(e) => return Some(format!("{input:?} x{}: {e}", stages.len())),
        };
        let got: Vec<_> = plan.stages.iter().map(|s| (s.conv, s.pooled)).collect();
        if got != stages || plan.flatten != flatten || plan.stages[0].input != input {
            return Some(format!("{input:?} x{}: got {plan}", stages.len()));
        }
        // The built network must hold kernels consistent with the plan.
        let net = smilenet::Network::build(cfg, 0).unwrap();
        let first_dense = &net.params().dense[0];
        if first_dense.weights.shape()[1] != flatten {
            return Some(format!(
                "{input:?}: dense input {}",
                first_dense.weights.shape()[1]
            ));
        }
    }
    None
}

/// In-memory synthetic image set of `n` frames.
pub fn synth_set(n: usize, size: usize, seed: u64) -> smilenet::dataio::ImageSet {
    use smilenet::dataio::{synth_generate, ImageSet, SynthParams};
    let c = synth_generate(&SynthParams {
        n,
        height: size,
        width: size,
        noise_sigma: 0.1,
        seed,
    })
    .unwrap();
    let labels = c
        .manifest
        .records()
        .iter()
        .map(|r| r.label as usize)
        .collect();
    ImageSet::new(&c.images, labels).unwrap()
}

/// Configuration for the overfit check: one conv stage and ten hidden units
/// on 16×16 frames, no dropout.
pub fn overfit_config() -> smilenet::ArchitectureConfig {
    smilenet::ArchitectureConfig {
        input_height: 16,
        input_width: 16,
        ..gradcheck::tiny_config()
    }
}

/// Trains on 20 synthetic frames, using the training set for validation
/// too, and returns the first epoch at full training accuracy.
pub fn overfit_epoch(seed: u64) -> Option<usize> {
    use smilenet::train::{train, DataSplits};
    let set = synth_set(20, 16, seed);
    let splits = DataSplits {
        train: set.clone(),
        val: set.clone(),
        test: set,
    };
    let cfg = smilenet::TrainConfig {
        batch_size: 5,
        epochs: 200,
        seed,
        ..Default::default()
    };
    let net = smilenet::Network::build(overfit_config(), seed).unwrap();
    let (_, report) = train(net, &splits, &cfg, None).unwrap();
    report
        .epochs
        .iter()
        .find(|e| e.val_acc == Some(1.0))
        .map(|e| e.epoch)
}

/// Deterministic evaluator scoring each full configuration with one of a few
/// accuracy levels, so ties are frequent.
pub fn rigged_evaluator(
    seed: u64,
) -> impl FnMut(&smilenet::modelsel::Candidate) -> smilenet::Result<f64> {
    use std::hash::{Hash, Hasher};
    move |c| {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        seed.hash(&mut h);
        let a = &c.config;
        (
            a.num_convolutions,
            a.num_hidden_layers,
            a.units_per_hidden_layer,
            a.dropout_rate.to_bits(),
        )
            .hash(&mut h);
        Ok(0.8 + 0.05 * (h.finish() % 4) as f64)
    }
}

/// Number of rigged evaluators (out of `n`) for which `select` agrees with
/// the brute-force coordinate check.
pub fn rigged_agreements(n: u64) -> usize {
    use smilenet::modelsel::{exhaustive_coordinate_check, SelectionGrid};
    let grid = SelectionGrid::default();
    let base = smilenet::ArchitectureConfig::mouth();
    (0..n)
        .filter(|&s| exhaustive_coordinate_check(&grid, &base, rigged_evaluator(s)))
        .count()
}

/// Byte size of a checkpoint of [`gradcheck::tiny_config`], counted by hand.
///
/// Architecture block: 19+20+26+15+16+15+14+16+12+14 = 167 bytes, so the
/// header is 4 (magic) + 4 (version) + 4 (length) + 167 = 179.
/// Each tensor record is 4 + name + 4 + 4·rank + 8·elements:
///   conv1.kernels   [32,1,5,5]  4+13+4+16+6400  = 6437
///   conv1.bias      [32]        4+10+4+4+256    = 278
///   hidden1.weights [10,512]    4+15+4+8+40960  = 40991
///   hidden1.bias    [10]        4+12+4+4+80     = 104
///   output.weights  [2,10]      4+14+4+8+160    = 190
///   output.bias     [2]         4+11+4+4+16     = 39
pub const TINY_CHECKPOINT_BYTES: u64 = 179 + 6437 + 278 + 40991 + 104 + 190 + 39;

/// Trains a small network twice with the same seed, and checks that both
/// checkpoints are byte-identical, that loading restores every parameter
/// bit for bit, and that save∘load∘save is byte-identical.
pub fn determinism_and_persistence(dir: &Path) -> Result<(), String> {
    use smilenet::train::{train, DataSplits};
    use smilenet::{ckpt, Network, TrainConfig};
    let data = DataSplits {
        train: synth_set(24, 16, 1),
        val: synth_set(8, 16, 2),
        test: synth_set(8, 16, 3),
    };
    let arch = smilenet::ArchitectureConfig {
        dropout_rate: 0.5,
        ..overfit_config()
    };
    let cfg = TrainConfig {
        batch_size: 5,
        epochs: 3,
        seed: 17,
        ..TrainConfig::default()
    };
    let run = |name: &str| -> Result<(Network, Vec<u8>), String> {
        let (net, _) = train(
            Network::build(arch.clone(), cfg.seed).unwrap(),
            &data,
            &cfg,
            None,
        )
        .map_err(|e| e.to_string())?;
        let path = dir.join(name);
        ckpt::save(&net, &path).map_err(|e| e.to_string())?;
        Ok((net, std::fs::read(&path).unwrap()))
    };
    let (net, a) = run("a.ckpt")?;
    let (_, b) = run("b.ckpt")?;
    if a != b {
        return Err("same seed produced different checkpoint bytes".into());
    }
    let loaded = ckpt::load(dir.join("a.ckpt")).map_err(|e| e.to_string())?;
    let bits = |n: &Network| -> Vec<u64> {
        n.params()
            .tensors()
            .iter()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
            .collect()
    };
    if bits(&loaded) != bits(&net) || loaded.config() != net.config() {
        return Err("load(save(net)) differs from net".into());
    }
    ckpt::save(&loaded, dir.join("c.ckpt")).map_err(|e| e.to_string())?;
    if std::fs::read(dir.join("c.ckpt")).unwrap() != a {
        return Err("save(load(save(net))) is not byte-identical".into());
    }
    Ok(())
}
