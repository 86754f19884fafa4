use super::gemm::matmul;
use super::Tensor;
use crate::error::{Error, Result};

/// Kernels `[out_maps, in_maps, k, k]` and one bias per output map.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub kernels: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    pub fn new(kernels: Tensor, bias: Tensor) -> Result<Self> {
        kernels.expect_rank("conv params", 4)?;
        bias.expect_rank("conv params", 1)?;
        let s = kernels.shape();
        if s[2] != s[3] {
            return Err(Error::shape("conv params", "kernel width", s[2], s[3]));
        }
        if bias.len() != s[0] {
            return Err(Error::shape("conv params", "bias length", s[0], bias.len()));
        }
        Ok(ConvParams { kernels, bias })
    }

    pub fn zeros(out_maps: usize, in_maps: usize, k: usize) -> Self {
        ConvParams {
            kernels: Tensor::zeros(&[out_maps, in_maps, k, k]),
            bias: Tensor::zeros(&[out_maps]),
        }
    }

    pub fn out_maps(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_maps(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels.shape()[2]
    }
}

struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    k: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn geometry(op: &'static str, input: &Tensor, p: &ConvParams) -> Result<Geometry> {
    input.expect_rank(op, 3)?;
    let &[channels, height, width] = input.shape() else {
        unreachable!()
    };
    let k = p.kernel_size();
    if channels != p.in_maps() {
        return Err(Error::shape(op, "input channels", p.in_maps(), channels));
    }
    if height < k {
        return Err(Error::shape(op, "input height", format!(">= {k}"), height));
    }
    if width < k {
        return Err(Error::shape(op, "input width", format!(">= {k}"), width));
    }
    Ok(Geometry {
        channels,
        height,
        width,
        k,
        out_h: height - k + 1,
        out_w: width - k + 1,
    })
}

/// Unrolls every `k×k` receptive field into a column: rows are `(c, a, b)`,
/// columns are output positions `(i, j)`.
fn im2col(input: &[f64], g: &Geometry) -> Vec<f64> {
    let positions = g.positions();
    let mut cols = vec![0.0; g.patch_len() * positions];
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for a in 0..g.k {
            for b in 0..g.k {
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for i in 0..g.out_h {
                    let src = &plane[(i + a) * g.width + b..(i + a) * g.width + b + g.out_w];
                    dst[i * g.out_w..(i + 1) * g.out_w].copy_from_slice(src);
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &Geometry) -> Vec<f64> {
    let positions = g.positions();
    let mut out = vec![0.0; g.channels * g.height * g.width];
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for a in 0..g.k {
            for b in 0..g.k {
                let src = &cols[row * positions..(row + 1) * positions];
                for i in 0..g.out_h {
                    let dst = &mut plane[(i + a) * g.width + b..(i + a) * g.width + b + g.out_w];
                    for (d, s) in dst.iter_mut().zip(&src[i * g.out_w..(i + 1) * g.out_w]) {
                        *d += s;
                    }
                }
                row += 1;
            }
        }
    }
    out
}

/// Stride-1, unpadded cross-correlation of a `[C, H, W]` input with
/// `[O, C, k, k]` kernels; returns `[O, H-k+1, W-k+1]`.
pub fn conv2d_valid(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let g = geometry("conv2d_valid", input, p)?;
    let out_maps = p.out_maps();
    let positions = g.positions();
    let cols = im2col(input.data(), &g);

    let mut out = Vec::with_capacity(out_maps * positions);
    for &b in p.bias.data() {
        out.extend(std::iter::repeat_n(b, positions));
    }
    matmul(
        out_maps,
        g.patch_len(),
        positions,
        p.kernels.data(),
        false,
        &cols,
        false,
        1.0,
        &mut out,
    );
    Tensor::new(vec![out_maps, g.out_h, g.out_w], out)
}

/// Gradients of `Σ grad_out ⊙ conv2d_valid(input, p)` with respect to the
/// input, the kernels and the bias.
pub fn conv2d_backward(
    input: &Tensor,
    p: &ConvParams,
    grad_out: &Tensor,
) -> Result<(Tensor, ConvParams)> {
    let op = "conv2d_backward";
    let g = geometry(op, input, p)?;
    let out_maps = p.out_maps();
    let expected = [out_maps, g.out_h, g.out_w];
    if grad_out.shape() != expected {
        return Err(Error::shape(
            op,
            "grad_out shape",
            format!("{expected:?}"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let positions = g.positions();
    let patch = g.patch_len();
    let cols = im2col(input.data(), &g);

    let mut grad_kernels = vec![0.0; out_maps * patch];
    matmul(
        out_maps,
        positions,
        patch,
        grad_out.data(),
        false,
        &cols,
        true,
        0.0,
        &mut grad_kernels,
    );

    let mut grad_cols = vec![0.0; patch * positions];
    matmul(
        patch,
        out_maps,
        positions,
        p.kernels.data(),
        true,
        grad_out.data(),
        false,
        0.0,
        &mut grad_cols,
    );
    let grad_input = col2im(&grad_cols, &g);

    let grad_bias = grad_out
        .data()
        .chunks_exact(positions)
        .map(|plane| plane.iter().sum())
        .collect();

    Ok((
        Tensor::new(input.shape().to_vec(), grad_input)?,
        ConvParams {
            kernels: Tensor::new(p.kernels.shape().to_vec(), grad_kernels)?,
            bias: Tensor::new(vec![out_maps], grad_bias)?,
        },
    ))
}
