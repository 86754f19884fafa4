use super::Tensor;
use crate::error::{Error, Result};

/// Winning flat input index for every pooled cell, plus the input shape it
/// indexes into.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: [usize; 3],
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn output_shape(&self) -> [usize; 3] {
        let [c, h, w] = self.input_shape;
        [c, h / 2, w / 2]
    }

    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// Non-overlapping 2×2 max pooling over `[C, H, W]`. A trailing odd row or
/// column is discarded. Ties go to the lowest flat index.
pub fn maxpool2x2_forward(input: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let op = "maxpool2x2_forward";
    input.expect_rank(op, 3)?;
    let &[channels, height, width] = input.shape() else {
        unreachable!()
    };
    if height < 2 {
        return Err(Error::shape(op, "input height", ">= 2", height));
    }
    if width < 2 {
        return Err(Error::shape(op, "input width", ">= 2", width));
    }
    let (out_h, out_w) = (height / 2, width / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(channels * out_h * out_w);
    let mut argmax = Vec::with_capacity(channels * out_h * out_w);
    for c in 0..channels {
        let base = c * height * width;
        for i in 0..out_h {
            for j in 0..out_w {
                let top = base + 2 * i * width + 2 * j;
                let mut best = top;
                // Candidates in ascending flat order; strict `>` keeps the first.
                for idx in [top + 1, top + width, top + width + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::new(vec![channels, out_h, out_w], out)?,
        PoolIndices {
            input_shape: [channels, height, width],
            argmax,
        },
    ))
}

/// Routes each upstream gradient to the input position that won its window.
pub fn maxpool2x2_backward(grad_out: &Tensor, indices: &PoolIndices) -> Result<Tensor> {
    let expected = indices.output_shape();
    if grad_out.shape() != expected {
        return Err(Error::shape(
            "maxpool2x2_backward",
            "grad_out shape",
            format!("{expected:?}"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let mut grad_in = Tensor::zeros(&indices.input_shape);
    let g = grad_in.data_mut();
    for (&idx, &v) in indices.argmax.iter().zip(grad_out.data()) {
        g[idx] += v;
    }
    Ok(grad_in)
}
