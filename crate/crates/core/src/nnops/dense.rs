use super::gemm::matmul;
use super::Tensor;
use crate::error::{Error, Result};

/// Fully connected layer: `weights` is `[out_units, in_units]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseParams {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        weights.expect_rank("dense params", 2)?;
        bias.expect_rank("dense params", 1)?;
        if bias.len() != weights.shape()[0] {
            return Err(Error::shape(
                "dense params",
                "bias length",
                weights.shape()[0],
                bias.len(),
            ));
        }
        Ok(DenseParams { weights, bias })
    }

    pub fn zeros(out_units: usize, in_units: usize) -> Self {
        DenseParams {
            weights: Tensor::zeros(&[out_units, in_units]),
            bias: Tensor::zeros(&[out_units]),
        }
    }

    pub fn out_units(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_units(&self) -> usize {
        self.weights.shape()[1]
    }
}

fn check_batch(op: &'static str, input: &Tensor, p: &DenseParams) -> Result<usize> {
    input.expect_rank(op, 2)?;
    if input.shape()[1] != p.in_units() {
        return Err(Error::shape(
            op,
            "input units",
            p.in_units(),
            input.shape()[1],
        ));
    }
    Ok(input.shape()[0])
}

/// `W·x + b` for a single input vector.
pub fn dense_forward(input: &Tensor, p: &DenseParams) -> Result<Tensor> {
    input.expect_rank("dense_forward", 1)?;
    let row = input.clone().reshape(vec![1, input.len()])?;
    dense_forward_batch(&row, p)?.reshape(vec![p.out_units()])
}

/// Row-wise `W·x + b` over a `[B, in]` batch.
pub fn dense_forward_batch(input: &Tensor, p: &DenseParams) -> Result<Tensor> {
    let batch = check_batch("dense_forward", input, p)?;
    let (n, m) = (p.in_units(), p.out_units());
    let mut out = Vec::with_capacity(batch * m);
    for _ in 0..batch {
        out.extend_from_slice(p.bias.data());
    }
    matmul(
        batch,
        n,
        m,
        input.data(),
        false,
        p.weights.data(),
        true,
        1.0,
        &mut out,
    );
    Tensor::new(vec![batch, m], out)
}

/// Returns `(Wᵀ·g, g⊗x, g)` for a single sample.
pub fn dense_backward(
    input: &Tensor,
    p: &DenseParams,
    grad_out: &Tensor,
) -> Result<(Tensor, DenseParams)> {
    input.expect_rank("dense_backward", 1)?;
    grad_out.expect_rank("dense_backward", 1)?;
    let x = input.clone().reshape(vec![1, input.len()])?;
    let g = grad_out.clone().reshape(vec![1, grad_out.len()])?;
    let (gi, gp) = dense_backward_batch(&x, p, &g)?;
    Ok((gi.reshape(vec![input.len()])?, gp))
}

/// Batched backward pass; parameter gradients are summed over the batch.
pub fn dense_backward_batch(
    input: &Tensor,
    p: &DenseParams,
    grad_out: &Tensor,
) -> Result<(Tensor, DenseParams)> {
    let op = "dense_backward";
    let batch = check_batch(op, input, p)?;
    let (n, m) = (p.in_units(), p.out_units());
    if grad_out.shape() != [batch, m] {
        return Err(Error::shape(
            op,
            "grad_out shape",
            format!("[{batch}, {m}]"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let mut grad_in = vec![0.0; batch * n];
    matmul(
        batch,
        m,
        n,
        grad_out.data(),
        false,
        p.weights.data(),
        false,
        0.0,
        &mut grad_in,
    );
    let mut grad_w = vec![0.0; m * n];
    matmul(
        m,
        batch,
        n,
        grad_out.data(),
        true,
        input.data(),
        false,
        0.0,
        &mut grad_w,
    );
    let mut grad_b = vec![0.0; m];
    for row in grad_out.data().chunks_exact(m) {
        for (b, g) in grad_b.iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok((
        Tensor::new(vec![batch, n], grad_in)?,
        DenseParams {
            weights: Tensor::new(vec![m, n], grad_w)?,
            bias: Tensor::new(vec![m], grad_b)?,
        },
    ))
}
