use super::Tensor;
use crate::error::{Error, Result};

/// Lower clamp applied to the target probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

/// `-ln(max(p, PROB_FLOOR))`, keeping NaN as NaN.
pub(crate) fn neg_log_prob(p: f64) -> f64 {
    if p.is_nan() {
        return f64::NAN;
    }
    -p.max(PROB_FLOOR).ln()
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = v.max(0.0);
    }
    out
}

/// Passes `grad_out` where `input > 0`; the subgradient at zero is zero.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if !input.same_shape(grad_out) {
        return Err(Error::shape(
            "relu_backward",
            "shape",
            format!("{:?}", input.shape()),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Max-shifted softmax of a vector.
pub fn softmax(input: &Tensor) -> Result<Tensor> {
    input.expect_rank("softmax", 1)?;
    let mut out = input.clone();
    softmax_in_place(out.data_mut());
    Ok(out)
}

/// Softmax applied independently to every row of a `[B, n]` tensor.
pub fn softmax_rows(input: &Tensor) -> Result<Tensor> {
    input.expect_rank("softmax", 2)?;
    let n = input.shape()[1];
    let mut out = input.clone();
    for row in out.data_mut().chunks_exact_mut(n) {
        softmax_in_place(row);
    }
    Ok(out)
}

fn check_label(probs: &Tensor, label: usize) -> Result<()> {
    probs.expect_rank("cross_entropy", 1)?;
    if label >= probs.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: probs.len(),
        });
    }
    Ok(())
}

/// Negative log-likelihood of `label` under `probs`.
pub fn cross_entropy(probs: &Tensor, label: usize) -> Result<f64> {
    check_label(probs, label)?;
    Ok(neg_log_prob(probs.data()[label]))
}

/// Gradient of the loss with respect to the pre-softmax logits: `p − onehot`.
pub fn cross_entropy_grad(probs: &Tensor, label: usize) -> Result<Tensor> {
    check_label(probs, label)?;
    let mut g = probs.clone();
    g.data_mut()[label] -= 1.0;
    Ok(g)
}
