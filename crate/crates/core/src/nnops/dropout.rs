use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Per-unit multiplier: `0` for dropped units, `1/(1-rate)` for kept ones.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    scale: Vec<f64>,
}

impl DropoutMask {
    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn kept(&self) -> usize {
        self.scale.iter().filter(|&&s| s != 0.0).count()
    }
}

/// Inverted dropout. A zero rate returns the input unchanged and draws
/// nothing from `rng`.
pub fn dropout_forward<R: Rng + ?Sized>(
    input: &Tensor,
    rate: f64,
    rng: &mut R,
) -> Result<(Tensor, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(
            "dropout_forward",
            format!("rate must lie in [0, 1), got {rate}"),
        ));
    }
    if rate == 0.0 {
        let mask = DropoutMask {
            scale: vec![1.0; input.len()],
        };
        return Ok((input.clone(), mask));
    }
    let keep = 1.0 - rate;
    let kept_scale = 1.0 / keep;
    let scale: Vec<f64> = (0..input.len())
        .map(|_| {
            if rng.gen::<f64>() < keep {
                kept_scale
            } else {
                0.0
            }
        })
        .collect();
    let data = input
        .data()
        .iter()
        .zip(&scale)
        .map(|(x, s)| x * s)
        .collect();
    Ok((
        Tensor::new(input.shape().to_vec(), data)?,
        DropoutMask { scale },
    ))
}

pub fn dropout_backward(grad_out: &Tensor, mask: &DropoutMask) -> Result<Tensor> {
    if grad_out.len() != mask.scale.len() {
        return Err(Error::shape(
            "dropout_backward",
            "element count",
            mask.scale.len(),
            grad_out.len(),
        ));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(&mask.scale)
        .map(|(g, s)| g * s)
        .collect();
    Tensor::new(grad_out.shape().to_vec(), data)
}
