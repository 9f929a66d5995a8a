use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    relu_in_place(out.data_mut());
    out
}

pub(crate) fn relu_in_place(data: &mut [f64]) {
    for v in data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Passes the gradient where `input > 0`; zero elsewhere, including at 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(shape_err(
            "relu_backward",
            format!(
                "input {} vs grad_out {}",
                input.shape_string(),
                grad_out.shape_string()
            ),
        ));
    }
    let mut g = grad_out.clone();
    relu_mask_grad(input.data(), g.data_mut());
    Ok(g)
}

pub(crate) fn relu_mask_grad(input: &[f64], grad: &mut [f64]) {
    for (g, &x) in grad.iter_mut().zip(input) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Keep mask produced by [`dropout`]; kept entries are scaled by `1/keep_prob`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    kept: Vec<bool>,
    scale: f64,
}

impl DropoutMask {
    pub(crate) fn all_kept(len: usize) -> Self {
        Self {
            kept: vec![true; len],
            scale: 1.0,
        }
    }

    pub(crate) fn sample<R: Rng + ?Sized>(len: usize, keep_prob: f64, rng: &mut R) -> Self {
        if keep_prob >= 1.0 {
            return Self::all_kept(len);
        }
        Self {
            kept: (0..len).map(|_| rng.random::<f64>() < keep_prob).collect(),
            scale: 1.0 / keep_prob,
        }
    }

    pub fn kept(&self) -> &[bool] {
        &self.kept
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn kept_fraction(&self) -> f64 {
        self.kept.iter().filter(|&&k| k).count() as f64 / self.kept.len().max(1) as f64
    }

    pub(crate) fn apply(&self, data: &mut [f64]) {
        for (v, &k) in data.iter_mut().zip(&self.kept) {
            *v = if k { *v * self.scale } else { 0.0 };
        }
    }

    pub fn backward(&self, grad_out: &Tensor) -> Result<Tensor> {
        if grad_out.len() != self.kept.len() {
            return Err(shape_err(
                "dropout backward",
                format!(
                    "grad_out has {} elements, mask {}",
                    grad_out.len(),
                    self.kept.len()
                ),
            ));
        }
        let mut g = grad_out.clone();
        self.apply(g.data_mut());
        Ok(g)
    }
}

pub(crate) fn check_keep_prob(keep_prob: f64) -> Result<()> {
    if keep_prob > 0.0 && keep_prob <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "dropout keep probability must be in (0, 1], got {keep_prob}"
        )))
    }
}

/// Inverted dropout. In evaluation mode this is the identity and no random
/// numbers are drawn.
pub fn dropout<R: Rng + ?Sized>(
    input: &Tensor,
    keep_prob: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Tensor, DropoutMask)> {
    check_keep_prob(keep_prob)?;
    let mask = if training {
        DropoutMask::sample(input.len(), keep_prob, rng)
    } else {
        DropoutMask::all_kept(input.len())
    };
    let mut out = input.clone();
    mask.apply(out.data_mut());
    Ok((out, mask))
}
