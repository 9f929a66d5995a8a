//! Fully connected layer, `out = inputᵀ·W + b` with `W` stored `[in, out]`.

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    weights: Tensor,
    bias: Tensor,
}

impl DenseParams {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        let &[_, out] = weights.shape() else {
            return Err(shape_err(
                "dense params",
                format!("weights must be [in, out], got {}", weights.shape_string()),
            ));
        };
        if bias.shape() != [out] {
            return Err(shape_err(
                "dense params",
                format!("bias {} does not match {out} outputs", bias.shape_string()),
            ));
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            weights: Tensor::zeros(&[in_features, out_features]),
            bias: Tensor::zeros(&[out_features]),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }
}

/// Batched forward over `batch` row-major input rows of length `n_in`.
///
/// The loop runs over input features outermost so each weight row is read
/// once per batch.
pub(crate) fn forward_batch(
    batch: usize,
    n_in: usize,
    n_out: usize,
    input: &[f64],
    weights: &[f64],
    bias: &[f64],
    output: &mut [f64],
) {
    for row in output.chunks_exact_mut(n_out).take(batch) {
        row.copy_from_slice(bias);
    }
    for i in 0..n_in {
        let w_row = &weights[i * n_out..][..n_out];
        for b in 0..batch {
            let x = input[b * n_in + i];
            if x == 0.0 {
                continue;
            }
            let out_row = &mut output[b * n_out..][..n_out];
            for (o, &w) in out_row.iter_mut().zip(w_row) {
                *o += x * w;
            }
        }
    }
}

/// Accumulates parameter gradients and (optionally) writes input gradients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_batch(
    batch: usize,
    n_in: usize,
    n_out: usize,
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    grad_weights: &mut [f64],
    grad_bias: &mut [f64],
    mut grad_input: Option<&mut [f64]>,
) {
    for g_row in grad_out.chunks_exact(n_out).take(batch) {
        for (gb, &g) in grad_bias.iter_mut().zip(g_row) {
            *gb += g;
        }
    }
    for i in 0..n_in {
        let w_row = &weights[i * n_out..][..n_out];
        let gw_row = &mut grad_weights[i * n_out..][..n_out];
        for b in 0..batch {
            let g_row = &grad_out[b * n_out..][..n_out];
            let x = input[b * n_in + i];
            if x != 0.0 {
                for (gw, &g) in gw_row.iter_mut().zip(g_row) {
                    *gw += x * g;
                }
            }
            if let Some(gi) = grad_input.as_deref_mut() {
                gi[b * n_in + i] = w_row.iter().zip(g_row).map(|(w, g)| w * g).sum();
            }
        }
    }
}

fn check_input(op: &'static str, input: &Tensor, params: &DenseParams) -> Result<()> {
    if input.shape() != [params.in_features()] {
        return Err(shape_err(
            op,
            format!(
                "input {} does not match {} input features (flatten first)",
                input.shape_string(),
                params.in_features()
            ),
        ));
    }
    Ok(())
}

pub fn dense_forward(input: &Tensor, params: &DenseParams) -> Result<Tensor> {
    check_input("dense_forward", input, params)?;
    let n_out = params.out_features();
    let mut out = vec![0.0; n_out];
    forward_batch(
        1,
        params.in_features(),
        n_out,
        input.data(),
        params.weights().data(),
        params.bias().data(),
        &mut out,
    );
    Tensor::vector(out)
}

/// Returns `(grad_input, parameter gradients)`.
pub fn dense_backward(
    input: &Tensor,
    params: &DenseParams,
    grad_out: &Tensor,
) -> Result<(Tensor, DenseParams)> {
    check_input("dense_backward", input, params)?;
    if grad_out.shape() != [params.out_features()] {
        return Err(shape_err(
            "dense_backward",
            format!(
                "grad_out {} does not match {} outputs",
                grad_out.shape_string(),
                params.out_features()
            ),
        ));
    }
    let mut grads = DenseParams::zeros(params.in_features(), params.out_features());
    let mut grad_input = Tensor::zeros(input.shape());
    let DenseParams {
        weights: gw,
        bias: gb,
    } = &mut grads;
    backward_batch(
        1,
        params.in_features(),
        params.out_features(),
        input.data(),
        params.weights().data(),
        grad_out.data(),
        gw.data_mut(),
        gb.data_mut(),
        Some(grad_input.data_mut()),
    );
    Ok((grad_input, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n_in: usize, n_out: usize, w: Vec<f64>, b: Vec<f64>) -> DenseParams {
        DenseParams::new(
            Tensor::new(vec![n_in, n_out], w).unwrap(),
            Tensor::vector(b).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn fc1_shape() {
        let p = DenseParams::zeros(7 * 7 * 64, 1024);
        let out = dense_forward(&Tensor::zeros(&[3136]), &p).unwrap();
        assert_eq!(out.shape(), &[1024]);
    }

    #[test]
    fn identity_weights_pass_through() {
        let p = params(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.], vec![0.; 3]);
        let x = Tensor::vector(vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(dense_forward(&x, &p).unwrap(), x);
    }

    #[test]
    fn hand_matrix_product() {
        let p = params(2, 2, vec![2., 0., 0., 2.], vec![1., 1.]);
        let x = Tensor::vector(vec![1., 2.]).unwrap();
        assert_eq!(dense_forward(&x, &p).unwrap().data(), &[3., 5.]);
    }

    #[test]
    fn length_mismatch_rejected() {
        let p = DenseParams::zeros(4, 2);
        assert!(dense_forward(&Tensor::zeros(&[5]), &p).is_err());
        assert!(dense_forward(&Tensor::zeros(&[2, 2]), &p).is_err());
    }

    #[test]
    fn bias_gradient_is_grad_out() {
        let p = params(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], vec![0.; 3]);
        let x = Tensor::vector(vec![1.5, -0.5]).unwrap();
        let g = Tensor::vector(vec![0.3, -0.7, 1.1]).unwrap();
        let (gi, gp) = dense_backward(&x, &p, &g).unwrap();
        assert_eq!(gp.bias(), &g);
        // grad_input[i] = Σ_j W[i,j] g[j]
        assert!((gi.data()[0] - (0.1 * 0.3 - 0.2 * 0.7 + 0.3 * 1.1)).abs() < 1e-15);

        let (gi, gp) = dense_backward(&x, &p, &Tensor::zeros(&[3])).unwrap();
        assert!(gi
            .data()
            .iter()
            .chain(gp.weights().data())
            .all(|&v| v == 0.0));
    }
}
