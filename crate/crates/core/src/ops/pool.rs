//! Non-overlapping max pooling (stride = window).

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Argmax positions saved by [`maxpool_forward`] for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolArgmax {
    input_shape: Vec<usize>,
    indices: Vec<usize>,
}

impl PoolArgmax {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Flat input offsets, one per pooled output element.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

/// Writes pooled values into `output` and the flat argmax offset of each
/// output element into `argmax`. Ties resolve to the first element in
/// row-major window order.
pub(crate) fn forward_into(
    height: usize,
    width: usize,
    channels: usize,
    window: usize,
    input: &[f64],
    output: &mut [f64],
    argmax: &mut [usize],
) {
    let (oh, ow) = (height / window, width / window);
    for oy in 0..oh {
        for ox in 0..ow {
            for c in 0..channels {
                let mut best_idx = ((oy * window) * width + ox * window) * channels + c;
                let mut best = input[best_idx];
                for wy in 0..window {
                    for wx in 0..window {
                        let idx = ((oy * window + wy) * width + ox * window + wx) * channels + c;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (oy * ow + ox) * channels + c;
                output[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
}

pub(crate) fn backward_accumulate(grad_out: &[f64], argmax: &[usize], grad_input: &mut [f64]) {
    for (&g, &idx) in grad_out.iter().zip(argmax) {
        grad_input[idx] += g;
    }
}

pub fn maxpool_forward(input: &Tensor, window: usize) -> Result<(Tensor, PoolArgmax)> {
    let &[h, w, c] = input.shape() else {
        return Err(shape_err(
            "maxpool_forward",
            format!("expected [H, W, C] input, got {}", input.shape_string()),
        ));
    };
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(shape_err(
            "maxpool_forward",
            format!("{h}x{w} is not divisible by window {window}"),
        ));
    }
    let out_shape = vec![h / window, w / window, c];
    let len = out_shape.iter().product();
    let mut out = vec![0.0; len];
    let mut indices = vec![0; len];
    forward_into(h, w, c, window, input.data(), &mut out, &mut indices);
    Ok((
        Tensor::new(out_shape, out)?,
        PoolArgmax {
            input_shape: input.shape().to_vec(),
            indices,
        },
    ))
}

/// Routes each upstream gradient to the saved argmax position.
pub fn maxpool_backward(grad_out: &Tensor, saved: &PoolArgmax) -> Result<Tensor> {
    if grad_out.len() != saved.indices.len() {
        return Err(shape_err(
            "maxpool_backward",
            format!(
                "grad_out {} has {} elements, pooled output had {}",
                grad_out.shape_string(),
                grad_out.len(),
                saved.indices.len()
            ),
        ));
    }
    let mut grad_input = Tensor::zeros(&saved.input_shape);
    backward_accumulate(grad_out.data(), &saved.indices, grad_input.data_mut());
    Ok(grad_input)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_shapes() {
        let (out, _) = maxpool_forward(&Tensor::zeros(&[28, 28, 32]), 2).unwrap();
        assert_eq!(out.shape(), &[14, 14, 32]);
        let (out, _) = maxpool_forward(&Tensor::zeros(&[28, 28, 2]), 4).unwrap();
        assert_eq!(out.shape(), &[7, 7, 2]);
    }

    #[test]
    fn rejects_indivisible_extent() {
        assert!(maxpool_forward(&Tensor::zeros(&[28, 28, 1]), 3).is_err());
        assert!(maxpool_forward(&Tensor::zeros(&[28, 28]), 2).is_err());
    }

    #[test]
    fn constant_input_constant_output_first_index_wins() {
        let (out, arg) = maxpool_forward(&Tensor::filled(&[4, 4, 1], 1.5), 2).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.5));
        // top-left element of each window
        assert_eq!(arg.indices(), &[0, 2, 8, 10]);
    }

    #[test]
    fn picks_maximum_per_channel() {
        // 2x2x2: channel 0 = [1,5,3,2], channel 1 = [-1,-2,-3,-0.5]
        let input = Tensor::new(
            vec![2, 2, 2],
            vec![1.0, -1.0, 5.0, -2.0, 3.0, -3.0, 2.0, -0.5],
        )
        .unwrap();
        let (out, arg) = maxpool_forward(&input, 2).unwrap();
        assert_eq!(out.data(), &[5.0, -0.5]);
        assert_eq!(arg.indices(), &[2, 7]);
    }

    #[test]
    fn backward_routes_to_argmax() {
        let input = Tensor::new(vec![2, 2, 1], vec![0.1, 0.4, 0.3, 0.2]).unwrap();
        let (_, arg) = maxpool_forward(&input, 2).unwrap();
        let g = maxpool_backward(&Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap(), &arg).unwrap();
        assert_eq!(g.data(), &[0.0, 2.0, 0.0, 0.0]);

        let zero = maxpool_backward(&Tensor::zeros(&[1, 1, 1]), &arg).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn distinct_values_one_nonzero_per_window() {
        let input = Tensor::new(
            vec![4, 4, 1],
            (0..16).map(|i| ((i * 7) % 16) as f64).collect(),
        )
        .unwrap();
        let (_, arg) = maxpool_forward(&input, 2).unwrap();
        let g = maxpool_backward(&Tensor::filled(&[2, 2, 1], 1.0), &arg).unwrap();
        for wy in 0..2 {
            for wx in 0..2 {
                let nonzero = (0..2)
                    .flat_map(|dy| (0..2).map(move |dx| (dy, dx)))
                    .filter(|&(dy, dx)| g.get(&[wy * 2 + dy, wx * 2 + dx, 0]).unwrap() != 0.0)
                    .count();
                assert_eq!(nonzero, 1);
            }
        }
    }
}
