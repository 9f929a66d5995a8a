//! Stride-1 SAME-padded 2D convolution over `[H, W, C]` activations.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{ShapeDisplay, Tensor};

/// Convolution weights `[kh, kw, c_in, c_out]` plus a per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    weights: Tensor,
    bias: Tensor,
}

impl ConvParams {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.rank() != 4 {
            return Err(shape_err(
                "conv params",
                format!(
                    "weights must be [kh, kw, c_in, c_out], got {}",
                    weights.shape_string()
                ),
            ));
        }
        let out = weights.shape()[3];
        if bias.shape() != [out] {
            return Err(shape_err(
                "conv params",
                format!(
                    "bias {} does not match {out} output channels",
                    bias.shape_string()
                ),
            ));
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(
        kernel_h: usize,
        kernel_w: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        Self {
            weights: Tensor::zeros(&[kernel_h, kernel_w, in_channels, out_channels]),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    pub fn kernel_h(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn kernel_w(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[3]
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

    pub(crate) fn geometry(&self, height: usize, width: usize) -> ConvGeometry {
        ConvGeometry {
            height,
            width,
            in_channels: self.in_channels(),
            out_channels: self.out_channels(),
            kernel_h: self.kernel_h(),
            kernel_w: self.kernel_w(),
        }
    }
}

/// Extents needed by the slice kernels.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
}

impl ConvGeometry {
    pub fn output_len(&self) -> usize {
        self.height * self.width * self.out_channels
    }

    // SAME padding puts the extra row/column (even kernels) at the bottom/right.
    fn pad_top(&self) -> usize {
        (self.kernel_h - 1) / 2
    }

    fn pad_left(&self) -> usize {
        (self.kernel_w - 1) / 2
    }

    /// Input coordinate read by output `out` through kernel tap `tap`, if in bounds.
    #[inline]
    fn source(out: usize, tap: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (out + tap).checked_sub(pad)?;
        (pos < extent).then_some(pos)
    }
}

pub(crate) fn forward_into(
    geo: ConvGeometry,
    input: &[f64],
    weights: &[f64],
    bias: &[f64],
    output: &mut [f64],
) {
    let (cin, cout) = (geo.in_channels, geo.out_channels);
    for y in 0..geo.height {
        for x in 0..geo.width {
            let out_px = &mut output[(y * geo.width + x) * cout..][..cout];
            out_px.copy_from_slice(bias);
            for ky in 0..geo.kernel_h {
                let Some(iy) = ConvGeometry::source(y, ky, geo.pad_top(), geo.height) else {
                    continue;
                };
                for kx in 0..geo.kernel_w {
                    let Some(ix) = ConvGeometry::source(x, kx, geo.pad_left(), geo.width) else {
                        continue;
                    };
                    let in_px = &input[(iy * geo.width + ix) * cin..][..cin];
                    let tap = (ky * geo.kernel_w + kx) * cin * cout;
                    for (ci, &v) in in_px.iter().enumerate() {
                        if v == 0.0 {
                            continue;
                        }
                        let w_row = &weights[tap + ci * cout..][..cout];
                        for (o, &w) in out_px.iter_mut().zip(w_row) {
                            *o += v * w;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight/bias gradients into the given buffers and, when
/// `grad_input` is provided, accumulates the input gradient too.
pub(crate) fn backward_accumulate(
    geo: ConvGeometry,
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    grad_weights: &mut [f64],
    grad_bias: &mut [f64],
    mut grad_input: Option<&mut [f64]>,
) {
    let (cin, cout) = (geo.in_channels, geo.out_channels);
    for y in 0..geo.height {
        for x in 0..geo.width {
            let g_px = &grad_out[(y * geo.width + x) * cout..][..cout];
            for (gb, &g) in grad_bias.iter_mut().zip(g_px) {
                *gb += g;
            }
            for ky in 0..geo.kernel_h {
                let Some(iy) = ConvGeometry::source(y, ky, geo.pad_top(), geo.height) else {
                    continue;
                };
                for kx in 0..geo.kernel_w {
                    let Some(ix) = ConvGeometry::source(x, kx, geo.pad_left(), geo.width) else {
                        continue;
                    };
                    let in_off = (iy * geo.width + ix) * cin;
                    let tap = (ky * geo.kernel_w + kx) * cin * cout;
                    for ci in 0..cin {
                        let row = tap + ci * cout;
                        let v = input[in_off + ci];
                        if v != 0.0 {
                            let gw_row = &mut grad_weights[row..][..cout];
                            for (gw, &g) in gw_row.iter_mut().zip(g_px) {
                                *gw += v * g;
                            }
                        }
                        if let Some(gi) = grad_input.as_deref_mut() {
                            let w_row = &weights[row..][..cout];
                            let dot: f64 = w_row.iter().zip(g_px).map(|(w, g)| w * g).sum();
                            gi[in_off + ci] += dot;
                        }
                    }
                }
            }
        }
    }
}

fn check_input(op: &'static str, input: &Tensor, params: &ConvParams) -> Result<(usize, usize)> {
    match *input.shape() {
        [h, w, c] if c == params.in_channels() => Ok((h, w)),
        _ => Err(shape_err(
            op,
            format!(
                "input {} is incompatible with kernel {} (expected [H, W, {}])",
                input.shape_string(),
                params.weights().shape_string(),
                params.in_channels()
            ),
        )),
    }
}

/// SAME-padded, stride-1 convolution: `[H, W, C_in]` to `[H, W, C_out]`.
pub fn conv2d_forward(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let (h, w) = check_input("conv2d_forward", input, params)?;
    let geo = params.geometry(h, w);
    let mut out = vec![0.0; geo.output_len()];
    forward_into(
        geo,
        input.data(),
        params.weights().data(),
        params.bias().data(),
        &mut out,
    );
    Tensor::new(vec![h, w, geo.out_channels], out)
}

/// Gradients of [`conv2d_forward`] with respect to input, weights and bias.
pub fn conv2d_backward(
    input: &Tensor,
    params: &ConvParams,
    grad_out: &Tensor,
) -> Result<(Tensor, ConvParams)> {
    let (h, w) = check_input("conv2d_backward", input, params)?;
    let expected = [h, w, params.out_channels()];
    if grad_out.shape() != expected {
        return Err(Error::Shape {
            op: "conv2d_backward",
            detail: format!(
                "grad_out {} does not match forward output {}",
                grad_out.shape_string(),
                ShapeDisplay(&expected)
            ),
        });
    }
    let geo = params.geometry(h, w);
    let mut grad_input = Tensor::zeros(input.shape());
    let mut grads = ConvParams::zeros(
        params.kernel_h(),
        params.kernel_w(),
        params.in_channels(),
        params.out_channels(),
    );
    let ConvParams {
        weights: gw,
        bias: gb,
    } = &mut grads;
    backward_accumulate(
        geo,
        input.data(),
        params.weights().data(),
        grad_out.data(),
        gw.data_mut(),
        gb.data_mut(),
        Some(grad_input.data_mut()),
    );
    Ok((grad_input, grads))
}
