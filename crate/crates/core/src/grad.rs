//! Reverse-mode counterparts of the forward kernels in [`crate::tensor`].
//! Each function takes the forward inputs plus the upstream gradient and
//! returns gradients for the input and the layer parameters.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{depthwise_conv2d, ConvParams, FcParams, Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct LayerGrads<T> {
    pub input: Tensor<T>,
    /// Same layout as the layer's `weights` vector.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

fn check_grad_shape<T: Scalar>(grad: &Tensor<T>, h: usize, w: usize, c: usize) -> Result<()> {
    if grad.height() != h || grad.width() != w || grad.channels() != c {
        return Err(Error::InvalidInput(alloc::format!(
            "upstream gradient is {}x{}x{}, expected {h}x{w}x{c}",
            grad.height(),
            grad.width(),
            grad.channels()
        )));
    }
    Ok(())
}

#[allow(clippy::needless_range_loop)]
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<LayerGrads<T>> {
    params.validate()?;
    let out = params.output_shape(input.shape());
    check_grad_shape(grad_out, out.height, out.width, out.channels)?;
    let (k, s, m, f) = (
        params.kernel_size,
        params.stride,
        params.in_channels,
        params.filters,
    );
    let pad = k / 2;
    let mut gin = Tensor::zeros(input.height(), input.width(), m);
    let mut gw = vec![T::zero(); params.weights.len()];
    let mut gb = vec![T::zero(); f];
    for oy in 0..out.height {
        for ox in 0..out.width {
            let g = grad_out.pixel(oy, ox);
            for (b, &gi) in gb.iter_mut().zip(g) {
                *b = *b + gi;
            }
            for ky in 0..k {
                let Some(iy) = (oy * s + ky)
                    .checked_sub(pad)
                    .filter(|&y| y < input.height())
                else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ix) = (ox * s + kx)
                        .checked_sub(pad)
                        .filter(|&x| x < input.width())
                    else {
                        continue;
                    };
                    let wbase = (ky * k + kx) * m * f;
                    for c in 0..m {
                        let x = input.get(iy, ix, c);
                        let mut acc = T::zero();
                        for fi in 0..f {
                            let wi = wbase + c * f + fi;
                            gw[wi] = gw[wi] + x * g[fi];
                            acc = acc + params.weights[wi] * g[fi];
                        }
                        let cur = gin.get(iy, ix, c);
                        gin.set(iy, ix, c, cur + acc);
                    }
                }
            }
        }
    }
    Ok(LayerGrads {
        input: gin,
        weights: gw,
        bias: gb,
    })
}

/// Returns (input gradient, kernel gradient).
pub fn depthwise_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &[T],
    kernel_size: usize,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    let m = input.channels();
    let (oh, ow) = (
        input.height().div_ceil(stride),
        input.width().div_ceil(stride),
    );
    check_grad_shape(grad_out, oh, ow, m)?;
    let k = kernel_size;
    let pad = k / 2;
    let mut gin = Tensor::zeros(input.height(), input.width(), m);
    let mut gk = vec![T::zero(); kernel.len()];
    for oy in 0..oh {
        for ox in 0..ow {
            let g = grad_out.pixel(oy, ox);
            for ky in 0..k {
                let Some(iy) = (oy * stride + ky)
                    .checked_sub(pad)
                    .filter(|&y| y < input.height())
                else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ix) = (ox * stride + kx)
                        .checked_sub(pad)
                        .filter(|&x| x < input.width())
                    else {
                        continue;
                    };
                    let kbase = (ky * k + kx) * m;
                    for c in 0..m {
                        gk[kbase + c] = gk[kbase + c] + input.get(iy, ix, c) * g[c];
                        let cur = gin.get(iy, ix, c);
                        gin.set(iy, ix, c, cur + kernel[kbase + c] * g[c]);
                    }
                }
            }
        }
    }
    Ok((gin, gk))
}

pub fn pointwise_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &[T],
    grad_out: &Tensor<T>,
) -> Result<LayerGrads<T>> {
    let m = input.channels();
    let f = grad_out.channels();
    check_grad_shape(grad_out, input.height(), input.width(), f)?;
    if weights.len() != m * f {
        return Err(Error::InvalidSpec("pointwise weight count mismatch".into()));
    }
    let mut gin = Tensor::zeros(input.height(), input.width(), m);
    let mut gw = vec![T::zero(); weights.len()];
    let mut gb = vec![T::zero(); f];
    let gin_data = gin.data_mut();
    for ((px, g), gi) in input
        .data()
        .chunks_exact(m)
        .zip(grad_out.data().chunks_exact(f))
        .zip(gin_data.chunks_exact_mut(m))
    {
        for (b, &gv) in gb.iter_mut().zip(g) {
            *b = *b + gv;
        }
        for c in 0..m {
            let mut acc = T::zero();
            for fi in 0..f {
                gw[c * f + fi] = gw[c * f + fi] + px[c] * g[fi];
                acc = acc + weights[c * f + fi] * g[fi];
            }
            gi[c] = acc;
        }
    }
    Ok(LayerGrads {
        input: gin,
        weights: gw,
        bias: gb,
    })
}

pub fn separable_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<LayerGrads<T>> {
    params.validate()?;
    let mid = depthwise_conv2d(input, params.depthwise(), params.kernel_size, params.stride)?;
    let pw = pointwise_backward(&mid, params.pointwise(), grad_out)?;
    let (gin, gdw) = depthwise_backward(
        input,
        params.depthwise(),
        params.kernel_size,
        params.stride,
        &pw.input,
    )?;
    let mut weights = gdw;
    weights.extend(pw.weights);
    Ok(LayerGrads {
        input: gin,
        weights,
        bias: pw.bias,
    })
}

pub fn conv_layer_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<LayerGrads<T>> {
    if params.separable {
        separable_backward(input, params, grad_out)
    } else {
        conv2d_backward(input, params, grad_out)
    }
}

pub fn fc_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &FcParams<T>,
    grad_out: &[T],
) -> Result<LayerGrads<T>> {
    let len = input.shape().len();
    if grad_out.len() != params.hidden_units || params.weights.len() != params.hidden_units * len {
        return Err(Error::InvalidSpec("fc gradient shape mismatch".into()));
    }
    let mut gin = vec![T::zero(); len];
    let mut gw = vec![T::zero(); params.weights.len()];
    for (n, &g) in grad_out.iter().enumerate() {
        let row = &params.weights[n * len..(n + 1) * len];
        let grow = &mut gw[n * len..(n + 1) * len];
        for i in 0..len {
            grow[i] = input.data()[i] * g;
            gin[i] = gin[i] + row[i] * g;
        }
    }
    let s = input.shape();
    Ok(LayerGrads {
        input: Tensor::new(s.height, s.width, s.channels, gin)?,
        weights: gw,
        bias: grad_out.to_vec(),
    })
}

/// Gate `grad` by the sign of the pre-activation. The derivative at exactly
/// zero is taken as zero.
pub fn relu_backward<T: Scalar>(pre_activation: &Tensor<T>, mut grad: Tensor<T>) -> Tensor<T> {
    for (g, &z) in grad.data_mut().iter_mut().zip(pre_activation.data()) {
        if z <= T::zero() {
            *g = T::zero();
        }
    }
    grad
}

/// Route the gradient of a spatial max to the argmax location only.
pub fn spatial_max_backward<T: Scalar>(
    height: usize,
    width: usize,
    argmax: usize,
    grad: T,
) -> Tensor<T> {
    let mut out = Tensor::zeros(height, width, 1);
    out.data_mut()[argmax] = grad;
    out
}

/// Inverse of `depth_concat` for gradients: split channels into consecutive
/// groups of the given sizes.
pub fn split_channels<T: Scalar>(grad: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    if sizes.iter().sum::<usize>() != grad.channels() {
        return Err(Error::InvalidSpec(
            "channel split does not cover tensor".into(),
        ));
    }
    let mut out = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for &c in sizes {
        out.push(Tensor::from_fn(
            grad.height(),
            grad.width(),
            c,
            |h, w, i| grad.get(h, w, offset + i),
        ));
        offset += c;
    }
    Ok(out)
}
