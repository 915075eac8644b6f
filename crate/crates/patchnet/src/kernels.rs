//! Numeric kernels: valid-mode 2D cross-correlation, soft-selection pooling,
//! mask application and spatial argmax.
//!
//! All functions are pure; "convolution" everywhere means the
//! cross-correlation convention (no kernel flip), with no padding.

use crate::error::{Error, Result};
use crate::tensor::{Tensor3, Tensor4};

/// Valid-mode 2D cross-correlation with runtime weights.
///
/// Output channel `o` at (y, x) is the sum over in-channels and kernel taps
/// of `input[c][y*stride+ky][x*stride+kx] * weights[o][c][ky][kx]`.
pub fn conv2d_valid(input: &Tensor3, weights: &Tensor4, stride: usize) -> Result<Tensor3> {
    if weights.in_channels != input.channels {
        return Err(Error::InvalidArgument(format!(
            "conv2d_valid: weight in_channels {} != input channels {}",
            weights.in_channels, input.channels
        )));
    }
    if weights.kernel_h > input.height || weights.kernel_w > input.width {
        return Err(Error::InvalidArgument(format!(
            "conv2d_valid: kernel {}x{} exceeds input {}x{}",
            weights.kernel_h, weights.kernel_w, input.height, input.width
        )));
    }
    if stride < 1 {
        return Err(Error::InvalidArgument(
            "conv2d_valid: stride must be >= 1".to_string(),
        ));
    }

    let out_h = (input.height - weights.kernel_h) / stride + 1;
    let out_w = (input.width - weights.kernel_w) / stride + 1;
    let mut out = Tensor3::zeros(weights.out_channels, out_h, out_w);

    let (kh, kw) = (weights.kernel_h, weights.kernel_w);
    let in_w = input.width;
    for o in 0..weights.out_channels {
        let filter = weights.filter(o);
        for c in 0..input.channels {
            let plane = input.channel(c);
            let f_base = c * kh * kw;
            for y in 0..out_h {
                let iy0 = y * stride;
                for x in 0..out_w {
                    let ix0 = x * stride;
                    let mut acc = 0.0;
                    for ky in 0..kh {
                        let row = &plane[(iy0 + ky) * in_w + ix0..(iy0 + ky) * in_w + ix0 + kw];
                        let frow = &filter[f_base + ky * kw..f_base + (ky + 1) * kw];
                        for kx in 0..kw {
                            acc += row[kx] * frow[kx];
                        }
                    }
                    *out.at_mut(o, y, x) += acc;
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of `conv2d_valid` with respect to the weights.
///
/// `out_grad` has the shape of the forward output; the result has the shape
/// of the weights.
pub fn conv2d_valid_weight_grad(
    input: &Tensor3,
    out_grad: &Tensor3,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
) -> Tensor4 {
    let mut grad = Tensor4::zeros(out_grad.channels, input.channels, kernel_h, kernel_w);
    for o in 0..out_grad.channels {
        for c in 0..input.channels {
            for ky in 0..kernel_h {
                for kx in 0..kernel_w {
                    let mut acc = 0.0;
                    for y in 0..out_grad.height {
                        for x in 0..out_grad.width {
                            acc += out_grad.at(o, y, x) * input.at(c, y * stride + ky, x * stride + kx);
                        }
                    }
                    *grad.at_mut(o, c, ky, kx) = acc;
                }
            }
        }
    }
    grad
}

/// Gradient of `conv2d_valid` with respect to the input.
pub fn conv2d_valid_input_grad(
    weights: &Tensor4,
    out_grad: &Tensor3,
    in_height: usize,
    in_width: usize,
    stride: usize,
) -> Tensor3 {
    let mut grad = Tensor3::zeros(weights.in_channels, in_height, in_width);
    for o in 0..out_grad.channels {
        for y in 0..out_grad.height {
            for x in 0..out_grad.width {
                let g = out_grad.at(o, y, x);
                if g == 0.0 {
                    continue;
                }
                for c in 0..weights.in_channels {
                    for ky in 0..weights.kernel_h {
                        for kx in 0..weights.kernel_w {
                            *grad.at_mut(c, y * stride + ky, x * stride + kx) +=
                                g * weights.at(o, c, ky, kx);
                        }
                    }
                }
            }
        }
    }
    grad
}

/// Per-position offset bias of the soft-selection pooling operator:
/// `bias[position][component]` with window positions indexed row-major
/// (2*i + j for row i, column j) and components (dx_min, dy_min, dx_max, dy_max).
pub type PoolBias = [[f64; 4]; 4];

/// Soft-selection pooling over 2x2 windows with stride 2.
///
/// Scores pool by max. Offsets pool by an Eq.-style soft selection: for the
/// four offset channels attached to each score channel, the output is
/// `sum_i softmax(scores)[i] * (offset[i] + bias[i][component])`.
pub fn soft_select_pool(
    scores: &Tensor3,
    offsets: &Tensor3,
    bias: &PoolBias,
) -> Result<(Tensor3, Tensor3)> {
    if offsets.channels != 4 * scores.channels {
        return Err(Error::InvalidArgument(format!(
            "soft_select_pool: offsets channels {} != 4 x scores channels {}",
            offsets.channels, scores.channels
        )));
    }
    if scores.height != offsets.height || scores.width != offsets.width {
        return Err(Error::InvalidArgument(format!(
            "soft_select_pool: spatial dims differ, scores {}x{} vs offsets {}x{}",
            scores.height, scores.width, offsets.height, offsets.width
        )));
    }
    if scores.height % 2 != 0 || scores.width % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "soft_select_pool: spatial dims must be even, got {}x{}",
            scores.height, scores.width
        )));
    }

    let out_h = scores.height / 2;
    let out_w = scores.width / 2;
    let mut scores_out = Tensor3::zeros(scores.channels, out_h, out_w);
    let mut offsets_out = Tensor3::zeros(offsets.channels, out_h, out_w);

    for ch in 0..scores.channels {
        for wy in 0..out_h {
            for wx in 0..out_w {
                let mut s = [0.0f64; 4];
                for i in 0..2 {
                    for j in 0..2 {
                        s[2 * i + j] = scores.at(ch, 2 * wy + i, 2 * wx + j);
                    }
                }
                let weights = softmax4(&s);
                let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                *scores_out.at_mut(ch, wy, wx) = max;

                for comp in 0..4 {
                    let oc = 4 * ch + comp;
                    let mut acc = 0.0;
                    for i in 0..2 {
                        for j in 0..2 {
                            let pos = 2 * i + j;
                            let f = offsets.at(oc, 2 * wy + i, 2 * wx + j);
                            acc += weights[pos] * (f + bias[pos][comp]);
                        }
                    }
                    *offsets_out.at_mut(oc, wy, wx) = acc;
                }
            }
        }
    }
    Ok((scores_out, offsets_out))
}

/// Numerically stable softmax over a 4-vector.
pub fn softmax4(s: &[f64; 4]) -> [f64; 4] {
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut e = [0.0f64; 4];
    let mut sum = 0.0;
    for i in 0..4 {
        e[i] = (s[i] - max).exp();
        sum += e[i];
    }
    for v in &mut e {
        *v /= sum;
    }
    e
}

/// Backward pass of `soft_select_pool`.
///
/// Returns gradients with respect to the score input, the offset input and
/// the bias table. Max-pool gradient routes to the first maximal position in
/// row-major window order.
pub fn soft_select_pool_backward(
    scores: &Tensor3,
    offsets: &Tensor3,
    bias: &PoolBias,
    scores_out_grad: &Tensor3,
    offsets_out_grad: &Tensor3,
) -> (Tensor3, Tensor3, PoolBias) {
    let out_h = scores.height / 2;
    let out_w = scores.width / 2;
    let mut d_scores = Tensor3::zeros(scores.channels, scores.height, scores.width);
    let mut d_offsets = Tensor3::zeros(offsets.channels, offsets.height, offsets.width);
    let mut d_bias: PoolBias = [[0.0; 4]; 4];

    for ch in 0..scores.channels {
        for wy in 0..out_h {
            for wx in 0..out_w {
                let mut s = [0.0f64; 4];
                for i in 0..2 {
                    for j in 0..2 {
                        s[2 * i + j] = scores.at(ch, 2 * wy + i, 2 * wx + j);
                    }
                }
                let w = softmax4(&s);

                // Max path: route to the first maximal position.
                let mut arg = 0;
                for pos in 1..4 {
                    if s[pos] > s[arg] {
                        arg = pos;
                    }
                }
                let g_max = scores_out_grad.at(ch, wy, wx);
                *d_scores.at_mut(ch, 2 * wy + arg / 2, 2 * wx + arg % 2) += g_max;

                // Soft-selection path.
                for comp in 0..4 {
                    let oc = 4 * ch + comp;
                    let g = offsets_out_grad.at(oc, wy, wx);
                    if g == 0.0 {
                        continue;
                    }
                    let mut vals = [0.0f64; 4];
                    let mut pooled = 0.0;
                    for pos in 0..4 {
                        let f = offsets.at(oc, 2 * wy + pos / 2, 2 * wx + pos % 2);
                        vals[pos] = f + bias[pos][comp];
                        pooled += w[pos] * vals[pos];
                    }
                    for pos in 0..4 {
                        *d_offsets.at_mut(oc, 2 * wy + pos / 2, 2 * wx + pos % 2) += g * w[pos];
                        d_bias[pos][comp] += g * w[pos];
                        // Softmax Jacobian: dw[pos]/ds[q] = w[pos](delta - w[q]).
                        *d_scores.at_mut(ch, 2 * wy + pos / 2, 2 * wx + pos % 2) +=
                            g * w[pos] * (vals[pos] - pooled);
                    }
                }
            }
        }
    }
    (d_scores, d_offsets, d_bias)
}

/// Elementwise product with a {0,1} mask; enforces structural sparsity.
pub fn apply_mask(weights: &Tensor4, mask: &Tensor4) -> Result<Tensor4> {
    if !weights.same_shape(mask) {
        return Err(Error::InvalidArgument(format!(
            "apply_mask: shape mismatch {}x{}x{}x{} vs {}x{}x{}x{}",
            weights.out_channels,
            weights.in_channels,
            weights.kernel_h,
            weights.kernel_w,
            mask.out_channels,
            mask.in_channels,
            mask.kernel_h,
            mask.kernel_w
        )));
    }
    let mut out = weights.clone();
    for (w, m) in out.data_mut().iter_mut().zip(mask.data().iter()) {
        *w *= m;
    }
    Ok(out)
}

/// Location and value of the maximum of a single-channel map.
/// Ties break to the smallest y, then smallest x.
pub fn argmax_spatial(map: &Tensor3) -> Result<(usize, usize, f64)> {
    if map.channels != 1 {
        return Err(Error::InvalidArgument(format!(
            "argmax_spatial: expected 1 channel, got {}",
            map.channels
        )));
    }
    let mut best = (0usize, 0usize, map.at(0, 0, 0));
    for y in 0..map.height {
        for x in 0..map.width {
            let v = map.at(0, y, x);
            if v > best.2 {
                best = (y, x, v);
            }
        }
    }
    Ok(best)
}
