//! Layer primitives: im2col convolution, max-pooling, activations.
//!
//! Convolutions run as GEMMs over im2col matrices. Backward passes rebuild
//! the im2col buffers from the cached layer inputs instead of keeping them
//! alive across the batch.

use crate::linalg::dgemm_acc;

/// Shape of one conv layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn out_size(&self, input: usize) -> usize {
        (input + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel
    }
}

/// Element-wise max(x, 0).
pub fn relu(data: &mut [f64]) {
    for v in data.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Numerically stable softmax (max-subtraction).
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Σ p ln p with the 0·ln 0 := 0 convention.
pub fn neg_entropy(p: &[f64]) -> f64 {
    p.iter()
        .map(|&x| if x > 0.0 { x * x.ln() } else { 0.0 })
        .sum()
}

/// Grow a reusable buffer without re-zeroing retained capacity.
fn ensure_len(buf: &mut Vec<f64>, len: usize) {
    if buf.len() != len {
        buf.resize(len, 0.0);
    }
}

/// Expand (C, H, W) input into the (C·k², H_out·W_out) im2col matrix.
/// Every cell of `out` is overwritten.
pub fn im2col(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    spec: &ConvSpec,
    out: &mut Vec<f64>,
) -> (usize, usize) {
    let h_out = spec.out_size(h);
    let w_out = spec.out_size(w);
    let k = spec.kernel;
    let rows = c_in * k * k;
    let cols = h_out * w_out;
    ensure_len(out, rows * cols);
    for c in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst_base = row * cols;
                for oy in 0..h_out {
                    let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                    let dst_row = dst_base + oy * w_out;
                    if iy < 0 || iy >= h as isize {
                        for v in &mut out[dst_row..dst_row + w_out] {
                            *v = 0.0;
                        }
                        continue;
                    }
                    let src_base = (c * h + iy as usize) * w;
                    if spec.stride == 1 {
                        // Contiguous source run; handle the padded edges.
                        let ix0 = kx as isize - spec.padding as isize;
                        for ox in 0..w_out {
                            let ix = ix0 + ox as isize;
                            out[dst_row + ox] = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                input[src_base + ix as usize]
                            };
                        }
                    } else {
                        for ox in 0..w_out {
                            let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                            out[dst_row + ox] = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                input[src_base + ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
    (rows, cols)
}

/// Scatter-add an im2col-shaped gradient back onto the input layout.
pub fn col2im(
    cols_mat: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    spec: &ConvSpec,
    out: &mut [f64],
) {
    let h_out = spec.out_size(h);
    let w_out = spec.out_size(w);
    let k = spec.kernel;
    let cols = h_out * w_out;
    out.fill(0.0);
    for c in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src_base = row * cols;
                for oy in 0..h_out {
                    let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_base = (c * h + iy as usize) * w;
                    for ox in 0..w_out {
                        let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        out[dst_base + ix as usize] += cols_mat[src_base + oy * w_out + ox];
                    }
                }
            }
        }
    }
}

/// Convolution forward: weights·im2col + bias, ReLU applied in place.
///
/// Returns (out_h, out_w); `scratch` holds the im2col buffer.
#[allow(clippy::too_many_arguments)]
pub fn conv_forward(
    input: &[f64],
    h: usize,
    w: usize,
    spec: &ConvSpec,
    weights: &[f64],
    bias: &[f64],
    scratch: &mut Vec<f64>,
    output: &mut Vec<f64>,
) -> (usize, usize) {
    let (rows, cols) = im2col(input, spec.in_ch, h, w, spec, scratch);
    ensure_len(output, spec.out_ch * cols);
    dgemm_acc(
        false, false, spec.out_ch, cols, rows, 1.0, weights, scratch, 0.0, output,
    );
    for o in 0..spec.out_ch {
        let b = bias[o];
        for v in &mut output[o * cols..(o + 1) * cols] {
            *v += b;
        }
    }
    relu(output);
    (spec.out_size(h), spec.out_size(w))
}

/// Convolution backward.
///
/// `d_out` is the gradient at the (post-ReLU) output; the ReLU mask must
/// already be applied by the caller. Accumulates into `d_weights`/`d_bias`
/// and, when `d_input` is given, writes the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    input: &[f64],
    h: usize,
    w: usize,
    spec: &ConvSpec,
    weights: &[f64],
    d_out: &[f64],
    d_weights: &mut [f64],
    d_bias: &mut [f64],
    scratch: &mut Vec<f64>,
    d_cols_ws: &mut Vec<f64>,
    d_input: Option<&mut [f64]>,
) {
    let (rows, cols) = im2col(input, spec.in_ch, h, w, spec, scratch);
    debug_assert_eq!(d_out.len(), spec.out_ch * cols);
    // dW += dZ · im2colᵀ
    dgemm_acc(
        false, true, spec.out_ch, rows, cols, 1.0, d_out, scratch, 1.0, d_weights,
    );
    for o in 0..spec.out_ch {
        d_bias[o] += d_out[o * cols..(o + 1) * cols].iter().sum::<f64>();
    }
    if let Some(d_input) = d_input {
        // dX_col = Wᵀ · dZ, then scatter back.
        ensure_len(d_cols_ws, rows * cols);
        dgemm_acc(
            true, false, rows, cols, spec.out_ch, 1.0, weights, d_out, 0.0, d_cols_ws,
        );
        col2im(d_cols_ws, spec.in_ch, h, w, spec, d_input);
    }
}

/// 2×2 stride-2 max pool (floor semantics) into reusable buffers. Fills
/// pooled values and the within-window argmax (0..3) per cell.
pub fn maxpool2_forward(
    input: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    out: &mut Vec<f64>,
    idx: &mut Vec<u8>,
) -> (usize, usize) {
    let h_out = h / 2;
    let w_out = w / 2;
    ensure_len(out, channels * h_out * w_out);
    if idx.len() != channels * h_out * w_out {
        idx.resize(channels * h_out * w_out, 0);
    }
    for c in 0..channels {
        for oy in 0..h_out {
            for ox in 0..w_out {
                let base = (c * h + 2 * oy) * w + 2 * ox;
                let candidates = [
                    input[base],
                    input[base + 1],
                    input[base + w],
                    input[base + w + 1],
                ];
                let mut best = 0usize;
                for j in 1..4 {
                    if candidates[j] > candidates[best] {
                        best = j;
                    }
                }
                let o = (c * h_out + oy) * w_out + ox;
                out[o] = candidates[best];
                idx[o] = best as u8;
            }
        }
    }
    (h_out, w_out)
}

/// Scatter pooled gradients back to the argmax cells.
pub fn maxpool2_backward(
    d_out: &[f64],
    idx: &[u8],
    channels: usize,
    h: usize,
    w: usize,
    d_input: &mut [f64],
) {
    let h_out = h / 2;
    let w_out = w / 2;
    d_input.fill(0.0);
    for c in 0..channels {
        for oy in 0..h_out {
            for ox in 0..w_out {
                let o = (c * h_out + oy) * w_out + ox;
                let which = idx[o] as usize;
                let (dy, dx) = (which / 2, which % 2);
                d_input[(c * h + 2 * oy + dy) * w + 2 * ox + dx] = d_out[o];
            }
        }
    }
}
