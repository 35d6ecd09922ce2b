//! Raw kernels on flat `f64` buffers. Layouts are NCHW for images and
//! row-major `[out, in]` for dense weights.

/// Spatial extent of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn size(&self) -> usize {
        self.channels * self.plane()
    }

    pub fn pooled(&self, channels: usize) -> Dims {
        Dims {
            channels,
            height: self.height / 2,
            width: self.width / 2,
        }
    }
}

/// Offset range of kernel tap `k` (0..3) along an axis of length `n` with
/// zero padding 1: output positions `lo..hi` read input `pos + k - 1`.
fn tap_range(k: usize, n: usize) -> (usize, usize) {
    match k {
        0 => (1, n),
        1 => (0, n),
        _ => (0, n.saturating_sub(1)),
    }
}

/// 3x3 convolution, stride 1, zero padding 1.
pub fn conv3x3_forward(
    input: &[f64],
    batch: usize,
    dims: Dims,
    weight: &[f64],
    bias: &[f64],
    out_channels: usize,
) -> Vec<f64> {
    let (h, w) = (dims.height, dims.width);
    let plane = dims.plane();
    let mut out = vec![0.0; batch * out_channels * plane];
    for b in 0..batch {
        for o in 0..out_channels {
            let out_plane = &mut out[(b * out_channels + o) * plane..][..plane];
            out_plane.iter_mut().for_each(|v| *v = bias[o]);
            for c in 0..dims.channels {
                let in_plane = &input[(b * dims.channels + c) * plane..][..plane];
                let kernel = &weight[(o * dims.channels + c) * 9..][..9];
                for ky in 0..3 {
                    let (y0, y1) = tap_range(ky, h);
                    for kx in 0..3 {
                        let (x0, x1) = tap_range(kx, w);
                        let k = kernel[ky * 3 + kx];
                        for y in y0..y1 {
                            let src = &in_plane[(y + ky - 1) * w..][..w];
                            let dst = &mut out_plane[y * w..][..w];
                            for x in x0..x1 {
                                dst[x] += k * src[x + kx - 1];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when
/// `want_input` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward(
    input: &[f64],
    batch: usize,
    dims: Dims,
    weight: &[f64],
    out_channels: usize,
    d_out: &[f64],
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    want_input: bool,
) -> Option<Vec<f64>> {
    let (h, w) = (dims.height, dims.width);
    let plane = dims.plane();
    let mut d_in = want_input.then(|| vec![0.0; input.len()]);
    for b in 0..batch {
        for o in 0..out_channels {
            let g_plane = &d_out[(b * out_channels + o) * plane..][..plane];
            d_bias[o] += g_plane.iter().sum::<f64>();
            for c in 0..dims.channels {
                let base = (b * dims.channels + c) * plane;
                let in_plane = &input[base..][..plane];
                let widx = (o * dims.channels + c) * 9;
                for ky in 0..3 {
                    let (y0, y1) = tap_range(ky, h);
                    for kx in 0..3 {
                        let (x0, x1) = tap_range(kx, w);
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let src = &in_plane[(y + ky - 1) * w..][..w];
                            let g = &g_plane[y * w..][..w];
                            for x in x0..x1 {
                                acc += g[x] * src[x + kx - 1];
                            }
                        }
                        d_weight[widx + ky * 3 + kx] += acc;
                        if let Some(d_in) = d_in.as_mut() {
                            let k = weight[widx + ky * 3 + kx];
                            let d_plane = &mut d_in[base..][..plane];
                            for y in y0..y1 {
                                let g = &g_plane[y * w..][..w];
                                let dst = &mut d_plane[(y + ky - 1) * w..][..w];
                                for x in x0..x1 {
                                    dst[x + kx - 1] += k * g[x];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    d_in
}

/// 2x2 max pooling, stride 2, floor semantics. Returns pooled values and the
/// flat input index each output was taken from (first maximum wins).
pub fn maxpool2_forward(input: &[f64], batch: usize, dims: Dims) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (dims.height / 2, dims.width / 2);
    let n = batch * dims.channels * oh * ow;
    let mut out = Vec::with_capacity(n);
    let mut arg = Vec::with_capacity(n);
    for bc in 0..batch * dims.channels {
        let base = bc * dims.plane();
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * dims.width + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * dims.width + 2 * x + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward(d_out: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut d_in = vec![0.0; input_len];
    for (&g, &idx) in d_out.iter().zip(argmax) {
        d_in[idx] += g;
    }
    d_in
}

pub fn relu_inplace(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes gradient entries whose forward output was clamped.
pub fn relu_backward_inplace(grad: &mut [f64], output: &[f64]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// `out[b, o] = bias[o] + sum_i weight[o, i] * input[b, i]`.
pub fn dense_forward(
    input: &[f64],
    batch: usize,
    in_dim: usize,
    weight: &[f64],
    bias: &[f64],
    out_dim: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch * out_dim);
    for b in 0..batch {
        let x = &input[b * in_dim..][..in_dim];
        for o in 0..out_dim {
            let wrow = &weight[o * in_dim..][..in_dim];
            out.push(bias[o] + wrow.iter().zip(x).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    out
}

/// Accumulates `d_weight += d_outᵀ·input`, `d_bias += Σ_b d_out`.
pub fn dense_param_grads(
    input: &[f64],
    batch: usize,
    in_dim: usize,
    out_dim: usize,
    d_out: &[f64],
    d_weight: &mut [f64],
    d_bias: &mut [f64],
) {
    for b in 0..batch {
        let x = &input[b * in_dim..][..in_dim];
        for o in 0..out_dim {
            let g = d_out[b * out_dim + o];
            if g == 0.0 {
                continue;
            }
            d_bias[o] += g;
            let dw = &mut d_weight[o * in_dim..][..in_dim];
            for (d, &xi) in dw.iter_mut().zip(x) {
                *d += g * xi;
            }
        }
    }
}

/// Accumulates `d_input += d_out·weight` into `d_input`.
pub fn dense_input_grad(
    batch: usize,
    in_dim: usize,
    out_dim: usize,
    weight: &[f64],
    d_out: &[f64],
    d_input: &mut [f64],
) {
    for b in 0..batch {
        let dx = &mut d_input[b * in_dim..][..in_dim];
        for o in 0..out_dim {
            let g = d_out[b * out_dim + o];
            if g == 0.0 {
                continue;
            }
            let wrow = &weight[o * in_dim..][..in_dim];
            for (d, &wi) in dx.iter_mut().zip(wrow) {
                *d += g * wi;
            }
        }
    }
}
