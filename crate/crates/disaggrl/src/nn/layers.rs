//! Conv, layer norm, and activations: single-sample forward/backward over
//! raw slices. Batch orchestration lives in `policy`.

use super::linalg::sum;

pub const LN_EPS: f32 = 1e-5;

/// 3x3 / stride 2 / zero-pad 1 convolution geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub ci: usize,
    pub co: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvShape {
    pub fn new(ci: usize, co: usize, h_in: usize, w_in: usize) -> Self {
        Self {
            ci,
            co,
            h_in,
            w_in,
            h_out: (h_in - 1) / 2 + 1,
            w_out: (w_in - 1) / 2 + 1,
        }
    }

    pub fn in_len(&self) -> usize {
        self.ci * self.h_in * self.w_in
    }

    pub fn out_len(&self) -> usize {
        self.co * self.h_out * self.w_out
    }

    pub fn weight_len(&self) -> usize {
        self.co * self.ci * 9
    }

    /// im2col scratch length for this layer.
    pub fn col_len(&self) -> usize {
        self.h_out * self.w_out * self.ci * 9
    }
}

/// Unfold one sample into patch rows: `col[p][ci*9 + ky*3 + kx]` holds the
/// input under kernel tap (ky, kx) at output pixel p, zero where the 3x3
/// window hangs over the padding. Row layout matches the weight layout
/// `[co][ci][ky][kx]`, so convolution becomes contiguous dot products.
pub fn im2col(s: &ConvShape, x: &[f32], col: &mut [f32]) {
    let (hi, wi, ho, wo) = (s.h_in, s.w_in, s.h_out, s.w_out);
    let k = s.ci * 9;
    debug_assert_eq!(col.len(), ho * wo * k);
    col.fill(0.0);
    for oy in 0..ho {
        for ky in 0..3usize {
            let iy = (2 * oy + ky) as isize - 1;
            if iy < 0 || iy >= hi as isize {
                continue;
            }
            for ci in 0..s.ci {
                let x_row = &x[ci * hi * wi + iy as usize * wi..];
                for kx in 0..3usize {
                    let ox_lo = if kx == 0 { 1 } else { 0 };
                    let mut ox_hi = wo;
                    while ox_hi > ox_lo && 2 * (ox_hi - 1) + kx - 1 >= wi {
                        ox_hi -= 1;
                    }
                    let slot = ci * 9 + ky * 3 + kx;
                    for ox in ox_lo..ox_hi {
                        col[(oy * wo + ox) * k + slot] = x_row[2 * ox + kx - 1];
                    }
                }
            }
        }
    }
}

/// Scatter-add patch-row gradients back to the input layout.
fn col2im_add(s: &ConvShape, dcol: &[f32], dx: &mut [f32]) {
    let (hi, wi, ho, wo) = (s.h_in, s.w_in, s.h_out, s.w_out);
    let k = s.ci * 9;
    for oy in 0..ho {
        for ky in 0..3usize {
            let iy = (2 * oy + ky) as isize - 1;
            if iy < 0 || iy >= hi as isize {
                continue;
            }
            for ci in 0..s.ci {
                let base = ci * hi * wi + iy as usize * wi;
                for kx in 0..3usize {
                    let ox_lo = if kx == 0 { 1 } else { 0 };
                    let mut ox_hi = wo;
                    while ox_hi > ox_lo && 2 * (ox_hi - 1) + kx - 1 >= wi {
                        ox_hi -= 1;
                    }
                    let slot = ci * 9 + ky * 3 + kx;
                    for ox in ox_lo..ox_hi {
                        dx[base + 2 * ox + kx - 1] += dcol[(oy * wo + ox) * k + slot];
                    }
                }
            }
        }
    }
}

/// Forward conv for one sample: x `[ci, h_in, w_in]` -> y `[co, h_out, w_out]`.
/// `col` is scratch of size `h_out * w_out * ci * 9`.
pub fn conv_forward_col(
    s: &ConvShape,
    w: &[f32],
    b: &[f32],
    x: &[f32],
    y: &mut [f32],
    col: &mut [f32],
) {
    debug_assert_eq!(w.len(), s.weight_len());
    debug_assert_eq!(x.len(), s.in_len());
    debug_assert_eq!(y.len(), s.out_len());
    im2col(s, x, col);
    let k = s.ci * 9;
    let pixels = s.h_out * s.w_out;
    for co in 0..s.co {
        let w_row = &w[co * k..(co + 1) * k];
        let y_plane = &mut y[co * pixels..(co + 1) * pixels];
        for (p, yo) in y_plane.iter_mut().enumerate() {
            *yo = b[co] + super::linalg::dot(w_row, &col[p * k..(p + 1) * k]);
        }
    }
}

/// Convenience wrapper allocating the scratch (tests, single shots).
pub fn conv_forward(s: &ConvShape, w: &[f32], b: &[f32], x: &[f32], y: &mut [f32]) {
    let mut col = vec![0.0f32; s.h_out * s.w_out * s.ci * 9];
    conv_forward_col(s, w, b, x, y, &mut col);
}

/// Backward conv for one sample. `dx` accumulation is optional (layer 1
/// skips it); `dw`/`db` accumulate. `col`/`dcol` are scratch of size
/// `h_out * w_out * ci * 9`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward_col(
    s: &ConvShape,
    w: &[f32],
    x: &[f32],
    dy: &[f32],
    mut dx: Option<&mut [f32]>,
    dw: &mut [f32],
    db: &mut [f32],
    col: &mut [f32],
    dcol: &mut [f32],
) {
    im2col(s, x, col);
    let k = s.ci * 9;
    let pixels = s.h_out * s.w_out;
    let with_dx = dx.is_some();
    if with_dx {
        dcol.fill(0.0);
    }
    for co in 0..s.co {
        let dy_plane = &dy[co * pixels..(co + 1) * pixels];
        db[co] += sum(dy_plane);
        let w_row = &w[co * k..(co + 1) * k];
        let dw_row = &mut dw[co * k..(co + 1) * k];
        for (p, &g) in dy_plane.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            super::linalg::axpy(g, &col[p * k..(p + 1) * k], dw_row);
            if with_dx {
                super::linalg::axpy(g, w_row, &mut dcol[p * k..(p + 1) * k]);
            }
        }
    }
    if let Some(dx) = dx.as_deref_mut() {
        col2im_add(s, dcol, dx);
    }
}

/// Convenience wrapper allocating the scratch.
pub fn conv_backward(
    s: &ConvShape,
    w: &[f32],
    x: &[f32],
    dy: &[f32],
    dx: Option<&mut [f32]>,
    dw: &mut [f32],
    db: &mut [f32],
) {
    let mut col = vec![0.0f32; s.h_out * s.w_out * s.ci * 9];
    let mut dcol = vec![0.0f32; s.h_out * s.w_out * s.ci * 9];
    conv_backward_col(s, w, x, dy, dx, dw, db, &mut col, &mut dcol);
}

/// Layer norm over one sample's full feature vector, before affine:
/// xhat = (x - mean) / sqrt(var + eps), y = gamma * xhat + beta.
/// Returns inv_std; `xhat` is cached for the backward pass.
pub fn layernorm_forward(
    x: &[f32],
    gamma: &[f32],
    beta: &[f32],
    xhat: &mut [f32],
    y: &mut [f32],
) -> f32 {
    let n = x.len() as f32;
    let mean = sum(x) / n;
    let mut var_acc = 0.0f32;
    for &v in x {
        let d = v - mean;
        var_acc += d * d;
    }
    let inv_std = 1.0 / (var_acc / n + LN_EPS).sqrt();
    for i in 0..x.len() {
        xhat[i] = (x[i] - mean) * inv_std;
        y[i] = gamma[i] * xhat[i] + beta[i];
    }
    inv_std
}

/// Backward of `layernorm_forward`; accumulates dgamma/dbeta, writes dx.
pub fn layernorm_backward(
    dy: &[f32],
    gamma: &[f32],
    xhat: &[f32],
    inv_std: f32,
    dx: &mut [f32],
    dgamma: &mut [f32],
    dbeta: &mut [f32],
) {
    let n = dy.len() as f32;
    let mut m1 = 0.0f32; // mean of dxhat
    let mut m2 = 0.0f32; // mean of dxhat * xhat
    for i in 0..dy.len() {
        let dxh = dy[i] * gamma[i];
        m1 += dxh;
        m2 += dxh * xhat[i];
        dgamma[i] += dy[i] * xhat[i];
        dbeta[i] += dy[i];
    }
    m1 /= n;
    m2 /= n;
    for i in 0..dy.len() {
        let dxh = dy[i] * gamma[i];
        dx[i] = inv_std * (dxh - m1 - xhat[i] * m2);
    }
}

#[inline]
pub fn relu_forward(x: &mut [f32]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// ReLU backward from the layer's own output: units at exactly zero (which
/// includes all negative pre-activations) pass no gradient.
#[inline]
pub fn relu_backward(y: &[f32], dy: &mut [f32]) {
    for (g, &v) in dy.iter_mut().zip(y) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
}

#[inline]
pub fn tanh_forward(x: &mut [f32]) {
    for v in x {
        *v = v.tanh();
    }
}

#[inline]
pub fn tanh_backward(y: &[f32], dy: &mut [f32]) {
    for (g, &v) in dy.iter_mut().zip(y) {
        *g *= 1.0 - v * v;
    }
}
