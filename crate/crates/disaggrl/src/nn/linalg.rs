//! Hot-loop primitives. Reductions use four explicit accumulators: the
//! summation order is fixed by this code (not the optimizer), which keeps
//! results bit-identical while breaking the serial dependency chain.

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut s0 = 0.0f32;
    let mut s1 = 0.0f32;
    let mut s2 = 0.0f32;
    let mut s3 = 0.0f32;
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    for j in chunks * 4..a.len() {
        s0 += a[j] * b[j];
    }
    (s0 + s1) + (s2 + s3)
}

#[inline]
pub fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sum(xs: &[f32]) -> f32 {
    let mut s0 = 0.0f32;
    let mut s1 = 0.0f32;
    let mut s2 = 0.0f32;
    let mut s3 = 0.0f32;
    let chunks = xs.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        s0 += xs[j];
        s1 += xs[j + 1];
        s2 += xs[j + 2];
        s3 += xs[j + 3];
    }
    for j in chunks * 4..xs.len() {
        s0 += xs[j];
    }
    (s0 + s1) + (s2 + s3)
}

/// y = W x + b for one sample; W is `[out x in]` row-major.
pub fn linear_forward(w: &[f32], b: &[f32], x: &[f32], y: &mut [f32]) {
    let in_dim = x.len();
    debug_assert_eq!(w.len(), b.len() * in_dim);
    for (o, yo) in y.iter_mut().enumerate() {
        *yo = b[o] + dot(&w[o * in_dim..(o + 1) * in_dim], x);
    }
}

/// Backward of `linear_forward`: accumulates into dw/db and optionally dx.
pub fn linear_backward(
    w: &[f32],
    x: &[f32],
    dy: &[f32],
    mut dx: Option<&mut [f32]>,
    dw: &mut [f32],
    db: &mut [f32],
) {
    let in_dim = x.len();
    for (o, &g) in dy.iter().enumerate() {
        db[o] += g;
        axpy(g, x, &mut dw[o * in_dim..(o + 1) * in_dim]);
        if let Some(dx) = dx.as_deref_mut() {
            axpy(g, &w[o * in_dim..(o + 1) * in_dim], dx);
        }
    }
}
