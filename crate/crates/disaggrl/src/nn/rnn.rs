//! Recurrent cells (GRU default, LSTM preset), single step per sample.
//!
//! Gate blocks are stored row-contiguous: GRU `[r; z; n]`, LSTM
//! `[i; f; g; o]`. Weight layout per cell: `w_ih [gates*H x I]`,
//! `w_hh [gates*H x H]`, `b_ih [gates*H]`, `b_hh [gates*H]`.

use super::linalg::{axpy, dot};

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-sample cached intermediates for one GRU step.
#[derive(Clone, Debug, Default)]
pub struct GruCache {
    pub r: Vec<f32>,
    pub z: Vec<f32>,
    pub n: Vec<f32>,
    /// w_hn h + b_hn (needed for dr)
    pub hn_affine: Vec<f32>,
}

/// h' = (1-z) * n + z * h
pub fn gru_forward(
    hidden: usize,
    w_ih: &[f32],
    w_hh: &[f32],
    b_ih: &[f32],
    b_hh: &[f32],
    x: &[f32],
    h: &[f32],
    h_new: &mut [f32],
    cache: Option<&mut GruCache>,
) {
    let i_dim = x.len();
    let gate = |w: &[f32], b: &[f32], row: usize, v: &[f32], d: usize| -> f32 {
        b[row] + dot(&w[row * d..(row + 1) * d], v)
    };
    let mut r = vec![0.0f32; hidden];
    let mut z = vec![0.0f32; hidden];
    let mut n = vec![0.0f32; hidden];
    let mut hn_aff = vec![0.0f32; hidden];
    for u in 0..hidden {
        r[u] = sigmoid(gate(w_ih, b_ih, u, x, i_dim) + gate(w_hh, b_hh, u, h, hidden));
        z[u] = sigmoid(
            gate(w_ih, b_ih, hidden + u, x, i_dim) + gate(w_hh, b_hh, hidden + u, h, hidden),
        );
        hn_aff[u] = gate(w_hh, b_hh, 2 * hidden + u, h, hidden);
        n[u] = (gate(w_ih, b_ih, 2 * hidden + u, x, i_dim) + r[u] * hn_aff[u]).tanh();
        h_new[u] = (1.0 - z[u]) * n[u] + z[u] * h[u];
    }
    if let Some(c) = cache {
        c.r = r;
        c.z = z;
        c.n = n;
        c.hn_affine = hn_aff;
    }
}

/// Backward of one GRU step; accumulates weight grads and writes dx, dh
/// (gradient w.r.t. the incoming hidden state, accumulated).
#[allow(clippy::too_many_arguments)]
pub fn gru_backward(
    hidden: usize,
    w_ih: &[f32],
    w_hh: &[f32],
    x: &[f32],
    h: &[f32],
    cache: &GruCache,
    dh_new: &[f32],
    dx: &mut [f32],
    dh: &mut [f32],
    dw_ih: &mut [f32],
    dw_hh: &mut [f32],
    db_ih: &mut [f32],
    db_hh: &mut [f32],
) {
    let i_dim = x.len();
    for u in 0..hidden {
        let (r, z, n, hn) = (cache.r[u], cache.z[u], cache.n[u], cache.hn_affine[u]);
        let g = dh_new[u];
        let dn = g * (1.0 - z);
        let dz = g * (h[u] - n);
        dh[u] += g * z;
        let da_n = dn * (1.0 - n * n); // through tanh
        let dr = da_n * hn;
        let da_r = dr * r * (1.0 - r);
        let da_z = dz * z * (1.0 - z);

        // r row u, z row hidden+u, n row 2*hidden+u
        let rows = [(u, da_r), (hidden + u, da_z), (2 * hidden + u, da_n)];
        for (row, da) in rows {
            db_ih[row] += da;
            axpy(da, x, &mut dw_ih[row * i_dim..(row + 1) * i_dim]);
            axpy(da, &w_ih[row * i_dim..(row + 1) * i_dim], dx);
        }
        // hidden-side: r and z rows see h directly; the n row goes through
        // the r gate (d(ah_n) = da_n * r)
        for (row, da) in [(u, da_r), (hidden + u, da_z), (2 * hidden + u, da_n * r)] {
            db_hh[row] += da;
            axpy(da, h, &mut dw_hh[row * hidden..(row + 1) * hidden]);
            axpy(da, &w_hh[row * hidden..(row + 1) * hidden], dh);
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct LstmCache {
    pub i: Vec<f32>,
    pub f: Vec<f32>,
    pub g: Vec<f32>,
    pub o: Vec<f32>,
    pub c_new: Vec<f32>,
    pub tanh_c: Vec<f32>,
}

/// c' = f*c + i*g; h' = o * tanh(c')
#[allow(clippy::too_many_arguments)]
pub fn lstm_forward(
    hidden: usize,
    w_ih: &[f32],
    w_hh: &[f32],
    b_ih: &[f32],
    b_hh: &[f32],
    x: &[f32],
    h: &[f32],
    c: &[f32],
    h_new: &mut [f32],
    c_new: &mut [f32],
    cache: Option<&mut LstmCache>,
) {
    let i_dim = x.len();
    let gate = |w: &[f32], b: &[f32], row: usize, v: &[f32], d: usize| -> f32 {
        b[row] + dot(&w[row * d..(row + 1) * d], v)
    };
    let mut gi = vec![0.0f32; hidden];
    let mut gf = vec![0.0f32; hidden];
    let mut gg = vec![0.0f32; hidden];
    let mut go = vec![0.0f32; hidden];
    let mut tc = vec![0.0f32; hidden];
    for u in 0..hidden {
        gi[u] = sigmoid(gate(w_ih, b_ih, u, x, i_dim) + gate(w_hh, b_hh, u, h, hidden));
        gf[u] = sigmoid(
            gate(w_ih, b_ih, hidden + u, x, i_dim) + gate(w_hh, b_hh, hidden + u, h, hidden),
        );
        gg[u] = (gate(w_ih, b_ih, 2 * hidden + u, x, i_dim)
            + gate(w_hh, b_hh, 2 * hidden + u, h, hidden))
        .tanh();
        go[u] = sigmoid(
            gate(w_ih, b_ih, 3 * hidden + u, x, i_dim)
                + gate(w_hh, b_hh, 3 * hidden + u, h, hidden),
        );
        c_new[u] = gf[u] * c[u] + gi[u] * gg[u];
        tc[u] = c_new[u].tanh();
        h_new[u] = go[u] * tc[u];
    }
    if let Some(cc) = cache {
        cc.i = gi;
        cc.f = gf;
        cc.g = gg;
        cc.o = go;
        cc.c_new = c_new.to_vec();
        cc.tanh_c = tc;
    }
}

#[allow(clippy::too_many_arguments)]
pub fn lstm_backward(
    hidden: usize,
    w_ih: &[f32],
    w_hh: &[f32],
    x: &[f32],
    h: &[f32],
    c: &[f32],
    cache: &LstmCache,
    dh_new: &[f32],
    dc_new_in: &[f32],
    dx: &mut [f32],
    dh: &mut [f32],
    dc: &mut [f32],
    dw_ih: &mut [f32],
    dw_hh: &mut [f32],
    db_ih: &mut [f32],
    db_hh: &mut [f32],
) {
    let i_dim = x.len();
    for u in 0..hidden {
        let (i, f, g, o) = (cache.i[u], cache.f[u], cache.g[u], cache.o[u]);
        let tc = cache.tanh_c[u];
        let dh_u = dh_new[u];
        let dct = dc_new_in[u] + dh_u * o * (1.0 - tc * tc);
        let do_ = dh_u * tc;
        let di = dct * g;
        let df = dct * c[u];
        let dg = dct * i;
        dc[u] += dct * f;
        let da = [
            (u, di * i * (1.0 - i)),
            (hidden + u, df * f * (1.0 - f)),
            (2 * hidden + u, dg * (1.0 - g * g)),
            (3 * hidden + u, do_ * o * (1.0 - o)),
        ];
        for (row, d) in da {
            db_ih[row] += d;
            db_hh[row] += d;
            axpy(d, x, &mut dw_ih[row * i_dim..(row + 1) * i_dim]);
            axpy(d, h, &mut dw_hh[row * hidden..(row + 1) * hidden]);
            axpy(d, &w_ih[row * i_dim..(row + 1) * i_dim], dx);
            axpy(d, &w_hh[row * hidden..(row + 1) * hidden], dh);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    /// Finite-difference check of the GRU step through a quadratic loss.
    #[test]
    fn gru_gradients_match_finite_differences() {
        let (i_dim, hidden) = (3usize, 4usize);
        let mut r = Stream::new(21);
        let w_ih: Vec<f32> = (0..3 * hidden * i_dim).map(|_| r.normal() * 0.4).collect();
        let w_hh: Vec<f32> = (0..3 * hidden * hidden).map(|_| r.normal() * 0.4).collect();
        let b_ih: Vec<f32> = (0..3 * hidden).map(|_| r.normal() * 0.1).collect();
        let b_hh: Vec<f32> = (0..3 * hidden).map(|_| r.normal() * 0.1).collect();
        let x: Vec<f32> = (0..i_dim).map(|_| r.normal()).collect();
        let h: Vec<f32> = (0..hidden).map(|_| r.normal()).collect();
        let coef: Vec<f32> = (0..hidden).map(|_| r.normal()).collect();

        let loss = |w_ih: &[f32], w_hh: &[f32], b_ih: &[f32], b_hh: &[f32], x: &[f32], h: &[f32]| {
            let mut h_new = vec![0.0f32; hidden];
            gru_forward(hidden, w_ih, w_hh, b_ih, b_hh, x, h, &mut h_new, None);
            h_new.iter().zip(&coef).map(|(v, c)| v * c).sum::<f32>()
        };

        let mut cache = GruCache::default();
        let mut h_new = vec![0.0f32; hidden];
        gru_forward(hidden, &w_ih, &w_hh, &b_ih, &b_hh, &x, &h, &mut h_new, Some(&mut cache));
        let (mut dx, mut dh) = (vec![0.0f32; i_dim], vec![0.0f32; hidden]);
        let mut dw_ih = vec![0.0f32; w_ih.len()];
        let mut dw_hh = vec![0.0f32; w_hh.len()];
        let mut db_ih = vec![0.0f32; b_ih.len()];
        let mut db_hh = vec![0.0f32; b_hh.len()];
        gru_backward(
            hidden, &w_ih, &w_hh, &x, &h, &cache, &coef, &mut dx, &mut dh, &mut dw_ih,
            &mut dw_hh, &mut db_ih, &mut db_hh,
        );

        let eps = 1e-2f32;
        let check = |analytic: f32, mut plus: Box<dyn FnMut(f32) -> f32>| {
            let num = (plus(eps) - plus(-eps)) / (2.0 * eps);
            let denom = analytic.abs().max(num.abs()).max(1e-2);
            assert!(
                (analytic - num).abs() / denom < 1e-3,
                "analytic {analytic} vs numeric {num}"
            );
        };
        for k in [0usize, 5, 11, w_ih.len() - 1] {
            let (w_ihc, w_hhc, b_ihc, b_hhc, xc, hc) =
                (w_ih.clone(), w_hh.clone(), b_ih.clone(), b_hh.clone(), x.clone(), h.clone());
            check(
                dw_ih[k],
                Box::new(move |e| {
                    let mut w2 = w_ihc.clone();
                    w2[k] += e;
                    loss(&w2, &w_hhc, &b_ihc, &b_hhc, &xc, &hc)
                }),
            );
        }
        for k in [0usize, 7, w_hh.len() - 1] {
            let (w_ihc, w_hhc, b_ihc, b_hhc, xc, hc) =
                (w_ih.clone(), w_hh.clone(), b_ih.clone(), b_hh.clone(), x.clone(), h.clone());
            check(
                dw_hh[k],
                Box::new(move |e| {
                    let mut w2 = w_hhc.clone();
                    w2[k] += e;
                    loss(&w_ihc, &w2, &b_ihc, &b_hhc, &xc, &hc)
                }),
            );
        }
        for k in 0..i_dim {
            let (w_ihc, w_hhc, b_ihc, b_hhc, xc, hc) =
                (w_ih.clone(), w_hh.clone(), b_ih.clone(), b_hh.clone(), x.clone(), h.clone());
            check(
                dx[k],
                Box::new(move |e| {
                    let mut x2 = xc.clone();
                    x2[k] += e;
                    loss(&w_ihc, &w_hhc, &b_ihc, &b_hhc, &x2, &hc)
                }),
            );
        }
        for k in 0..hidden {
            let (w_ihc, w_hhc, b_ihc, b_hhc, xc, hc) =
                (w_ih.clone(), w_hh.clone(), b_ih.clone(), b_hh.clone(), x.clone(), h.clone());
            check(
                dh[k],
                Box::new(move |e| {
                    let mut h2 = hc.clone();
                    h2[k] += e;
                    loss(&w_ihc, &w_hhc, &b_ihc, &b_hhc, &xc, &h2)
                }),
            );
        }
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        let (i_dim, hidden) = (3usize, 3usize);
        let mut r = Stream::new(33);
        let w_ih: Vec<f32> = (0..4 * hidden * i_dim).map(|_| r.normal() * 0.4).collect();
        let w_hh: Vec<f32> = (0..4 * hidden * hidden).map(|_| r.normal() * 0.4).collect();
        let b_ih: Vec<f32> = (0..4 * hidden).map(|_| r.normal() * 0.1).collect();
        let b_hh: Vec<f32> = vec![0.0; 4 * hidden];
        let x: Vec<f32> = (0..i_dim).map(|_| r.normal()).collect();
        let h: Vec<f32> = (0..hidden).map(|_| r.normal()).collect();
        let c: Vec<f32> = (0..hidden).map(|_| r.normal()).collect();
        let coef: Vec<f32> = (0..hidden).map(|_| r.normal()).collect();

        let loss = |w_ih: &[f32], x: &[f32], h: &[f32], c: &[f32]| {
            let mut hn = vec![0.0f32; hidden];
            let mut cn = vec![0.0f32; hidden];
            lstm_forward(hidden, w_ih, &w_hh, &b_ih, &b_hh, x, h, c, &mut hn, &mut cn, None);
            hn.iter().zip(&coef).map(|(v, k)| v * k).sum::<f32>()
        };

        let mut cache = LstmCache::default();
        let mut hn = vec![0.0f32; hidden];
        let mut cn = vec![0.0f32; hidden];
        lstm_forward(
            hidden, &w_ih, &w_hh, &b_ih, &b_hh, &x, &h, &c, &mut hn, &mut cn, Some(&mut cache),
        );
        let mut dx = vec![0.0f32; i_dim];
        let mut dh = vec![0.0f32; hidden];
        let mut dc = vec![0.0f32; hidden];
        let mut dw_ih = vec![0.0f32; w_ih.len()];
        let mut dw_hh = vec![0.0f32; w_hh.len()];
        let mut db_ih = vec![0.0f32; b_ih.len()];
        let mut db_hh = vec![0.0f32; b_hh.len()];
        let dc_new = vec![0.0f32; hidden];
        lstm_backward(
            hidden, &w_ih, &w_hh, &x, &h, &c, &cache, &coef, &dc_new, &mut dx, &mut dh, &mut dc,
            &mut dw_ih, &mut dw_hh, &mut db_ih, &mut db_hh,
        );

        let eps = 1e-2f32;
        let rel = |a: f32, n: f32| (a - n).abs() / a.abs().max(n.abs()).max(1e-2);
        for k in [0usize, 4, w_ih.len() - 1] {
            let mut wp = w_ih.clone();
            wp[k] += eps;
            let mut wm = w_ih.clone();
            wm[k] -= eps;
            let num = (loss(&wp, &x, &h, &c) - loss(&wm, &x, &h, &c)) / (2.0 * eps);
            assert!(rel(dw_ih[k], num) < 1e-3, "dw_ih[{k}]: {} vs {num}", dw_ih[k]);
        }
        for k in 0..hidden {
            let mut cp = c.clone();
            cp[k] += eps;
            let mut cm = c.clone();
            cm[k] -= eps;
            let num = (loss(&w_ih, &x, &h, &cp) - loss(&w_ih, &x, &h, &cm)) / (2.0 * eps);
            assert!(rel(dc[k], num) < 1e-3, "dc[{k}]: {} vs {num}", dc[k]);
        }
    }
}
