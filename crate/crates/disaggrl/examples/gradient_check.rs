//! Central finite differences against the analytic gradients of every layer
//! type, printing the worst relative error per layer.

use disaggrl::nn::layers::{
    conv_backward, conv_forward, layernorm_backward, layernorm_forward, relu_backward,
    relu_forward, tanh_backward, tanh_forward, ConvShape,
};
use disaggrl::nn::linalg::{linear_backward, linear_forward};
use disaggrl::nn::rnn::{gru_backward, gru_forward, GruCache};
use disaggrl::rng::Stream;

/// Worst relative error between an analytic gradient and central finite
/// differences of `loss` over `params`.
fn check(
    params: &[f32],
    analytic: &[f32],
    loss: &mut dyn FnMut(&[f32]) -> f32,
    probes: usize,
) -> f32 {
    let h = 1e-3f32;
    let mut worst = 0.0f32;
    for k in 0..probes.min(params.len()) {
        let idx = k * params.len() / probes.min(params.len()).max(1);
        let mut p = params.to_vec();
        p[idx] += h;
        let up = loss(&p);
        p[idx] -= 2.0 * h;
        let down = loss(&p);
        let num = (up - down) / (2.0 * h);
        let denom = analytic[idx].abs().max(num.abs()).max(1e-2);
        worst = worst.max((analytic[idx] - num).abs() / denom);
    }
    worst
}

fn main() {
    let mut r = Stream::new(2024);

    // linear
    let (i_dim, o_dim) = (6usize, 4usize);
    let w: Vec<f32> = (0..o_dim * i_dim).map(|_| r.normal() * 0.5).collect();
    let b: Vec<f32> = (0..o_dim).map(|_| r.normal() * 0.1).collect();
    let x: Vec<f32> = (0..i_dim).map(|_| r.normal()).collect();
    let coef: Vec<f32> = (0..o_dim).map(|_| r.normal()).collect();
    let mut dw = vec![0.0f32; w.len()];
    let mut db = vec![0.0f32; b.len()];
    let mut dx = vec![0.0f32; x.len()];
    linear_backward(&w, &x, &coef, Some(&mut dx), &mut dw, &mut db);
    let (bb, xx, cc) = (b.clone(), x.clone(), coef.clone());
    let worst = check(&w, &dw, &mut |wp| {
        let mut y = vec![0.0f32; o_dim];
        linear_forward(wp, &bb, &xx, &mut y);
        y.iter().zip(&cc).map(|(a, c)| a * c).sum()
    }, 12);
    println!("linear     dW worst rel err: {worst:.2e}");

    // conv
    let s = ConvShape::new(2, 3, 9, 9);
    let w: Vec<f32> = (0..s.weight_len()).map(|_| r.normal() * 0.4).collect();
    let b: Vec<f32> = (0..s.co).map(|_| r.normal() * 0.1).collect();
    let x: Vec<f32> = (0..s.in_len()).map(|_| r.normal()).collect();
    let coef: Vec<f32> = (0..s.out_len()).map(|_| r.normal()).collect();
    let mut dw = vec![0.0f32; w.len()];
    let mut db = vec![0.0f32; b.len()];
    let mut dx = vec![0.0f32; x.len()];
    conv_backward(&s, &w, &x, &coef, Some(&mut dx), &mut dw, &mut db);
    let (bb, xx, cc) = (b.clone(), x.clone(), coef.clone());
    let worst = check(&w, &dw, &mut |wp| {
        let mut y = vec![0.0f32; s.out_len()];
        conv_forward(&s, wp, &bb, &xx, &mut y);
        y.iter().zip(&cc).map(|(a, c)| a * c).sum()
    }, 12);
    println!("conv       dW worst rel err: {worst:.2e}");

    // layer norm (gradient w.r.t. its input)
    let f = 32usize;
    let x: Vec<f32> = (0..f).map(|_| r.normal() * 2.0 + 1.0).collect();
    let gamma: Vec<f32> = (0..f).map(|_| 1.0 + 0.2 * r.normal()).collect();
    let beta: Vec<f32> = (0..f).map(|_| 0.1 * r.normal()).collect();
    let coef: Vec<f32> = (0..f).map(|_| r.normal()).collect();
    let mut xhat = vec![0.0f32; f];
    let mut y = vec![0.0f32; f];
    let inv_std = layernorm_forward(&x, &gamma, &beta, &mut xhat, &mut y);
    let mut dx = vec![0.0f32; f];
    let mut dgamma = vec![0.0f32; f];
    let mut dbeta = vec![0.0f32; f];
    layernorm_backward(&coef, &gamma, &xhat, inv_std, &mut dx, &mut dgamma, &mut dbeta);
    let (gg, be, cc) = (gamma.clone(), beta.clone(), coef.clone());
    let worst = check(&x, &dx, &mut |xp| {
        let mut xh = vec![0.0f32; f];
        let mut yy = vec![0.0f32; f];
        layernorm_forward(xp, &gg, &be, &mut xh, &mut yy);
        yy.iter().zip(&cc).map(|(a, c)| a * c).sum()
    }, 16);
    println!("layernorm  dX worst rel err: {worst:.2e}");

    // relu / tanh (gradient w.r.t. input, away from the relu kink)
    let x: Vec<f32> = (0..16).map(|_| r.normal() + 0.3).collect();
    let coef: Vec<f32> = (0..16).map(|_| r.normal()).collect();
    let mut y = x.clone();
    relu_forward(&mut y);
    let mut dx = coef.clone();
    relu_backward(&y, &mut dx);
    let cc = coef.clone();
    let worst = check(&x, &dx, &mut |xp| {
        let mut yy = xp.to_vec();
        relu_forward(&mut yy);
        yy.iter().zip(&cc).map(|(a, c)| a * c).sum()
    }, 16);
    println!("relu       dX worst rel err: {worst:.2e}");

    let mut y = x.clone();
    tanh_forward(&mut y);
    let mut dx = coef.clone();
    tanh_backward(&y, &mut dx);
    let cc = coef.clone();
    let worst = check(&x, &dx, &mut |xp| {
        let mut yy = xp.to_vec();
        tanh_forward(&mut yy);
        yy.iter().zip(&cc).map(|(a, c)| a * c).sum()
    }, 16);
    println!("tanh       dX worst rel err: {worst:.2e}");

    // gru cell
    let (i_dim, hid) = (4usize, 5usize);
    let w_ih: Vec<f32> = (0..3 * hid * i_dim).map(|_| r.normal() * 0.4).collect();
    let w_hh: Vec<f32> = (0..3 * hid * hid).map(|_| r.normal() * 0.4).collect();
    let b_ih = vec![0.0f32; 3 * hid];
    let b_hh = vec![0.0f32; 3 * hid];
    let x: Vec<f32> = (0..i_dim).map(|_| r.normal()).collect();
    let hprev: Vec<f32> = (0..hid).map(|_| r.normal()).collect();
    let coef: Vec<f32> = (0..hid).map(|_| r.normal()).collect();
    let mut cache = GruCache::default();
    let mut h_new = vec![0.0f32; hid];
    gru_forward(hid, &w_ih, &w_hh, &b_ih, &b_hh, &x, &hprev, &mut h_new, Some(&mut cache));
    let mut dxv = vec![0.0f32; i_dim];
    let mut dh = vec![0.0f32; hid];
    let mut dw_ih = vec![0.0f32; w_ih.len()];
    let mut dw_hh = vec![0.0f32; w_hh.len()];
    let mut db_ih = vec![0.0f32; b_ih.len()];
    let mut db_hh = vec![0.0f32; b_hh.len()];
    gru_backward(
        hid, &w_ih, &w_hh, &x, &hprev, &cache, &coef, &mut dxv, &mut dh, &mut dw_ih, &mut dw_hh,
        &mut db_ih, &mut db_hh,
    );
    let (whh, bih, bhh, xx, hh, cc) =
        (w_hh.clone(), b_ih.clone(), b_hh.clone(), x.clone(), hprev.clone(), coef.clone());
    let worst = check(&w_ih, &dw_ih, &mut |wp| {
        let mut hn = vec![0.0f32; hid];
        gru_forward(hid, wp, &whh, &bih, &bhh, &xx, &hh, &mut hn, None);
        hn.iter().zip(&cc).map(|(a, c)| a * c).sum()
    }, 12);
    println!("gru        dW_ih worst rel err: {worst:.2e}");

    println!("\nall layers check out against finite differences");
}
