//! The policy/value network: conv encoder -> embed -> concat proprio ->
//! trunk (feedforward or recurrent) -> heads.
//!
//! All parameters live in one flat `Vec<f32>`; `ParamDesc` records give each
//! tensor's name, shape, and offset in a fixed order (conv stack, embed,
//! trunk, mean head, log_std, value head, aux head). Checkpoints, Adam, the
//! DP gradient exchange, and checksums all operate on the flat view.
//!
//! Forward/backward run per sample with fixed reduction order, so outputs
//! are bit-identical regardless of how samples are batched.

use serde::{Deserialize, Serialize};

use crate::tensor::debug_assert_finite;

use super::layers::{
    conv_backward_col, conv_forward_col, layernorm_backward, layernorm_forward, relu_backward,
    relu_forward, ConvShape,
};
use super::linalg::{linear_backward, linear_forward};
use super::rnn::{gru_backward, gru_forward, lstm_backward, lstm_forward, GruCache, LstmCache};
use super::NnError;

pub const LOG_STD_MIN: f32 = -5.0;
pub const LOG_STD_MAX: f32 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum InputKind {
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
    Vector {
        dim: usize,
    },
}

impl InputKind {
    pub fn dim(&self) -> usize {
        match *self {
            InputKind::Image {
                channels,
                height,
                width,
            } => channels * height * width,
            InputKind::Vector { dim } => dim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum TrunkConfig {
    Feedforward {
        hidden: Vec<usize>,
    },
    Recurrent {
        cell: CellKind,
        layers: usize,
        hidden: usize,
        mlp: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input: InputKind,
    pub proprio_dim: usize,
    pub action_dim: usize,
    /// Conv filter counts (image inputs only). Preset `[16, 32, 64, 128]`.
    pub conv_filters: Vec<usize>,
    pub embed_dim: usize,
    pub trunk: TrunkConfig,
    pub aux_head: bool,
    pub init_log_std: f32,
}

impl NetConfig {
    /// Full-size preset: filters [16,32,64,128], embed 32, two recurrent
    /// layers of 1024, MLP [512,512,256].
    pub fn paper_preset(input: InputKind, proprio_dim: usize, action_dim: usize) -> Self {
        Self {
            input,
            proprio_dim,
            action_dim,
            conv_filters: vec![16, 32, 64, 128],
            embed_dim: 32,
            trunk: TrunkConfig::Recurrent {
                cell: CellKind::Lstm,
                layers: 2,
                hidden: 1024,
                mlp: vec![512, 512, 256],
            },
            aux_head: false,
            init_log_std: -0.5,
        }
    }

    /// Small feedforward preset for CPU-scale training.
    pub fn desk_preset(input: InputKind, proprio_dim: usize, action_dim: usize) -> Self {
        Self {
            input,
            proprio_dim,
            action_dim,
            conv_filters: vec![8, 16, 16, 32],
            embed_dim: 32,
            trunk: TrunkConfig::Feedforward {
                hidden: vec![64, 64],
            },
            aux_head: false,
            init_log_std: -0.5,
        }
    }

    fn validate(&self) -> Result<(), NnError> {
        if self.action_dim == 0 || self.proprio_dim == 0 {
            return Err(NnError::Config("zero action or proprio dim".into()));
        }
        match self.input {
            InputKind::Image { height, width, .. } => {
                if self.conv_filters.len() != 4 {
                    return Err(NnError::Config(format!(
                        "conv stack must have 4 layers, got {}",
                        self.conv_filters.len()
                    )));
                }
                if height < 8 || width < 8 {
                    return Err(NnError::Config(format!(
                        "image {height}x{width} too small for the 4-layer stride-2 stack"
                    )));
                }
            }
            InputKind::Vector { dim } => {
                if dim == 0 {
                    return Err(NnError::Config("zero input dim".into()));
                }
            }
        }
        if let TrunkConfig::Recurrent { layers, hidden, .. } = &self.trunk {
            if *layers == 0 || *hidden == 0 {
                return Err(NnError::Config(
                    "recurrent trunk needs layers/hidden > 0".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamDesc {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Batched network input; `primary` is the image or state vector block.
pub struct ObsInput<'a> {
    pub n: usize,
    pub primary: &'a [f32],
    pub proprio: &'a [f32],
}

#[derive(Clone, Debug)]
pub struct FwdOut {
    pub mean: Vec<f32>,
    /// Clamped state-independent log-std, one entry per action dim.
    pub log_std: Vec<f32>,
    pub value: Vec<f32>,
    pub aux: Option<Vec<f32>>,
    pub hidden: Option<Vec<f32>>,
}

/// Upstream gradients at the heads for one batch.
pub struct HeadGrads<'a> {
    pub d_mean: &'a [f32],
    pub d_log_std: &'a [f32],
    pub d_value: &'a [f32],
    pub d_aux: Option<&'a [f32]>,
}

#[derive(Clone, Debug, Default)]
struct RnnLayerCache {
    h_in: Vec<f32>,
    c_in: Vec<f32>,
    gru: Vec<GruCache>,
    lstm: Vec<LstmCache>,
    out: Vec<f32>,
}

/// Cached activations from one forward pass (one time slice).
#[derive(Clone, Debug, Default)]
pub struct FwdCache {
    n: usize,
    x0: Vec<f32>,
    conv_out: Vec<Vec<f32>>,
    conv_xhat: Vec<Vec<f32>>,
    conv_inv_std: Vec<Vec<f32>>,
    trunk_in: Vec<f32>,
    ff_out: Vec<Vec<f32>>,
    rnn: Vec<RnnLayerCache>,
    trunk_out: Vec<f32>,
}

pub struct PolicyNet {
    pub cfg: NetConfig,
    params: Vec<f32>,
    descs: Vec<ParamDesc>,
    conv_shapes: Vec<ConvShape>,
    embed_in: usize,
    trunk_dims: Vec<usize>,
    trunk_out_dim: usize,
}

fn find(descs: &[ParamDesc], name: &str) -> usize {
    descs
        .iter()
        .position(|d| d.name == name)
        .unwrap_or_else(|| panic!("no param named {name}"))
}

impl PolicyNet {
    pub fn new(cfg: NetConfig, seed: u64) -> Result<Self, NnError> {
        cfg.validate()?;
        let mut descs = Vec::new();
        let mut offset = 0usize;
        let mut push = |name: String, shape: Vec<usize>| {
            let len: usize = shape.iter().product();
            descs.push(ParamDesc {
                name,
                shape,
                offset,
                len,
            });
            offset += len;
        };

        let mut conv_shapes = Vec::new();
        let embed_in = match cfg.input {
            InputKind::Image {
                channels,
                height,
                width,
            } => {
                let mut ci = channels;
                let (mut h, mut w) = (height, width);
                for (l, &co) in cfg.conv_filters.iter().enumerate() {
                    let s = ConvShape::new(ci, co, h, w);
                    push(format!("conv{l}.weight"), vec![co, ci, 3, 3]);
                    push(format!("conv{l}.bias"), vec![co]);
                    push(format!("conv{l}.ln_gamma"), vec![s.out_len()]);
                    push(format!("conv{l}.ln_beta"), vec![s.out_len()]);
                    ci = co;
                    h = s.h_out;
                    w = s.w_out;
                    conv_shapes.push(s);
                }
                conv_shapes.last().unwrap().out_len()
            }
            InputKind::Vector { dim } => dim,
        };
        push("embed.weight".into(), vec![cfg.embed_dim, embed_in]);
        push("embed.bias".into(), vec![cfg.embed_dim]);

        let trunk_in = cfg.embed_dim + cfg.proprio_dim;
        let mut trunk_dims = vec![trunk_in];
        match &cfg.trunk {
            TrunkConfig::Feedforward { hidden } => {
                let mut cur = trunk_in;
                for (i, &hdim) in hidden.iter().enumerate() {
                    push(format!("trunk{i}.weight"), vec![hdim, cur]);
                    push(format!("trunk{i}.bias"), vec![hdim]);
                    cur = hdim;
                    trunk_dims.push(cur);
                }
            }
            TrunkConfig::Recurrent {
                cell,
                layers,
                hidden,
                mlp,
            } => {
                let gates = match cell {
                    CellKind::Gru => 3,
                    CellKind::Lstm => 4,
                };
                let mut cur = trunk_in;
                for l in 0..*layers {
                    push(format!("cell{l}.w_ih"), vec![gates * hidden, cur]);
                    push(format!("cell{l}.w_hh"), vec![gates * hidden, *hidden]);
                    push(format!("cell{l}.b_ih"), vec![gates * hidden]);
                    push(format!("cell{l}.b_hh"), vec![gates * hidden]);
                    cur = *hidden;
                    trunk_dims.push(cur);
                }
                for (i, &hdim) in mlp.iter().enumerate() {
                    push(format!("mlp{i}.weight"), vec![hdim, cur]);
                    push(format!("mlp{i}.bias"), vec![hdim]);
                    cur = hdim;
                    trunk_dims.push(cur);
                }
            }
        }
        let trunk_out_dim = *trunk_dims.last().unwrap();

        push("mean.weight".into(), vec![cfg.action_dim, trunk_out_dim]);
        push("mean.bias".into(), vec![cfg.action_dim]);
        push("log_std".into(), vec![cfg.action_dim]);
        push("value.weight".into(), vec![1, trunk_out_dim]);
        push("value.bias".into(), vec![1]);
        if cfg.aux_head {
            push("aux.weight".into(), vec![2, trunk_out_dim]);
            push("aux.bias".into(), vec![2]);
        }

        let total = offset;
        let mut net = Self {
            cfg,
            params: vec![0.0; total],
            descs,
            conv_shapes,
            embed_in,
            trunk_dims,
            trunk_out_dim,
        };
        net.init_weights(seed);
        Ok(net)
    }

    /// Build a net around existing flat parameters (checkpoint load).
    pub fn from_flat(cfg: NetConfig, params: Vec<f32>) -> Result<Self, NnError> {
        let mut net = Self::new(cfg, 0)?;
        if params.len() != net.params.len() {
            return Err(NnError::Checkpoint(format!(
                "parameter count {} does not match config ({})",
                params.len(),
                net.params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    fn init_weights(&mut self, seed: u64) {
        use crate::rng::Stream;
        for di in 0..self.descs.len() {
            let d = self.descs[di].clone();
            let mut stream = Stream::from_parts(&[seed, 0x1217, di as u64]);
            let slice = &mut self.params[d.offset..d.offset + d.len];
            let name = d.name.as_str();
            if name.ends_with(".bias")
                || name.ends_with(".ln_beta")
                || name.ends_with(".b_ih")
                || name.ends_with(".b_hh")
            {
                slice.fill(0.0);
            } else if name.ends_with(".ln_gamma") {
                slice.fill(1.0);
            } else if name == "log_std" {
                slice.fill(self.cfg.init_log_std);
            } else if name.ends_with(".w_ih") || name.ends_with(".w_hh") {
                // per-gate-block orthogonal, gain 1
                let rows = d.shape[0];
                let cols = d.shape[1];
                let hidden = match self.cfg.trunk {
                    TrunkConfig::Recurrent { hidden, .. } => hidden,
                    _ => unreachable!(),
                };
                let blocks = rows / hidden;
                for b in 0..blocks {
                    orthogonal_into(
                        &mut stream,
                        hidden,
                        cols,
                        1.0,
                        &mut slice[b * hidden * cols..(b + 1) * hidden * cols],
                    );
                }
            } else if name == "mean.weight" {
                orthogonal_into(&mut stream, d.shape[0], d.shape[1], 0.01, slice);
            } else if name.ends_with(".weight") {
                let rows = d.shape[0];
                let cols: usize = d.shape[1..].iter().product();
                orthogonal_into(&mut stream, rows, cols, std::f64::consts::SQRT_2, slice);
            } else {
                slice.fill(0.0);
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn descs(&self) -> &[ParamDesc] {
        &self.descs
    }

    pub fn param_named(&self, name: &str) -> &[f32] {
        let d = &self.descs[find(&self.descs, name)];
        &self.params[d.offset..d.offset + d.len]
    }

    /// FNV-1a over the little-endian parameter bytes.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for v in &self.params {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01B3);
            }
        }
        h
    }

    pub fn is_recurrent(&self) -> bool {
        matches!(self.cfg.trunk, TrunkConfig::Recurrent { .. })
    }

    /// Flat hidden size per sample (0 for feedforward trunks).
    pub fn hidden_dim(&self) -> usize {
        match &self.cfg.trunk {
            TrunkConfig::Feedforward { .. } => 0,
            TrunkConfig::Recurrent {
                cell,
                layers,
                hidden,
                ..
            } => {
                let per = match cell {
                    CellKind::Gru => *hidden,
                    CellKind::Lstm => 2 * *hidden,
                };
                layers * per
            }
        }
    }

    pub fn zero_hidden(&self, n: usize) -> Vec<f32> {
        vec![0.0; n * self.hidden_dim()]
    }

    fn p(&self, name: &str) -> &[f32] {
        self.param_named(name)
    }

    /// Disjoint mutable views into a flat gradient buffer, one per named
    /// parameter. Descriptors never overlap, so the raw splits are sound.
    fn grad_many<'g, const K: usize>(
        &self,
        grads: &'g mut [f32],
        names: [&str; K],
    ) -> [&'g mut [f32]; K] {
        for i in 0..K {
            for j in i + 1..K {
                debug_assert_ne!(names[i], names[j], "grad_many requires distinct names");
            }
        }
        let ptr = grads.as_mut_ptr();
        let len = grads.len();
        names.map(|name| {
            let d = &self.descs[find(&self.descs, name)];
            assert!(d.offset + d.len <= len);
            unsafe { std::slice::from_raw_parts_mut(ptr.add(d.offset), d.len) }
        })
    }

    /// Forward one batch (one time slice for recurrent trunks).
    pub fn forward(
        &self,
        input: &ObsInput,
        hidden: Option<&[f32]>,
        mut cache: Option<&mut FwdCache>,
    ) -> Result<FwdOut, NnError> {
        let n = input.n;
        let in_dim = self.cfg.input.dim();
        if input.primary.len() != n * in_dim {
            return Err(NnError::Shape {
                layer: "input.primary".into(),
                want: format!("{} ({n} x {in_dim})", n * in_dim),
                got: format!("{}", input.primary.len()),
            });
        }
        if input.proprio.len() != n * self.cfg.proprio_dim {
            return Err(NnError::Shape {
                layer: "input.proprio".into(),
                want: format!("{}", n * self.cfg.proprio_dim),
                got: format!("{}", input.proprio.len()),
            });
        }
        if self.is_recurrent() {
            let want = n * self.hidden_dim();
            let got = hidden.map(|h| h.len()).unwrap_or(0);
            if got != want {
                return Err(NnError::Shape {
                    layer: "hidden".into(),
                    want: format!("{want}"),
                    got: format!("{got}"),
                });
            }
        }

        let e = self.cfg.embed_dim;
        let p_dim = self.cfg.proprio_dim;
        let trunk_in_dim = self.trunk_dims[0];
        let mut trunk_in = vec![0.0f32; n * trunk_in_dim];

        // encoder
        let embed_w = self.p("embed.weight");
        let embed_b = self.p("embed.bias");
        match self.cfg.input {
            InputKind::Vector { dim } => {
                if let Some(c) = cache.as_deref_mut() {
                    c.n = n;
                    c.x0 = input.primary.to_vec();
                    c.conv_out.clear();
                    c.conv_xhat.clear();
                    c.conv_inv_std.clear();
                }
                for s in 0..n {
                    linear_forward(
                        embed_w,
                        embed_b,
                        &input.primary[s * dim..(s + 1) * dim],
                        &mut trunk_in[s * trunk_in_dim..s * trunk_in_dim + e],
                    );
                }
            }
            InputKind::Image { .. } => {
                let last_f = self.embed_in;
                match cache.as_deref_mut() {
                    Some(c) => {
                        c.n = n;
                        c.x0 = input.primary.to_vec();
                        c.conv_out = self
                            .conv_shapes
                            .iter()
                            .map(|s| vec![0.0; n * s.out_len()])
                            .collect();
                        c.conv_xhat = self
                            .conv_shapes
                            .iter()
                            .map(|s| vec![0.0; n * s.out_len()])
                            .collect();
                        c.conv_inv_std =
                            self.conv_shapes.iter().map(|_| vec![0.0; n]).collect();
                        let mut z = vec![0.0f32; self.max_conv_len()];
                        let mut col = vec![0.0f32; self.max_col_len()];
                        for l in 0..self.conv_shapes.len() {
                            let shape = self.conv_shapes[l];
                            let f = shape.out_len();
                            let kcol = shape.col_len();
                            let w = self.p(&format!("conv{l}.weight"));
                            let b = self.p(&format!("conv{l}.bias"));
                            let gam = self.p(&format!("conv{l}.ln_gamma"));
                            let bet = self.p(&format!("conv{l}.ln_beta"));
                            let (prev, cur_blocks) = c.conv_out.split_at_mut(l);
                            let input_block: &[f32] =
                                if l == 0 { &c.x0 } else { &prev[l - 1] };
                            let out_block = &mut cur_blocks[0];
                            let in_len = shape.in_len();
                            for s in 0..n {
                                conv_forward_col(
                                    &shape,
                                    w,
                                    b,
                                    &input_block[s * in_len..(s + 1) * in_len],
                                    &mut z[..f],
                                    &mut col[..kcol],
                                );
                                let xhat = &mut c.conv_xhat[l][s * f..(s + 1) * f];
                                let out = &mut out_block[s * f..(s + 1) * f];
                                c.conv_inv_std[l][s] =
                                    layernorm_forward(&z[..f], gam, bet, xhat, out);
                                relu_forward(out);
                            }
                        }
                        for s in 0..n {
                            linear_forward(
                                embed_w,
                                embed_b,
                                &c.conv_out[self.conv_shapes.len() - 1]
                                    [s * last_f..(s + 1) * last_f],
                                &mut trunk_in[s * trunk_in_dim..s * trunk_in_dim + e],
                            );
                        }
                    }
                    None => {
                        let maxf = self.max_conv_len();
                        let mut a = input.primary.to_vec();
                        let mut b_buf = vec![0.0f32; n * maxf];
                        let mut z = vec![0.0f32; maxf];
                        let mut xhat = vec![0.0f32; maxf];
                        let mut col = vec![0.0f32; self.max_col_len()];
                        for (l, shape) in self.conv_shapes.iter().enumerate() {
                            let f = shape.out_len();
                            let kcol = shape.col_len();
                            let w = self.p(&format!("conv{l}.weight"));
                            let bb = self.p(&format!("conv{l}.bias"));
                            let gam = self.p(&format!("conv{l}.ln_gamma"));
                            let bet = self.p(&format!("conv{l}.ln_beta"));
                            let in_len = shape.in_len();
                            for s in 0..n {
                                conv_forward_col(
                                    shape,
                                    w,
                                    bb,
                                    &a[s * in_len..(s + 1) * in_len],
                                    &mut z[..f],
                                    &mut col[..kcol],
                                );
                                let out = &mut b_buf[s * f..(s + 1) * f];
                                layernorm_forward(&z[..f], gam, bet, &mut xhat[..f], out);
                                relu_forward(out);
                            }
                            std::mem::swap(&mut a, &mut b_buf);
                            // `a` now holds n rows of length f (stride f)
                        }
                        for s in 0..n {
                            linear_forward(
                                embed_w,
                                embed_b,
                                &a[s * last_f..(s + 1) * last_f],
                                &mut trunk_in[s * trunk_in_dim..s * trunk_in_dim + e],
                            );
                        }
                    }
                }
            }
        }
        for s in 0..n {
            trunk_in[s * trunk_in_dim + e..(s + 1) * trunk_in_dim]
                .copy_from_slice(&input.proprio[s * p_dim..(s + 1) * p_dim]);
        }
        if let Some(c) = cache.as_deref_mut() {
            c.trunk_in = trunk_in.clone();
            c.ff_out.clear();
            c.rnn.clear();
        }

        // trunk
        let mut cur = trunk_in;
        let mut new_hidden: Option<Vec<f32>> = None;
        match &self.cfg.trunk {
            TrunkConfig::Feedforward { hidden: dims } => {
                for (i, &hdim) in dims.iter().enumerate() {
                    let w = self.p(&format!("trunk{i}.weight"));
                    let b = self.p(&format!("trunk{i}.bias"));
                    let in_d = cur.len() / n;
                    let mut out = vec![0.0f32; n * hdim];
                    for s in 0..n {
                        linear_forward(
                            w,
                            b,
                            &cur[s * in_d..(s + 1) * in_d],
                            &mut out[s * hdim..(s + 1) * hdim],
                        );
                    }
                    relu_forward(&mut out);
                    if let Some(c) = cache.as_deref_mut() {
                        c.ff_out.push(out.clone());
                    }
                    cur = out;
                }
            }
            TrunkConfig::Recurrent {
                cell,
                layers,
                hidden: hdim,
                mlp,
            } => {
                let h_in_all = hidden.expect("validated above");
                let hid_total = self.hidden_dim();
                let per_layer = hid_total / layers;
                let mut out_hidden = vec![0.0f32; n * hid_total];
                for l in 0..*layers {
                    let w_ih = self.p(&format!("cell{l}.w_ih"));
                    let w_hh = self.p(&format!("cell{l}.w_hh"));
                    let b_ih = self.p(&format!("cell{l}.b_ih"));
                    let b_hh = self.p(&format!("cell{l}.b_hh"));
                    let in_d = cur.len() / n;
                    let mut out = vec![0.0f32; n * hdim];
                    let mut layer_cache = RnnLayerCache {
                        h_in: vec![0.0; n * hdim],
                        c_in: vec![0.0; n * hdim],
                        gru: Vec::new(),
                        lstm: Vec::new(),
                        out: Vec::new(),
                    };
                    for s in 0..n {
                        let hrow = &h_in_all
                            [s * hid_total + l * per_layer..s * hid_total + l * per_layer + hdim];
                        layer_cache.h_in[s * hdim..(s + 1) * hdim].copy_from_slice(hrow);
                        match cell {
                            CellKind::Gru => {
                                let mut gc = GruCache::default();
                                gru_forward(
                                    *hdim,
                                    w_ih,
                                    w_hh,
                                    b_ih,
                                    b_hh,
                                    &cur[s * in_d..(s + 1) * in_d],
                                    hrow,
                                    &mut out[s * hdim..(s + 1) * hdim],
                                    Some(&mut gc),
                                );
                                if cache.is_some() {
                                    layer_cache.gru.push(gc);
                                }
                                out_hidden[s * hid_total + l * per_layer
                                    ..s * hid_total + l * per_layer + hdim]
                                    .copy_from_slice(&out[s * hdim..(s + 1) * hdim]);
                            }
                            CellKind::Lstm => {
                                let crow = &h_in_all[s * hid_total + l * per_layer + hdim
                                    ..s * hid_total + (l + 1) * per_layer];
                                layer_cache.c_in[s * hdim..(s + 1) * hdim]
                                    .copy_from_slice(crow);
                                let mut lc = LstmCache::default();
                                let mut c_new = vec![0.0f32; *hdim];
                                lstm_forward(
                                    *hdim,
                                    w_ih,
                                    w_hh,
                                    b_ih,
                                    b_hh,
                                    &cur[s * in_d..(s + 1) * in_d],
                                    hrow,
                                    crow,
                                    &mut out[s * hdim..(s + 1) * hdim],
                                    &mut c_new,
                                    Some(&mut lc),
                                );
                                if cache.is_some() {
                                    layer_cache.lstm.push(lc);
                                }
                                out_hidden[s * hid_total + l * per_layer
                                    ..s * hid_total + l * per_layer + hdim]
                                    .copy_from_slice(&out[s * hdim..(s + 1) * hdim]);
                                out_hidden[s * hid_total + l * per_layer + hdim
                                    ..s * hid_total + (l + 1) * per_layer]
                                    .copy_from_slice(&c_new);
                            }
                        }
                    }
                    if let Some(c) = cache.as_deref_mut() {
                        layer_cache.out = out.clone();
                        c.rnn.push(layer_cache);
                    }
                    cur = out;
                }
                new_hidden = Some(out_hidden);
                for (i, &hd) in mlp.iter().enumerate() {
                    let w = self.p(&format!("mlp{i}.weight"));
                    let b = self.p(&format!("mlp{i}.bias"));
                    let in_d = cur.len() / n;
                    let mut out = vec![0.0f32; n * hd];
                    for s in 0..n {
                        linear_forward(
                            w,
                            b,
                            &cur[s * in_d..(s + 1) * in_d],
                            &mut out[s * hd..(s + 1) * hd],
                        );
                    }
                    relu_forward(&mut out);
                    if let Some(c) = cache.as_deref_mut() {
                        c.ff_out.push(out.clone());
                    }
                    cur = out;
                }
            }
        }
        let trunk_out = cur;
        if let Some(c) = cache.as_deref_mut() {
            c.trunk_out = trunk_out.clone();
        }

        // heads
        let a_dim = self.cfg.action_dim;
        let t_dim = self.trunk_out_dim;
        let mut mean = vec![0.0f32; n * a_dim];
        let mut value = vec![0.0f32; n];
        let mut aux = self.cfg.aux_head.then(|| vec![0.0f32; n * 2]);
        let mean_w = self.p("mean.weight");
        let mean_b = self.p("mean.bias");
        let val_w = self.p("value.weight");
        let val_b = self.p("value.bias");
        for s in 0..n {
            let t = &trunk_out[s * t_dim..(s + 1) * t_dim];
            linear_forward(mean_w, mean_b, t, &mut mean[s * a_dim..(s + 1) * a_dim]);
            let mut v = [0.0f32];
            linear_forward(val_w, val_b, t, &mut v);
            value[s] = v[0];
            if let Some(aux_out) = aux.as_mut() {
                linear_forward(
                    self.p("aux.weight"),
                    self.p("aux.bias"),
                    t,
                    &mut aux_out[s * 2..(s + 1) * 2],
                );
            }
        }
        let log_std: Vec<f32> = self
            .p("log_std")
            .iter()
            .map(|&v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect();

        debug_assert_finite(&mean, "forward.mean");
        debug_assert_finite(&value, "forward.value");
        Ok(FwdOut {
            mean,
            log_std,
            value,
            aux,
            hidden: new_hidden,
        })
    }

    fn max_conv_len(&self) -> usize {
        self.conv_shapes
            .iter()
            .map(|s| s.out_len())
            .max()
            .unwrap_or(0)
            .max(self.cfg.input.dim())
    }

    fn max_col_len(&self) -> usize {
        self.conv_shapes.iter().map(|s| s.col_len()).max().unwrap_or(0)
    }

    /// Backward through one cached forward pass, accumulating into `grads`
    /// (flat, same layout as `params`). For recurrent trunks, `dh_next` is
    /// the gradient w.r.t. this step's output hidden and `dh_prev` receives
    /// the gradient w.r.t. the input hidden.
    pub fn backward(
        &self,
        cache: &FwdCache,
        heads: &HeadGrads,
        dh_next: Option<&[f32]>,
        mut dh_prev: Option<&mut [f32]>,
        grads: &mut [f32],
    ) -> Result<(), NnError> {
        let n = cache.n;
        if n == 0 || cache.trunk_out.len() != n * self.trunk_out_dim {
            return Err(NnError::Usage(
                "backward called without a matching cached forward pass".into(),
            ));
        }
        if grads.len() != self.params.len() {
            return Err(NnError::Usage(format!(
                "grad buffer length {} != param count {}",
                grads.len(),
                self.params.len()
            )));
        }
        let a_dim = self.cfg.action_dim;
        let t_dim = self.trunk_out_dim;

        // log_std: free parameter behind a clamp; gradient passes only where
        // the raw value is strictly inside the bounds.
        {
            let raw = self.p("log_std");
            let mask: Vec<bool> = raw
                .iter()
                .map(|&v| v > LOG_STD_MIN && v < LOG_STD_MAX)
                .collect();
            let [g] = self.grad_many(grads, ["log_std"]);
            for (k, gk) in g.iter_mut().enumerate() {
                if mask[k] {
                    *gk += heads.d_log_std[k];
                }
            }
        }

        // heads -> d(trunk_out)
        let mut d_trunk = vec![0.0f32; n * t_dim];
        {
            let mean_w = self.p("mean.weight");
            let val_w = self.p("value.weight");
            let [dw_mean, db_mean, dw_val, db_val] = self.grad_many(
                grads,
                ["mean.weight", "mean.bias", "value.weight", "value.bias"],
            );
            for s in 0..n {
                let t = &cache.trunk_out[s * t_dim..(s + 1) * t_dim];
                let dt = &mut d_trunk[s * t_dim..(s + 1) * t_dim];
                linear_backward(
                    mean_w,
                    t,
                    &heads.d_mean[s * a_dim..(s + 1) * a_dim],
                    Some(dt),
                    dw_mean,
                    db_mean,
                );
                linear_backward(val_w, t, &[heads.d_value[s]], Some(dt), dw_val, db_val);
            }
        }
        if let Some(d_aux) = heads.d_aux {
            if self.cfg.aux_head {
                let aux_w = self.p("aux.weight");
                let [dw_aux, db_aux] = self.grad_many(grads, ["aux.weight", "aux.bias"]);
                for s in 0..n {
                    let t = &cache.trunk_out[s * t_dim..(s + 1) * t_dim];
                    let dt = &mut d_trunk[s * t_dim..(s + 1) * t_dim];
                    linear_backward(
                        aux_w,
                        t,
                        &d_aux[s * 2..(s + 1) * 2],
                        Some(dt),
                        dw_aux,
                        db_aux,
                    );
                }
            }
        }

        // trunk backward -> d(trunk_in)
        let trunk_in_dim = self.trunk_dims[0];
        let mut d_cur = d_trunk;
        match &self.cfg.trunk {
            TrunkConfig::Feedforward { hidden: dims } => {
                for i in (0..dims.len()).rev() {
                    let out = &cache.ff_out[i];
                    let hdim = dims[i];
                    let in_d = if i == 0 { trunk_in_dim } else { dims[i - 1] };
                    let input_block: &[f32] = if i == 0 {
                        &cache.trunk_in
                    } else {
                        &cache.ff_out[i - 1]
                    };
                    let w = self.p(&format!("trunk{i}.weight"));
                    let wname = format!("trunk{i}.weight");
                    let bname = format!("trunk{i}.bias");
                    let [dw, db] = self.grad_many(grads, [wname.as_str(), bname.as_str()]);
                    let mut d_in = vec![0.0f32; n * in_d];
                    for s in 0..n {
                        let dy = &mut d_cur[s * hdim..(s + 1) * hdim];
                        relu_backward(&out[s * hdim..(s + 1) * hdim], dy);
                        linear_backward(
                            w,
                            &input_block[s * in_d..(s + 1) * in_d],
                            dy,
                            Some(&mut d_in[s * in_d..(s + 1) * in_d]),
                            dw,
                            db,
                        );
                    }
                    d_cur = d_in;
                }
            }
            TrunkConfig::Recurrent {
                cell,
                layers,
                hidden: hdim,
                mlp,
            } => {
                for i in (0..mlp.len()).rev() {
                    let out = &cache.ff_out[i];
                    let hd = mlp[i];
                    let in_d = if i == 0 { *hdim } else { mlp[i - 1] };
                    let input_block: &[f32] = if i == 0 {
                        &cache.rnn[*layers - 1].out
                    } else {
                        &cache.ff_out[i - 1]
                    };
                    let w = self.p(&format!("mlp{i}.weight"));
                    let wname = format!("mlp{i}.weight");
                    let bname = format!("mlp{i}.bias");
                    let [dw, db] = self.grad_many(grads, [wname.as_str(), bname.as_str()]);
                    let mut d_in = vec![0.0f32; n * in_d];
                    for s in 0..n {
                        let dy = &mut d_cur[s * hd..(s + 1) * hd];
                        relu_backward(&out[s * hd..(s + 1) * hd], dy);
                        linear_backward(
                            w,
                            &input_block[s * in_d..(s + 1) * in_d],
                            dy,
                            Some(&mut d_in[s * in_d..(s + 1) * in_d]),
                            dw,
                            db,
                        );
                    }
                    d_cur = d_in;
                }
                let hid_total = self.hidden_dim();
                let per_layer = hid_total / layers;
                for l in (0..*layers).rev() {
                    let lc = &cache.rnn[l];
                    let in_d = if l == 0 { trunk_in_dim } else { *hdim };
                    let input_block: &[f32] = if l == 0 {
                        &cache.trunk_in
                    } else {
                        &cache.rnn[l - 1].out
                    };
                    let w_ih = self.p(&format!("cell{l}.w_ih"));
                    let w_hh = self.p(&format!("cell{l}.w_hh"));
                    let n_ih = format!("cell{l}.w_ih");
                    let n_hh = format!("cell{l}.w_hh");
                    let n_bih = format!("cell{l}.b_ih");
                    let n_bhh = format!("cell{l}.b_hh");
                    let [dw_ih, dw_hh, db_ih, db_hh] = self.grad_many(
                        grads,
                        [n_ih.as_str(), n_hh.as_str(), n_bih.as_str(), n_bhh.as_str()],
                    );
                    let mut d_in = vec![0.0f32; n * in_d];
                    for s in 0..n {
                        let mut dh_out = d_cur[s * *hdim..(s + 1) * *hdim].to_vec();
                        if let Some(dhn) = dh_next {
                            for (k, g) in dh_out.iter_mut().enumerate() {
                                *g += dhn[s * hid_total + l * per_layer + k];
                            }
                        }
                        let x_row = &input_block[s * in_d..(s + 1) * in_d];
                        let h_row = &lc.h_in[s * *hdim..(s + 1) * *hdim];
                        let mut dh_row = vec![0.0f32; *hdim];
                        match cell {
                            CellKind::Gru => {
                                gru_backward(
                                    *hdim,
                                    w_ih,
                                    w_hh,
                                    x_row,
                                    h_row,
                                    &lc.gru[s],
                                    &dh_out,
                                    &mut d_in[s * in_d..(s + 1) * in_d],
                                    &mut dh_row,
                                    dw_ih,
                                    dw_hh,
                                    db_ih,
                                    db_hh,
                                );
                                if let Some(dhp) = dh_prev.as_deref_mut() {
                                    for (k, &g) in dh_row.iter().enumerate() {
                                        dhp[s * hid_total + l * per_layer + k] += g;
                                    }
                                }
                            }
                            CellKind::Lstm => {
                                let c_row = &lc.c_in[s * *hdim..(s + 1) * *hdim];
                                let mut dc_row = vec![0.0f32; *hdim];
                                let dc_next: Vec<f32> = match dh_next {
                                    Some(dhn) => dhn[s * hid_total + l * per_layer + *hdim
                                        ..s * hid_total + (l + 1) * per_layer]
                                        .to_vec(),
                                    None => vec![0.0; *hdim],
                                };
                                lstm_backward(
                                    *hdim,
                                    w_ih,
                                    w_hh,
                                    x_row,
                                    h_row,
                                    c_row,
                                    &lc.lstm[s],
                                    &dh_out,
                                    &dc_next,
                                    &mut d_in[s * in_d..(s + 1) * in_d],
                                    &mut dh_row,
                                    &mut dc_row,
                                    dw_ih,
                                    dw_hh,
                                    db_ih,
                                    db_hh,
                                );
                                if let Some(dhp) = dh_prev.as_deref_mut() {
                                    for k in 0..*hdim {
                                        dhp[s * hid_total + l * per_layer + k] += dh_row[k];
                                        dhp[s * hid_total + l * per_layer + *hdim + k] +=
                                            dc_row[k];
                                    }
                                }
                            }
                        }
                    }
                    d_cur = d_in;
                }
            }
        }

        // embed backward; proprio part of d(trunk_in) ends here
        let e = self.cfg.embed_dim;
        let embed_w = self.p("embed.weight");
        match self.cfg.input {
            InputKind::Vector { dim } => {
                let [dw, db] = self.grad_many(grads, ["embed.weight", "embed.bias"]);
                for s in 0..n {
                    linear_backward(
                        embed_w,
                        &cache.x0[s * dim..(s + 1) * dim],
                        &d_cur[s * trunk_in_dim..s * trunk_in_dim + e],
                        None,
                        dw,
                        db,
                    );
                }
            }
            InputKind::Image { .. } => {
                let last = self.conv_shapes.len() - 1;
                let flat = self.embed_in;
                let mut d_flat = vec![0.0f32; n * flat];
                {
                    let [dw, db] = self.grad_many(grads, ["embed.weight", "embed.bias"]);
                    for s in 0..n {
                        linear_backward(
                            embed_w,
                            &cache.conv_out[last][s * flat..(s + 1) * flat],
                            &d_cur[s * trunk_in_dim..s * trunk_in_dim + e],
                            Some(&mut d_flat[s * flat..(s + 1) * flat]),
                            dw,
                            db,
                        );
                    }
                }
                let mut d_out = d_flat;
                let mut col = vec![0.0f32; self.max_col_len()];
                let mut dcol = vec![0.0f32; self.max_col_len()];
                for l in (0..self.conv_shapes.len()).rev() {
                    let shape = self.conv_shapes[l];
                    let f = shape.out_len();
                    let kcol = shape.col_len();
                    let gam = self.p(&format!("conv{l}.ln_gamma"));
                    let w = self.p(&format!("conv{l}.weight"));
                    let input_block: &[f32] = if l == 0 {
                        &cache.x0
                    } else {
                        &cache.conv_out[l - 1]
                    };
                    let in_len = shape.in_len();
                    let n_w = format!("conv{l}.weight");
                    let n_b = format!("conv{l}.bias");
                    let n_g = format!("conv{l}.ln_gamma");
                    let n_be = format!("conv{l}.ln_beta");
                    let [dw, db, dgam, dbet] = self.grad_many(
                        grads,
                        [n_w.as_str(), n_b.as_str(), n_g.as_str(), n_be.as_str()],
                    );
                    let mut d_in = vec![0.0f32; if l == 0 { 0 } else { n * in_len }];
                    let mut d_z = vec![0.0f32; f];
                    for s in 0..n {
                        let dy = &mut d_out[s * f..(s + 1) * f];
                        relu_backward(&cache.conv_out[l][s * f..(s + 1) * f], dy);
                        layernorm_backward(
                            dy,
                            gam,
                            &cache.conv_xhat[l][s * f..(s + 1) * f],
                            cache.conv_inv_std[l][s],
                            &mut d_z,
                            dgam,
                            dbet,
                        );
                        conv_backward_col(
                            &shape,
                            w,
                            &input_block[s * in_len..(s + 1) * in_len],
                            &d_z,
                            if l == 0 {
                                None
                            } else {
                                Some(&mut d_in[s * in_len..(s + 1) * in_len])
                            },
                            dw,
                            db,
                            &mut col[..kcol],
                            &mut dcol[..kcol],
                        );
                    }
                    d_out = d_in;
                }
            }
        }
        Ok(())
    }
}

/// Orthogonal init via modified Gram-Schmidt in f64: orthonormalize along
/// the smaller dimension, scale by `gain`, cast to f32.
fn orthogonal_into(
    stream: &mut crate::rng::Stream,
    rows: usize,
    cols: usize,
    gain: f64,
    out: &mut [f32],
) {
    debug_assert_eq!(out.len(), rows * cols);
    let transpose = rows > cols;
    let (k, d) = if transpose { (cols, rows) } else { (rows, cols) };
    let mut vs: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| stream.normal_f64()).collect())
        .collect();
    for i in 0..k {
        for j in 0..i {
            let dot: f64 = vs[i].iter().zip(&vs[j]).map(|(a, b)| a * b).sum();
            let vj = vs[j].clone();
            for (a, b) in vs[i].iter_mut().zip(&vj) {
                *a -= dot * b;
            }
        }
        let norm: f64 = vs[i].iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(norm > 1e-8, "degenerate draw during orthogonal init");
        for a in vs[i].iter_mut() {
            *a /= norm;
        }
    }
    for r in 0..rows {
        for c in 0..cols {
            let v = if transpose { vs[c][r] } else { vs[r][c] };
            out[r * cols + c] = (gain * v) as f32;
        }
    }
}
