//! Temporal convolution + mean pooling scorer over spectrogram frames.
//!
//! Each block is a 1-D convolution over time (frames), stride 2, with
//! circular padding of `kernel / 2` frames, followed by ReLU. A block maps
//! `T` frames to `ceil(T / 2)`. Conv weights are stored `[out, kernel, in]`.

use super::{dropout_mask, named, xavier_normal, Architecture, Gradients, Mode, NamedTensor, ScorerParameters, Tensor};
use crate::error::{Error, Result};
use crate::features::{Spectrogram, N_BINS};
use crate::rng::{self, Rng};

pub const STRIDE: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvPoolConfig {
    pub in_bins: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub fc_hidden: usize,
}

impl Default for ConvPoolConfig {
    fn default() -> Self {
        ConvPoolConfig {
            in_bins: N_BINS,
            channels: vec![16, 32, 64],
            kernel: 3,
            fc_hidden: 32,
        }
    }
}

fn conv_name(l: usize, what: &str) -> String {
    format!("conv{}.{what}", l + 1)
}

pub(super) fn config_from_entries(entries: &[NamedTensor]) -> Result<ConvPoolConfig> {
    let bad = |m: String| Error::Shape(format!("conv_pool: {m}"));
    if entries.len() < 6 || !entries.len().is_multiple_of(2) {
        return Err(bad(format!("unexpected tensor count {}", entries.len())));
    }
    let layers = (entries.len() - 4) / 2;
    let mut channels = Vec::with_capacity(layers);
    let mut kernel = 0;
    let mut in_bins = 0;
    let mut prev = 0;
    for l in 0..layers {
        let (w, b) = (&entries[2 * l], &entries[2 * l + 1]);
        if w.name != conv_name(l, "weight") || b.name != conv_name(l, "bias") {
            return Err(bad(format!(
                "expected {} / {}",
                conv_name(l, "weight"),
                conv_name(l, "bias")
            )));
        }
        let s = &w.tensor.shape;
        if s.len() != 3 || s.contains(&0) {
            return Err(bad(format!("{} must be [out, kernel, in]", w.name)));
        }
        if l == 0 {
            kernel = s[1];
            in_bins = s[2];
        } else if s[1] != kernel || s[2] != prev {
            return Err(bad(format!("{} shape {:?} does not chain", w.name, s)));
        }
        if b.tensor.shape != [s[0]] {
            return Err(bad(format!("{} must be [{}]", b.name, s[0])));
        }
        prev = s[0];
        channels.push(s[0]);
    }
    let fc = &entries[2 * layers..];
    let expect = ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"];
    if fc.iter().zip(expect).any(|(e, n)| e.name != n) {
        return Err(bad(format!("expected trailing tensors {expect:?}")));
    }
    let w1 = &fc[0].tensor.shape;
    if w1.len() != 2 || w1[1] != prev || w1[0] == 0 {
        return Err(bad(format!("fc1.weight must be [hidden, {prev}]")));
    }
    let h = w1[0];
    if fc[1].tensor.shape != [h] || fc[2].tensor.shape != [1, h] || fc[3].tensor.shape != [1] {
        return Err(bad("fc tensors inconsistent".into()));
    }
    Ok(ConvPoolConfig {
        in_bins,
        channels,
        kernel,
        fc_hidden: h,
    })
}

pub(super) fn init(cfg: &ConvPoolConfig, seed: u64) -> Result<ScorerParameters> {
    if cfg.channels.is_empty() || cfg.channels.contains(&0) || cfg.kernel == 0 || cfg.in_bins == 0 || cfg.fc_hidden == 0
    {
        return Err(Error::Config(format!("invalid conv_pool config {cfg:?}")));
    }
    let mut r = rng::substream(seed, &[0xc0de]);
    let mut entries = Vec::new();
    let mut cin = cfg.in_bins;
    for (l, &cout) in cfg.channels.iter().enumerate() {
        let k = cfg.kernel;
        entries.push(named(
            &conv_name(l, "weight"),
            xavier_normal(cin * k, cout * k, &[cout, k, cin], &mut r),
        ));
        entries.push(named(&conv_name(l, "bias"), Tensor::zeros(&[cout])));
        cin = cout;
    }
    let h = cfg.fc_hidden;
    entries.push(named("fc1.weight", xavier_normal(cin, h, &[h, cin], &mut r)));
    entries.push(named("fc1.bias", Tensor::zeros(&[h])));
    entries.push(named("fc2.weight", xavier_normal(h, 1, &[1, h], &mut r)));
    entries.push(named("fc2.bias", Tensor::zeros(&[1])));
    ScorerParameters::from_entries(Architecture::ConvPool, entries)
}

#[derive(Debug, Clone)]
struct Layer {
    t_in: usize,
    t_out: usize,
    /// Pre-activation, [t_out, cout].
    pre: Vec<f64>,
    /// Post-ReLU, [t_out, cout].
    act: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct Cache {
    pub score: f64,
    input: Vec<f64>,
    layers: Vec<Layer>,
    pooled: Vec<f64>,
    fc_pre: Vec<f64>,
    mask: Option<Vec<f64>>,
    fc_out: Vec<f64>,
}

impl Cache {
    pub fn pooled(&self) -> &[f64] {
        &self.pooled
    }

    pub fn relu_pattern(&self) -> Vec<bool> {
        self.layers
            .iter()
            .flat_map(|l| l.pre.iter())
            .chain(&self.fc_pre)
            .map(|&v| v > 0.0)
            .collect()
    }

    pub fn min_relu_margin(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.pre.iter())
            .chain(&self.fc_pre)
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min)
    }
}

#[inline]
fn source_frame(t: usize, k: usize, kernel: usize, t_in: usize) -> usize {
    // Circular padding: (STRIDE*t + k - kernel/2) mod t_in.
    let pad = kernel / 2;
    (STRIDE * t + k + t_in * (pad / t_in + 1) - pad) % t_in
}

fn conv_forward(input: &[f64], t_in: usize, cin: usize, w: &Tensor, b: &Tensor) -> Layer {
    let (cout, kernel) = (w.shape[0], w.shape[1]);
    let t_out = t_in.div_ceil(STRIDE);
    let mut pre = vec![0.0; t_out * cout];
    for t in 0..t_out {
        for co in 0..cout {
            let mut acc = b.data[co];
            for k in 0..kernel {
                let src = &input[source_frame(t, k, kernel, t_in) * cin..][..cin];
                let wr = &w.data[(co * kernel + k) * cin..][..cin];
                acc += wr.iter().zip(src).map(|(a, x)| a * x).sum::<f64>();
            }
            pre[t * cout + co] = acc;
        }
    }
    let act = pre.iter().map(|v| v.max(0.0)).collect();
    Layer { t_in, t_out, pre, act }
}

pub(super) fn forward(params: &ScorerParameters, x: &Spectrogram, mode: Mode, rng: &mut Rng) -> Result<Cache> {
    let e = params.entries();
    let n_layers = (e.len() - 4) / 2;
    let in_bins = e[0].tensor.shape[2];
    if x.bins() != in_bins {
        return Err(Error::Shape(format!(
            "conv_pool expects {in_bins} bins per frame, got {}",
            x.bins()
        )));
    }
    let mut layers: Vec<Layer> = Vec::with_capacity(n_layers);
    let (mut t, mut c) = (x.frames(), in_bins);
    for l in 0..n_layers {
        let (w, b) = (&e[2 * l].tensor, &e[2 * l + 1].tensor);
        let src = if l == 0 { x.data() } else { &layers[l - 1].act[..] };
        let layer = conv_forward(src, t, c, w, b);
        t = layer.t_out;
        c = w.shape[0];
        layers.push(layer);
    }
    let last = layers.last().expect("at least one conv block");
    let mut pooled = vec![0.0; c];
    for row in last.act.chunks_exact(c) {
        for (p, v) in pooled.iter_mut().zip(row) {
            *p += v;
        }
    }
    pooled.iter_mut().for_each(|p| *p /= t as f64);

    let fc = &e[2 * n_layers..];
    let (w1, b1, w2, b2) = (&fc[0].tensor, &fc[1].tensor, &fc[2].tensor, &fc[3].tensor);
    let h = w1.shape[0];
    let fc_pre: Vec<f64> = (0..h)
        .map(|k| {
            b1.data[k]
                + w1.data[k * c..(k + 1) * c]
                    .iter()
                    .zip(&pooled)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
        })
        .collect();
    let mask = dropout_mask(h, mode, rng);
    let fc_out: Vec<f64> = fc_pre
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let a = p.max(0.0);
            mask.as_ref().map_or(a, |m| a * m[k])
        })
        .collect();
    let score = b2.data[0] + w2.data.iter().zip(&fc_out).map(|(w, a)| w * a).sum::<f64>();
    Ok(Cache {
        score,
        input: x.data().to_vec(),
        layers,
        pooled,
        fc_pre,
        mask,
        fc_out,
    })
}

#[allow(clippy::needless_range_loop)] // (t, channel) indexing mirrors the forward pass
pub(super) fn backward(params: &ScorerParameters, g: f64, c: &Cache, grads: &mut Gradients) {
    let e = params.entries();
    let n_layers = c.layers.len();
    let fc = &e[2 * n_layers..];
    let (w1, w2) = (&fc[0].tensor, &fc[2].tensor);
    let h = w1.shape[0];
    let cl = c.pooled.len();

    let (conv_grads, fc_grads) = grads.entries.split_at_mut(2 * n_layers);
    fc_grads[3].tensor.data[0] += g;
    let mut dpooled = vec![0.0; cl];
    for k in 0..h {
        fc_grads[2].tensor.data[k] += g * c.fc_out[k];
        if c.fc_pre[k] <= 0.0 {
            continue;
        }
        let mut d = g * w2.data[k];
        if let Some(m) = &c.mask {
            d *= m[k];
        }
        if d == 0.0 {
            continue;
        }
        fc_grads[1].tensor.data[k] += d;
        let wrow = &w1.data[k * cl..(k + 1) * cl];
        let grow = &mut fc_grads[0].tensor.data[k * cl..(k + 1) * cl];
        for j in 0..cl {
            grow[j] += d * c.pooled[j];
            dpooled[j] += d * wrow[j];
        }
    }

    // Adjoint of the last block's activations from the mean pool.
    let last = &c.layers[n_layers - 1];
    let inv_t = 1.0 / last.t_out as f64;
    let mut dact: Vec<f64> = (0..last.t_out * cl).map(|i| dpooled[i % cl] * inv_t).collect();

    for l in (0..n_layers).rev() {
        let layer = &c.layers[l];
        let w = &e[2 * l].tensor;
        let (cout, kernel, cin) = (w.shape[0], w.shape[1], w.shape[2]);
        let input: &[f64] = if l == 0 { &c.input } else { &c.layers[l - 1].act };
        let need_dinput = l > 0;
        let mut dinput = if need_dinput {
            vec![0.0; layer.t_in * cin]
        } else {
            Vec::new()
        };
        let (gw_slot, gb_slot) = conv_grads[2 * l..2 * l + 2].split_at_mut(1);
        let gw = &mut gw_slot[0].tensor.data;
        let gb = &mut gb_slot[0].tensor.data;
        for t in 0..layer.t_out {
            for co in 0..cout {
                let idx = t * cout + co;
                if layer.pre[idx] <= 0.0 {
                    continue;
                }
                let d = dact[idx];
                if d == 0.0 {
                    continue;
                }
                gb[co] += d;
                for k in 0..kernel {
                    let s = source_frame(t, k, kernel, layer.t_in);
                    let src = &input[s * cin..][..cin];
                    let off = (co * kernel + k) * cin;
                    for (gwv, x) in gw[off..off + cin].iter_mut().zip(src) {
                        *gwv += d * x;
                    }
                    if need_dinput {
                        let wr = &w.data[off..off + cin];
                        for (di, wv) in dinput[s * cin..][..cin].iter_mut().zip(wr) {
                            *di += d * wv;
                        }
                    }
                }
            }
        }
        dact = dinput;
    }
}
