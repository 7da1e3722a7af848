use super::{dropout_mask, named, xavier_normal, Gradients, Mode, NamedTensor, ScorerParameters, Tensor};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

// Entry order: fc1.weight [H, D], fc1.bias [H], fc2.weight [1, H], fc2.bias [1].
const NAMES: [&str; 4] = ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"];

pub(super) fn check_shapes(entries: &[NamedTensor]) -> Result<()> {
    if entries.len() != 4 || entries.iter().zip(NAMES).any(|(e, n)| e.name != n) {
        return Err(Error::Shape(format!("pooled_fc expects tensors {NAMES:?}")));
    }
    let w1 = &entries[0].tensor.shape;
    if w1.len() != 2 || w1[0] == 0 || w1[1] == 0 {
        return Err(Error::Shape("fc1.weight must be [hidden, input] with both > 0".into()));
    }
    let h = w1[0];
    let ok = entries[1].tensor.shape == [h] && entries[2].tensor.shape == [1, h] && entries[3].tensor.shape == [1];
    if !ok {
        return Err(Error::Shape(format!(
            "pooled_fc tensors inconsistent with hidden size {h}"
        )));
    }
    Ok(())
}

pub(super) fn init(input_dim: usize, hidden_dim: usize, seed: u64) -> Result<ScorerParameters> {
    if input_dim == 0 || hidden_dim == 0 {
        return Err(Error::Config("pooled_fc dimensions must be at least 1".into()));
    }
    let mut r = rng::substream(seed, &[0x1417]);
    let entries = vec![
        named(
            NAMES[0],
            xavier_normal(input_dim, hidden_dim, &[hidden_dim, input_dim], &mut r),
        ),
        named(NAMES[1], Tensor::zeros(&[hidden_dim])),
        named(NAMES[2], xavier_normal(hidden_dim, 1, &[1, hidden_dim], &mut r)),
        named(NAMES[3], Tensor::zeros(&[1])),
    ];
    ScorerParameters::from_entries(super::Architecture::PooledFc, entries)
}

#[derive(Debug, Clone)]
pub(crate) struct Cache {
    pub score: f64,
    input: Vec<f64>,
    pre: Vec<f64>,
    mask: Option<Vec<f64>>,
    /// Hidden activations after ReLU and dropout.
    out: Vec<f64>,
}

impl Cache {
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.pre.iter().map(|&v| v > 0.0).collect()
    }

    pub fn min_relu_margin(&self) -> f64 {
        self.pre.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min)
    }
}

pub(super) fn forward(params: &ScorerParameters, x: &[f64], mode: Mode, rng: &mut Rng) -> Result<Cache> {
    let e = params.entries();
    let (w1, b1, w2, b2) = (&e[0].tensor, &e[1].tensor, &e[2].tensor, &e[3].tensor);
    let (h, d) = (w1.shape[0], w1.shape[1]);
    if x.len() != d {
        return Err(Error::Shape(format!(
            "pooled_fc expects {d}-dim input, got {}",
            x.len()
        )));
    }
    let pre: Vec<f64> = (0..h)
        .map(|k| {
            let row = &w1.data[k * d..(k + 1) * d];
            b1.data[k] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect();
    let mask = dropout_mask(h, mode, rng);
    let out: Vec<f64> = pre
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let a = p.max(0.0);
            mask.as_ref().map_or(a, |m| a * m[k])
        })
        .collect();
    let score = b2.data[0] + w2.data.iter().zip(&out).map(|(w, a)| w * a).sum::<f64>();
    Ok(Cache {
        score,
        input: x.to_vec(),
        pre,
        mask,
        out,
    })
}

pub(super) fn backward(params: &ScorerParameters, g: f64, c: &Cache, grads: &mut Gradients) {
    let e = params.entries();
    let w2 = &e[2].tensor;
    let d = c.input.len();
    let [gw1, gb1, gw2, gb2] = &mut grads.entries[..] else {
        unreachable!("pooled_fc has four tensors")
    };
    gb2.tensor.data[0] += g;
    for (k, &a) in c.out.iter().enumerate() {
        gw2.tensor.data[k] += g * a;
        if c.pre[k] <= 0.0 {
            continue;
        }
        let mut dpre = g * w2.data[k];
        if let Some(m) = &c.mask {
            dpre *= m[k];
        }
        if dpre == 0.0 {
            continue;
        }
        gb1.tensor.data[k] += dpre;
        let row = &mut gw1.tensor.data[k * d..(k + 1) * d];
        for (gw, x) in row.iter_mut().zip(&c.input) {
            *gw += dpre * x;
        }
    }
}
