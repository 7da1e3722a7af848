//! Scalar scorers `f(x) -> score` with exact analytic gradients.
//!
//! Two architectures share one parameter container:
//!
//! * `pooled_fc`: pooled feature vector -> FC -> ReLU -> dropout -> FC -> score.
//! * `conv_pool`: spectrogram frames -> stride-2 temporal conv blocks (ReLU)
//!   -> mean over time -> FC -> ReLU -> dropout -> FC -> score.
//!
//! Everything is `f64`. A forward pass returns a [`ScorerOutput`] holding the
//! intermediates that [`gradients`] needs; the output remembers the parameter
//! version it was computed with so a cache from before an update is rejected.

pub mod checkpoint;
mod conv_pool;
mod pooled_fc;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::features::ModelInput;
use crate::rng::{self, Rng};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use conv_pool::ConvPoolConfig;

pub const DEFAULT_DROPOUT: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    PooledFc,
    ConvPool,
}

impl Architecture {
    pub fn tag(self) -> u8 {
        match self {
            Architecture::PooledFc => 0,
            Architecture::ConvPool => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Architecture::PooledFc),
            1 => Some(Architecture::ConvPool),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::PooledFc => "pooled_fc",
            Architecture::ConvPool => "conv_pool",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pooled_fc" => Some(Architecture::PooledFc),
            "conv_pool" => Some(Architecture::ConvPool),
            _ => None,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Named weight and bias tensors for one architecture.
#[derive(Debug)]
pub struct ScorerParameters {
    arch: Architecture,
    entries: Vec<NamedTensor>,
    version: u64,
}

impl Clone for ScorerParameters {
    fn clone(&self) -> Self {
        ScorerParameters {
            arch: self.arch,
            entries: self.entries.clone(),
            version: self.version,
        }
    }
}

impl PartialEq for ScorerParameters {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.entries == other.entries
    }
}

impl ScorerParameters {
    /// Build from named tensors, checking that shapes fit the architecture
    /// and all entries are finite.
    pub fn from_entries(arch: Architecture, entries: Vec<NamedTensor>) -> Result<Self> {
        for e in &entries {
            if e.tensor.data.len() != e.tensor.shape.iter().product::<usize>() {
                return Err(Error::Shape(format!(
                    "tensor {} payload does not match its shape",
                    e.name
                )));
            }
            if let Some(i) = e.tensor.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "tensor {} has non-finite entry at {i}",
                    e.name
                )));
            }
        }
        match arch {
            Architecture::PooledFc => pooled_fc::check_shapes(&entries)?,
            Architecture::ConvPool => {
                conv_pool::config_from_entries(&entries)?;
            }
        }
        Ok(ScorerParameters {
            arch,
            entries,
            version: fresh_version(),
        })
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn entries(&self) -> &[NamedTensor] {
        &self.entries
    }

    /// Mutable access; any cached forward state becomes stale.
    pub fn entries_mut(&mut self) -> &mut [NamedTensor] {
        self.version = fresh_version();
        &mut self.entries
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn num_parameters(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Flat view, in entry order.
    pub fn flat(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|e| e.tensor.data.iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_parameters());
        let mut off = 0;
        for e in self.entries_mut() {
            let n = e.tensor.len();
            e.tensor.data.copy_from_slice(&values[off..off + n]);
            off += n;
        }
    }

    /// Expected input description, for error messages and feature loading.
    pub fn input_dim(&self) -> usize {
        match self.arch {
            Architecture::PooledFc => self.entries[0].tensor.shape[1],
            Architecture::ConvPool => *self.entries[0].tensor.shape.last().unwrap(),
        }
    }
}

/// Gradient collection shaped like a [`ScorerParameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub entries: Vec<NamedTensor>,
}

impl Gradients {
    pub fn zeros_like(params: &ScorerParameters) -> Self {
        Gradients {
            entries: params
                .entries
                .iter()
                .map(|e| NamedTensor {
                    name: e.name.clone(),
                    tensor: Tensor::zeros(&e.tensor.shape),
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for e in &mut self.entries {
            e.tensor.data.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            for (x, y) in a.tensor.data.iter_mut().zip(&b.tensor.data) {
                *x += y;
            }
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|e| e.tensor.data.iter().copied())
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.data.iter().all(|&v| v == 0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Eval,
    /// Inverted dropout with the given drop probability.
    Train {
        dropout: f64,
    },
}

impl Mode {
    pub fn train() -> Self {
        Mode::Train {
            dropout: DEFAULT_DROPOUT,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Cache {
    PooledFc(pooled_fc::Cache),
    ConvPool(conv_pool::Cache),
}

/// Score plus the intermediates of the forward pass that produced it.
#[derive(Debug, Clone)]
pub struct ScorerOutput {
    pub score: f64,
    version: u64,
    cache: Cache,
}

impl ScorerOutput {
    /// Sign pattern of every ReLU pre-activation (true = active).
    pub fn relu_pattern(&self) -> Vec<bool> {
        match &self.cache {
            Cache::PooledFc(c) => c.relu_pattern(),
            Cache::ConvPool(c) => c.relu_pattern(),
        }
    }

    /// Smallest |pre-activation| over all ReLU units.
    pub fn min_relu_margin(&self) -> f64 {
        match &self.cache {
            Cache::PooledFc(c) => c.min_relu_margin(),
            Cache::ConvPool(c) => c.min_relu_margin(),
        }
    }

    /// Time-pooled activations of a conv_pool model; `None` for pooled_fc.
    pub fn pooled_activations(&self) -> Option<&[f64]> {
        match &self.cache {
            Cache::ConvPool(c) => Some(c.pooled()),
            Cache::PooledFc(_) => None,
        }
    }
}

pub(crate) fn dropout_mask(n: usize, mode: Mode, rng: &mut Rng) -> Option<Vec<f64>> {
    match mode {
        Mode::Eval => None,
        Mode::Train { dropout } if dropout <= 0.0 => None,
        Mode::Train { dropout } => {
            let keep = 1.0 - dropout;
            let scale = 1.0 / keep;
            Some(
                (0..n)
                    .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
                    .collect(),
            )
        }
    }
}

/// Run the scorer on one input.
pub fn forward(params: &ScorerParameters, x: &ModelInput, mode: Mode, rng: &mut Rng) -> Result<ScorerOutput> {
    let (score, cache) = match (params.arch, x) {
        (Architecture::PooledFc, ModelInput::Pooled(f)) => {
            let c = pooled_fc::forward(params, &f.vector, mode, rng)?;
            (c.score, Cache::PooledFc(c))
        }
        (Architecture::ConvPool, ModelInput::Spectrogram(s)) => {
            let c = conv_pool::forward(params, s, mode, rng)?;
            (c.score, Cache::ConvPool(c))
        }
        (arch, ModelInput::Pooled(_)) => {
            return Err(Error::Shape(format!(
                "{arch} expects a spectrogram, got a pooled feature"
            )))
        }
        (arch, ModelInput::Spectrogram(_)) => {
            return Err(Error::Shape(format!(
                "{arch} expects a pooled feature, got a spectrogram"
            )))
        }
    };
    Ok(ScorerOutput {
        score,
        version: params.version,
        cache,
    })
}

/// Add `adjoint * d score / d params` into `grads`.
pub fn accumulate_gradients(
    params: &ScorerParameters,
    adjoint: f64,
    output: &ScorerOutput,
    grads: &mut Gradients,
) -> Result<()> {
    if output.version != params.version {
        return Err(Error::StaleCache);
    }
    if adjoint == 0.0 {
        return Ok(());
    }
    match &output.cache {
        Cache::PooledFc(c) => pooled_fc::backward(params, adjoint, c, grads),
        Cache::ConvPool(c) => conv_pool::backward(params, adjoint, c, grads),
    }
    Ok(())
}

/// Gradients of `adjoint * score` with respect to every parameter.
pub fn gradients(params: &ScorerParameters, adjoint: f64, output: &ScorerOutput) -> Result<Gradients> {
    let mut g = Gradients::zeros_like(params);
    accumulate_gradients(params, adjoint, output, &mut g)?;
    Ok(g)
}

/// Convenience: eval-mode score.
pub fn score(params: &ScorerParameters, x: &ModelInput) -> Result<f64> {
    // Eval mode never draws from the RNG.
    let mut unused = rng::seeded(0);
    Ok(forward(params, x, Mode::Eval, &mut unused)?.score)
}

pub(crate) fn xavier_normal(fan_in: usize, fan_out: usize, shape: &[usize], rng: &mut Rng) -> Tensor {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| normal.sample(rng)).collect(),
    }
}

pub(crate) fn named(name: &str, tensor: Tensor) -> NamedTensor {
    NamedTensor {
        name: name.to_string(),
        tensor,
    }
}

/// Two affine layers `input_dim -> hidden_dim -> 1`, Xavier-normal weights, zero biases.
pub fn init_pooled_fc(input_dim: usize, hidden_dim: usize, seed: u64) -> Result<ScorerParameters> {
    pooled_fc::init(input_dim, hidden_dim, seed)
}

/// Default conv_pool layout on 257-bin frames.
pub fn init_conv_pool(seed: u64) -> Result<ScorerParameters> {
    conv_pool::init(&ConvPoolConfig::default(), seed)
}

pub fn init_conv_pool_with(config: &ConvPoolConfig, seed: u64) -> Result<ScorerParameters> {
    conv_pool::init(config, seed)
}
