//! Label-efficiency sweep: for every (training size, mode, seed) cell,
//! subsample the training labels, train, evaluate ppref on a fixed test set
//! after every epoch and keep the best epoch of each metric.

use std::fmt;
use std::io::Write;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trainer::{train_acr, train_ccr, Hyperparams, PairEvaluator};
use crate::dataset::{make_split, subsample_training, Corpus, LabelSet, SplitPlan, Svd};
use crate::error::{Error, Result};
use crate::features::FeatureStore;
use crate::features::ModelInput;
use crate::metrics::Subset;
use crate::rng;
use crate::scorer::{init_conv_pool_with, init_pooled_fc, Architecture, ConvPoolConfig, ScorerParameters};

/// Training-label budgets swept by default.
pub const DEFAULT_SIZES: [usize; 7] = [125, 250, 500, 1000, 2000, 4000, 5000];
pub const DEFAULT_TEST_PAIRS: usize = 1450;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Acr,
    Ccr,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Acr => "acr",
            TrainMode::Ccr => "ccr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "acr" => Some(TrainMode::Acr),
            "ccr" => Some(TrainMode::Ccr),
            _ => None,
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How to build a fresh model for a run.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    /// Input dimension is taken from the features.
    PooledFc { hidden: usize },
    /// Input bins are taken from the features.
    ConvPool {
        channels: Vec<usize>,
        kernel: usize,
        fc_hidden: usize,
    },
}

impl ModelSpec {
    pub fn default_for(arch: Architecture) -> Self {
        match arch {
            Architecture::PooledFc => ModelSpec::PooledFc { hidden: 256 },
            Architecture::ConvPool => {
                let c = ConvPoolConfig::default();
                ModelSpec::ConvPool {
                    channels: c.channels,
                    kernel: c.kernel,
                    fc_hidden: c.fc_hidden,
                }
            }
        }
    }

    pub fn arch(&self) -> Architecture {
        match self {
            ModelSpec::PooledFc { .. } => Architecture::PooledFc,
            ModelSpec::ConvPool { .. } => Architecture::ConvPool,
        }
    }

    /// Initialize with dimensions inferred from any feature in the store.
    pub fn init(&self, features: &FeatureStore, seed: u64) -> Result<ScorerParameters> {
        let sample = features
            .values()
            .find(|x| {
                matches!(
                    (self, x),
                    (ModelSpec::PooledFc { .. }, ModelInput::Pooled(_))
                        | (ModelSpec::ConvPool { .. }, ModelInput::Spectrogram(_))
                )
            })
            .ok_or_else(|| Error::Config(format!("no features usable by {}", self.arch())))?;
        match (self, sample) {
            (ModelSpec::PooledFc { hidden }, ModelInput::Pooled(f)) => init_pooled_fc(f.vector.len(), *hidden, seed),
            (
                ModelSpec::ConvPool {
                    channels,
                    kernel,
                    fc_hidden,
                },
                ModelInput::Spectrogram(s),
            ) => init_conv_pool_with(
                &ConvPoolConfig {
                    in_bins: s.bins(),
                    channels: channels.clone(),
                    kernel: *kernel,
                    fc_hidden: *fc_hidden,
                },
                seed,
            ),
            _ => unreachable!(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub svd: Svd,
    pub sizes: Vec<usize>,
    pub modes: Vec<TrainMode>,
    pub model: ModelSpec,
    pub hyperparams: Hyperparams,
    pub train_speakers: usize,
    pub split_seed: u64,
    /// Cap on strong (and separately weak) test pairs; `None` keeps all.
    pub test_pairs_per_variant: Option<usize>,
    pub keep_models: bool,
}

#[derive(Debug, Clone)]
pub struct CellRun {
    pub mode: TrainMode,
    pub n_train: usize,
    pub seed: u64,
    /// Epoch with the highest ppref-strong (first one on ties).
    pub best_epoch: Option<usize>,
    pub ppref_strong: Option<f64>,
    pub ppref_weak: Option<f64>,
    pub epochs: Vec<super::EpochReport>,
    pub model: Option<ScorerParameters>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub mode: TrainMode,
    pub n_train: usize,
    pub runs: usize,
    pub mean_strong: Option<f64>,
    pub std_strong: Option<f64>,
    pub mean_weak: Option<f64>,
    pub std_weak: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub svd: String,
    pub arch: Architecture,
    pub plan: SplitPlan,
    pub n_test_strong: usize,
    pub n_test_weak: usize,
    pub runs: Vec<CellRun>,
    pub summaries: Vec<CellSummary>,
}

fn max_over_epochs(values: impl Iterator<Item = Option<f64>>) -> (Option<usize>, Option<f64>) {
    let mut best: (Option<usize>, Option<f64>) = (None, None);
    for (e, v) in values.enumerate() {
        if let Some(v) = v {
            if best.1.is_none_or(|b| v > b) {
                best = (Some(e), Some(v));
            }
        }
    }
    best
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

/// Keep at most `cap` test labels of each ppref subset, chosen with `seed`.
fn cap_test_set(plan: &SplitPlan, labels: &LabelSet, cap: Option<usize>, seed: u64) -> Vec<usize> {
    let Some(cap) = cap else {
        return plan.test_ccr.clone();
    };
    let mut kept = Vec::new();
    for (tag, subset) in [(1u64, Subset::Strong), (2, Subset::Weak)] {
        let pool: Vec<usize> = plan
            .test_ccr
            .iter()
            .copied()
            .filter(|&i| labels.ccr(i).is_some_and(|c| subset.keeps(c.choice)))
            .collect();
        if pool.len() <= cap {
            kept.extend(pool);
        } else {
            let mut r = rng::substream(seed, &[0x7e57, tag]);
            kept.extend(index::sample(&mut r, pool.len(), cap).into_iter().map(|k| pool[k]));
        }
    }
    kept.sort_unstable();
    kept
}

pub fn run_experiment(
    corpus: &Corpus,
    labels: &LabelSet,
    features: &FeatureStore,
    config: &ExperimentConfig,
) -> Result<ExperimentResult> {
    config.hyperparams.validate()?;
    if config.sizes.is_empty() || config.modes.is_empty() || config.hyperparams.seeds.is_empty() {
        return Err(Error::Config(
            "experiment needs at least one size, mode and seed".into(),
        ));
    }
    let mut plan = make_split(corpus, labels, &config.svd, config.train_speakers, config.split_seed)?;
    plan.test_ccr = cap_test_set(&plan, labels, config.test_pairs_per_variant, config.split_seed);
    let test_labels: Vec<_> = plan
        .test_ccr
        .iter()
        .map(|&i| labels.ccr(i).expect("ccr index"))
        .collect();
    let evaluator = PairEvaluator::new(test_labels.iter().copied(), features)?;
    let n_test_strong = test_labels.iter().filter(|c| c.choice.is_strong()).count();
    let n_test_weak = test_labels.len() - n_test_strong;

    let mut cells = Vec::new();
    for &mode in &config.modes {
        for &n in &config.sizes {
            for &seed in &config.hyperparams.seeds {
                cells.push((mode, n, seed));
            }
        }
    }

    let runs: Vec<CellRun> = cells
        .par_iter()
        .map(|&(mode, n, seed)| -> Result<CellRun> {
            let mut view = plan.clone();
            match mode {
                TrainMode::Acr => view.train_ccr.clear(),
                TrainMode::Ccr => view.train_acr.clear(),
            }
            let sub = subsample_training(&view, n, rng::derive_seed(seed, &[n as u64]))?;
            let model = config.model.init(features, seed)?;
            let hook = |_: usize, p: &ScorerParameters| evaluator.evaluate(p, features);
            let (model, epochs) = match mode {
                TrainMode::Acr => {
                    let train: Vec<_> = sub.train_acr.iter().map(|&i| labels.acr(i).unwrap().clone()).collect();
                    train_acr(model, &train, features, &config.hyperparams, seed, hook)?
                }
                TrainMode::Ccr => {
                    let train: Vec<_> = sub.train_ccr.iter().map(|&i| labels.ccr(i).unwrap().clone()).collect();
                    train_ccr(model, &train, features, &config.hyperparams, seed, hook)?
                }
            };
            let (best_epoch, ppref_strong) = max_over_epochs(epochs.iter().map(|e| e.ppref_strong));
            let (_, ppref_weak) = max_over_epochs(epochs.iter().map(|e| e.ppref_weak));
            Ok(CellRun {
                mode,
                n_train: n,
                seed,
                best_epoch,
                ppref_strong,
                ppref_weak,
                epochs,
                model: config.keep_models.then_some(model),
            })
        })
        .collect::<Result<_>>()?;

    let mut summaries = Vec::new();
    for &mode in &config.modes {
        for &n in &config.sizes {
            let cell: Vec<&CellRun> = runs.iter().filter(|r| r.mode == mode && r.n_train == n).collect();
            let strong: Vec<f64> = cell.iter().filter_map(|r| r.ppref_strong).collect();
            let weak: Vec<f64> = cell.iter().filter_map(|r| r.ppref_weak).collect();
            let (mean_strong, std_strong) = mean_std(&strong);
            let (mean_weak, std_weak) = mean_std(&weak);
            summaries.push(CellSummary {
                mode,
                n_train: n,
                runs: cell.len(),
                mean_strong,
                std_strong,
                mean_weak,
                std_weak,
            });
        }
    }

    Ok(ExperimentResult {
        svd: config.svd.id.clone(),
        arch: config.model.arch(),
        plan,
        n_test_strong,
        n_test_weak,
        runs,
        summaries,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

impl ExperimentResult {
    pub fn summary(&self, mode: TrainMode, n_train: usize) -> Option<&CellSummary> {
        self.summaries.iter().find(|s| s.mode == mode && s.n_train == n_train)
    }

    /// Per-run rows followed by `mean` and `std` rows per (mode, size).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "svd",
            "mode",
            "arch",
            "n_train",
            "seed",
            "best_epoch",
            "ppref_strong",
            "ppref_weak",
        ])?;
        let arch = self.arch.name();
        for r in &self.runs {
            w.write_record([
                self.svd.as_str(),
                r.mode.name(),
                arch,
                &r.n_train.to_string(),
                &r.seed.to_string(),
                &r.best_epoch.map_or_else(String::new, |e| e.to_string()),
                &fmt_opt(r.ppref_strong),
                &fmt_opt(r.ppref_weak),
            ])?;
        }
        for s in &self.summaries {
            for (label, strong, weak) in [("mean", s.mean_strong, s.mean_weak), ("std", s.std_strong, s.std_weak)] {
                w.write_record([
                    self.svd.as_str(),
                    s.mode.name(),
                    arch,
                    &s.n_train.to_string(),
                    label,
                    "",
                    &fmt_opt(strong),
                    &fmt_opt(weak),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_over_epochs_takes_first_best() {
        let v = [Some(0.5), Some(0.7), None, Some(0.7), Some(0.6)];
        assert_eq!(max_over_epochs(v.into_iter()), (Some(1), Some(0.7)));
        assert_eq!(max_over_epochs([None, None].into_iter()), (None, None));
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, Some(2.0));
        assert_eq!(s, Some(1.0));
        assert_eq!(mean_std(&[4.0]), (Some(4.0), Some(0.0)));
    }

    #[test]
    fn default_size_grid() {
        assert_eq!(DEFAULT_SIZES, [125, 250, 500, 1000, 2000, 4000, 5000]);
        assert_eq!(DEFAULT_TEST_PAIRS, 1450);
        let hp = Hyperparams::default();
        assert_eq!(hp.seeds.len(), 5);
        assert_eq!(
            (hp.learning_rate, hp.batch_size, hp.epochs, hp.dropout),
            (1e-4, 6, 30, 0.3)
        );
    }
}
