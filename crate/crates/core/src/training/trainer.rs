//! Mini-batch trainers for ACR regression and CCR RankNet.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_update, AdamConfig, AdamState};
use super::loss::{mse_loss, ranknet_pair_loss};
use crate::dataset::{AcrLabel, CcrChoice, CcrLabel};
use crate::error::{Error, Result};
use crate::features::{FeatureStore, ModelInput};
use crate::metrics::{ppref_count, PprefCount, PrefPrediction, Subset};
use crate::rng::{self, Rng};
use crate::scorer::{self, accumulate_gradients, Architecture, Gradients, Mode, ScorerParameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub dropout: f64,
    pub seeds: Vec<u64>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 1e-4,
            batch_size: 6,
            epochs: 30,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            dropout: 0.3,
            seeds: (0..5).collect(),
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.batch_size >= 1
            && self.epochs >= 1
            && (0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.adam_eps > 0.0
            && (0.0..1.0).contains(&self.dropout);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid hyperparameters {self:?}")))
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    fn mode(&self) -> Mode {
        Mode::Train { dropout: self.dropout }
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub ppref_strong: Option<f64>,
    pub ppref_weak: Option<f64>,
}

/// ppref of one evaluation pass; `None` where the subset is empty.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalScores {
    pub strong: Option<f64>,
    pub weak: Option<f64>,
}

/// Scores a fixed CCR test set. Each distinct utterance is scored once per call.
#[derive(Debug, Clone)]
pub struct PairEvaluator {
    utterances: Vec<String>,
    pairs: Vec<(usize, usize, CcrChoice)>,
}

impl PairEvaluator {
    pub fn new<'a>(labels: impl IntoIterator<Item = &'a CcrLabel>, features: &FeatureStore) -> Result<Self> {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut utterances = Vec::new();
        let mut pairs = Vec::new();
        let mut slot = |id: &str| -> Result<usize> {
            if !features.contains_key(id) {
                return Err(Error::Validation(format!("no feature for test utterance {id:?}")));
            }
            Ok(*index.entry(id.to_string()).or_insert_with(|| {
                utterances.push(id.to_string());
                utterances.len() - 1
            }))
        };
        for c in labels {
            let i = slot(&c.utt_i)?;
            let j = slot(&c.utt_j)?;
            pairs.push((i, j, c.choice));
        }
        Ok(PairEvaluator { utterances, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn predictions(&self, params: &ScorerParameters, features: &FeatureStore) -> Result<Vec<PrefPrediction>> {
        let scores = self
            .utterances
            .iter()
            .map(|u| scorer::score(params, &features[u]))
            .collect::<Result<Vec<f64>>>()?;
        Ok(self
            .pairs
            .iter()
            .map(|&(i, j, choice)| PrefPrediction {
                score_i: scores[i],
                score_j: scores[j],
                choice,
            })
            .collect())
    }

    pub fn counts(
        &self,
        params: &ScorerParameters,
        features: &FeatureStore,
    ) -> Result<(Option<PprefCount>, Option<PprefCount>)> {
        let preds = self.predictions(params, features)?;
        Ok((
            ppref_count(&preds, Subset::Strong).ok(),
            ppref_count(&preds, Subset::Weak).ok(),
        ))
    }

    pub fn evaluate(&self, params: &ScorerParameters, features: &FeatureStore) -> Result<EvalScores> {
        let (s, w) = self.counts(params, features)?;
        Ok(EvalScores {
            strong: s.map(|c| c.precision()),
            weak: w.map(|c| c.precision()),
        })
    }
}

fn expected_kind(arch: Architecture) -> &'static str {
    match arch {
        Architecture::PooledFc => "pooled feature",
        Architecture::ConvPool => "spectrogram",
    }
}

fn check_features<'a>(
    params: &ScorerParameters,
    ids: impl IntoIterator<Item = &'a str>,
    features: &FeatureStore,
) -> Result<()> {
    for id in ids {
        let x = features
            .get(id)
            .ok_or_else(|| Error::Validation(format!("no feature for training utterance {id:?}")))?;
        let kind_ok = matches!(
            (params.arch(), x),
            (Architecture::PooledFc, ModelInput::Pooled(_)) | (Architecture::ConvPool, ModelInput::Spectrogram(_))
        );
        if !kind_ok {
            return Err(Error::Shape(format!(
                "utterance {id:?}: {} needs a {}",
                params.arch(),
                expected_kind(params.arch())
            )));
        }
    }
    Ok(())
}

/// Shared optimization loop. `item_step` runs the forward passes for one
/// training item, accumulates `scale * d loss / d params` into the gradient
/// and returns the item loss.
fn optimize<F, H>(
    mut params: ScorerParameters,
    n: usize,
    hp: &Hyperparams,
    seed: u64,
    mut item_step: F,
    mut hook: H,
) -> Result<(ScorerParameters, Vec<EpochReport>)>
where
    F: FnMut(&ScorerParameters, usize, f64, &mut Gradients, &mut Rng) -> Result<f64>,
    H: FnMut(usize, &ScorerParameters) -> Result<EvalScores>,
{
    hp.validate()?;
    if n == 0 {
        return Err(Error::Empty("training set"));
    }
    let adam = hp.adam();
    let mut state = AdamState::new(&params);
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = rng::substream(seed, &[0x5f]);
    let mut dropout_rng = rng::substream(seed, &[0xd0]);
    let mut reports = Vec::with_capacity(hp.epochs);
    for epoch in 0..hp.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hp.batch_size) {
            let mut grads = Gradients::zeros_like(&params);
            let scale = 1.0 / batch.len() as f64;
            for &item in batch {
                epoch_loss += item_step(&params, item, scale, &mut grads, &mut dropout_rng)?;
            }
            adam_update(&mut params, &grads, &mut state, hp.learning_rate, &adam)?;
        }
        let eval = hook(epoch, &params)?;
        reports.push(EpochReport {
            epoch,
            train_loss: epoch_loss / n as f64,
            ppref_strong: eval.strong,
            ppref_weak: eval.weak,
        });
    }
    Ok((params, reports))
}

/// Regress scores onto 1-5 ratings with squared error.
pub fn train_acr<H>(
    model: ScorerParameters,
    labels: &[AcrLabel],
    features: &FeatureStore,
    hp: &Hyperparams,
    seed: u64,
    hook: H,
) -> Result<(ScorerParameters, Vec<EpochReport>)>
where
    H: FnMut(usize, &ScorerParameters) -> Result<EvalScores>,
{
    check_features(&model, labels.iter().map(|l| l.utterance_id.as_str()), features)?;
    let mode = hp.mode();
    optimize(
        model,
        labels.len(),
        hp,
        seed,
        |params, item, scale, grads, rng| {
            let label = &labels[item];
            let out = scorer::forward(params, &features[&label.utterance_id], mode, rng)?;
            let (loss, dscore) = mse_loss(out.score, label.rating as f64);
            accumulate_gradients(params, scale * dscore, &out, grads)?;
            Ok(loss)
        },
        hook,
    )
}

/// RankNet on ordered pairs: both utterances go through the same parameters
/// (with independent dropout masks) and the pair loss is backpropagated
/// through both branches.
pub fn train_ccr<H>(
    model: ScorerParameters,
    labels: &[CcrLabel],
    features: &FeatureStore,
    hp: &Hyperparams,
    seed: u64,
    hook: H,
) -> Result<(ScorerParameters, Vec<EpochReport>)>
where
    H: FnMut(usize, &ScorerParameters) -> Result<EvalScores>,
{
    check_features(
        &model,
        labels.iter().flat_map(|l| [l.utt_i.as_str(), l.utt_j.as_str()]),
        features,
    )?;
    let mode = hp.mode();
    optimize(
        model,
        labels.len(),
        hp,
        seed,
        |params, item, scale, grads, rng| pair_step(params, &labels[item], features, mode, scale, grads, rng),
        hook,
    )
}

pub(crate) fn pair_step(
    params: &ScorerParameters,
    label: &CcrLabel,
    features: &FeatureStore,
    mode: Mode,
    scale: f64,
    grads: &mut Gradients,
    rng: &mut Rng,
) -> Result<f64> {
    let out_i = scorer::forward(params, &features[&label.utt_i], mode, rng)?;
    let out_j = scorer::forward(params, &features[&label.utt_j], mode, rng)?;
    let (loss, di, dj) = ranknet_pair_loss(out_i.score, out_j.score, label.choice.target());
    accumulate_gradients(params, scale * di, &out_i, grads)?;
    accumulate_gradients(params, scale * dj, &out_j, grads)?;
    Ok(loss)
}

/// A hook that evaluates nothing.
pub fn no_eval(_: usize, _: &ScorerParameters) -> Result<EvalScores> {
    Ok(EvalScores::default())
}
