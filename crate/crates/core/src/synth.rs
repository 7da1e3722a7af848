//! Synthetic corpora with known latent descriptor scores.
//!
//! Every utterance carries a latent score `z = speaker base + jitter`. Pooled
//! features are a fixed random linear embedding of `z` plus isotropic noise;
//! spectrograms modulate a fixed spectral pattern by `z`. ACR ratings and CCR
//! choices are simulated from `z` with Gaussian response noise, so that the
//! rest of the pipeline can be checked against ground truth.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    sample_ccr_pair, AcrLabel, CcrChoice, CcrLabel, Corpus, Gender, LabelRecord, LabelSet, Source, Svd, Utterance,
};
use crate::error::{Error, Result};
use crate::features::{
    save_pooled_feature, save_spectrogram, FeatureStore, ModelInput, PooledFeature, Spectrogram, N_BINS,
};
use crate::metrics::ResponseTally;
use crate::rng::{self, Rng};

const TAG_BASE: u64 = 0xba5e;
const TAG_JITTER: u64 = 0x1177;
const TAG_EMBED: u64 = 0xe3b;
const TAG_FEATURE: u64 = 0xfea7;
const TAG_SPEC: u64 = 0x5bec;
const TAG_ACR: u64 = 0xac12;
const TAG_CCR: u64 = 0xcc12;
const TAG_PANEL: u64 = 0x9a2e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub n_sentences: usize,
    pub feature_dim: usize,
    pub sigma_jitter: f64,
    pub sigma_label: f64,
    pub tau: f64,
    /// Per-dimension std of the isotropic noise added to pooled features.
    pub sigma_feature: f64,
    /// Frames per synthetic spectrogram.
    pub spectrogram_frames: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_speakers: 200,
            utts_per_speaker: 3,
            n_sentences: 3,
            feature_dim: 32,
            sigma_jitter: 0.2,
            sigma_label: 0.4,
            tau: 0.5,
            sigma_feature: 1.0,
            spectrogram_frames: 16,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers == 0 || self.utts_per_speaker == 0 || self.n_sentences == 0 || self.feature_dim == 0 {
            return Err(Error::Config("synthetic corpus counts must be at least 1".into()));
        }
        if self.spectrogram_frames == 0 {
            return Err(Error::Config("spectrogram_frames must be at least 1".into()));
        }
        let sigmas = [self.sigma_jitter, self.sigma_label, self.sigma_feature];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("noise scales must be finite and non-negative".into()));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        Ok(())
    }
}

/// Ground truth of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentWorld {
    pub seed: u64,
    pub config: SynthConfig,
    pub speaker_base: BTreeMap<String, f64>,
    /// Latent score per utterance id.
    pub z: BTreeMap<String, f64>,
    /// Embedding direction, norm `sqrt(feature_dim)`, first entry positive.
    pub embedding: Vec<f64>,
    /// ACR calibration `rating = acr_offset + acr_scale * z` (before noise).
    pub acr_scale: f64,
    pub acr_offset: f64,
}

impl LatentWorld {
    pub fn z_of(&self, utterance_id: &str) -> Result<f64> {
        self.z
            .get(utterance_id)
            .copied()
            .ok_or_else(|| Error::Validation(format!("utterance {utterance_id:?} is not part of the world")))
    }

    /// Mean ACR rating before noise and rounding.
    pub fn acr_mean(&self, z: f64) -> f64 {
        self.acr_offset + self.acr_scale * z
    }

    fn utterance_stream(&self, tag: u64, utterance_id: &str) -> Rng {
        rng::substream(self.seed, &[tag, fnv1a(utterance_id)])
    }

    /// `z * embedding + Normal(0, sigma_feature)` per dimension.
    pub fn pooled_feature(&self, utterance_id: &str) -> Result<PooledFeature> {
        let z = self.z_of(utterance_id)?;
        let mut r = self.utterance_stream(TAG_FEATURE, utterance_id);
        let s = self.config.sigma_feature;
        let vector = self
            .embedding
            .iter()
            .map(|a| z * a + s * r.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(PooledFeature { vector })
    }

    /// `|envelope + z * pattern * gain_t + noise|` over 257 bins.
    pub fn spectrogram(&self, utterance_id: &str) -> Result<Spectrogram> {
        let z = self.z_of(utterance_id)?;
        let (envelope, pattern) = self.spectral_templates();
        let mut r = self.utterance_stream(TAG_SPEC, utterance_id);
        let frames = self.config.spectrogram_frames;
        let s = self.config.sigma_feature;
        let mut data = Vec::with_capacity(frames * N_BINS);
        for _ in 0..frames {
            let gain = 0.5 + r.random::<f64>();
            for b in 0..N_BINS {
                let noise: f64 = r.sample(StandardNormal);
                data.push((envelope[b] + z * pattern[b] * gain + s * noise).abs());
            }
        }
        Spectrogram::new(frames, N_BINS, data)
    }

    fn spectral_templates(&self) -> (Vec<f64>, Vec<f64>) {
        let mut r = rng::substream(self.seed, &[TAG_SPEC]);
        let envelope = (0..N_BINS)
            .map(|b| 2.0 + (b as f64 * std::f64::consts::PI / 64.0).cos())
            .collect();
        let pattern = (0..N_BINS).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        (envelope, pattern)
    }

    /// Features of every utterance in the requested representation.
    pub fn feature_store(&self, corpus: &Corpus, spectrograms: bool) -> Result<FeatureStore> {
        corpus
            .utterances()
            .iter()
            .map(|u| {
                let x = if spectrograms {
                    ModelInput::Spectrogram(self.spectrogram(&u.id)?)
                } else {
                    ModelInput::Pooled(self.pooled_feature(&u.id)?)
                };
                Ok((u.id.clone(), x))
            })
            .collect()
    }

    /// One simulated ACR rating: `clamp(round(acr_mean(z) + N(0, sigma_label)), 1, 5)`.
    pub fn rate(&self, z: f64, rng: &mut Rng) -> u8 {
        let noise: f64 = rng.sample(StandardNormal);
        rating_from_mean(self.acr_mean(z) + self.config.sigma_label * noise)
    }

    /// One simulated CCR answer for the ordered pair `(z_i, z_j)`.
    pub fn compare(&self, z_i: f64, z_j: f64, rng: &mut Rng) -> CcrChoice {
        let s = self.config.sigma_label;
        let ei: f64 = rng.sample(StandardNormal);
        let ej: f64 = rng.sample(StandardNormal);
        ccr_choice_from_gap((z_j + s * ej) - (z_i + s * ei), self.config.tau)
    }

    /// Probabilities of (i_more, i_little, j_little, j_more) for a latent gap
    /// `z_j - z_i` under the response-noise model.
    pub fn choice_probabilities(&self, gap: f64) -> [f64; 4] {
        choice_probabilities(gap, self.config.sigma_label, self.config.tau)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    })
}

/// Round half away from zero, then clamp to the 5-point scale.
pub fn rating_from_mean(x: f64) -> u8 {
    x.round().clamp(1.0, 5.0) as u8
}

/// Threshold rule on a perceived difference `d = z_j - z_i`; `d = 0` maps to `i_little`.
pub fn ccr_choice_from_gap(d: f64, tau: f64) -> CcrChoice {
    if d > tau {
        CcrChoice::JMore
    } else if d > 0.0 {
        CcrChoice::JLittleMore
    } else if d > -tau {
        CcrChoice::ILittleMore
    } else {
        CcrChoice::IMore
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn choice_probabilities(gap: f64, sigma: f64, tau: f64) -> [f64; 4] {
    if sigma == 0.0 {
        let mut p = [0.0; 4];
        p[ccr_choice_from_gap(gap, tau).tally_slot()] = 1.0;
        return p;
    }
    let sd = sigma * std::f64::consts::SQRT_2;
    let cdf = |x: f64| normal_cdf((x - gap) / sd);
    let (c_lo, c_0, c_hi) = (cdf(-tau), cdf(0.0), cdf(tau));
    [c_lo, c_0 - c_lo, c_hi - c_0, 1.0 - c_hi]
}

/// Build the corpus and its latent world. Speakers alternate gender and each
/// speaker's utterances cycle through the sentences, so every
/// (sentence, gender) group holds utterances of several speakers.
pub fn generate_corpus(config: &SynthConfig, seed: u64) -> Result<(Corpus, LatentWorld)> {
    config.validate()?;
    let width = (config.n_speakers.max(2) - 1).to_string().len();
    let base_rng = &mut rng::substream(seed, &[TAG_BASE]);
    let jitter = Normal::new(0.0, config.sigma_jitter).expect("validated");
    let mut speaker_base = BTreeMap::new();
    let mut z = BTreeMap::new();
    let mut utterances = Vec::new();
    for s in 0..config.n_speakers {
        let speaker = format!("spk{s:0width$}");
        let gender = if s % 2 == 0 { Gender::Female } else { Gender::Male };
        let base: f64 = base_rng.sample(StandardNormal);
        speaker_base.insert(speaker.clone(), base);
        let mut jr = rng::substream(seed, &[TAG_JITTER, s as u64]);
        for k in 0..config.utts_per_speaker {
            let id = format!("{speaker}_u{k}");
            z.insert(id.clone(), base + jitter.sample(&mut jr));
            utterances.push(Utterance {
                id: id.clone(),
                speaker_id: speaker.clone(),
                gender,
                sentence_id: format!("sent{}", k % config.n_sentences),
                duration_s: 3.0,
                source: Source::Feature(format!("features/{id}.svdf").into()),
            });
        }
    }

    let mut er = rng::substream(seed, &[TAG_EMBED]);
    let mut embedding: Vec<f64> = (0..config.feature_dim).map(|_| er.sample(StandardNormal)).collect();
    let norm = embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sign = if embedding[0] < 0.0 { -1.0 } else { 1.0 };
    let length = (config.feature_dim as f64).sqrt();
    embedding.iter_mut().for_each(|v| *v = *v / norm * sign * length);

    let (lo, hi) = z.values().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let (acr_scale, acr_offset) = if hi > lo {
        let s = 4.0 / (hi - lo);
        (s, 1.0 - s * lo)
    } else {
        (0.0, 3.0)
    };

    let world = LatentWorld {
        seed,
        config: config.clone(),
        speaker_base,
        z,
        embedding,
        acr_scale,
        acr_offset,
    };
    Ok((Corpus::from_utterances(utterances)?, world))
}

/// `n_labels` ACR ratings of utterances drawn uniformly (with replacement)
/// from `utterance_ids`. Label `k` uses its own RNG substream.
pub fn generate_acr(
    world: &LatentWorld,
    svd_id: &str,
    utterance_ids: &[&str],
    n_labels: usize,
    seed: u64,
) -> Result<Vec<AcrLabel>> {
    if utterance_ids.is_empty() {
        return Err(Error::Empty("utterance pool"));
    }
    (0..n_labels)
        .map(|k| {
            let mut r = rng::substream(seed, &[TAG_ACR, k as u64]);
            let id = utterance_ids[r.random_range(0..utterance_ids.len())];
            let z = world.z_of(id)?;
            Ok(AcrLabel {
                svd_id: svd_id.to_string(),
                annotator_id: "sim".to_string(),
                utterance_id: id.to_string(),
                rating: world.rate(z, &mut r),
            })
        })
        .collect()
}

/// `n_labels` CCR answers on pairs drawn with the annotation pair sampler.
pub fn generate_ccr(
    world: &LatentWorld,
    corpus: &Corpus,
    svd: &Svd,
    n_labels: usize,
    seed: u64,
) -> Result<Vec<CcrLabel>> {
    (0..n_labels)
        .map(|k| {
            let mut r = rng::substream(seed, &[TAG_CCR, k as u64]);
            let (ui, uj) = sample_ccr_pair(corpus, svd, &mut r)?;
            let choice = world.compare(world.z_of(&ui.id)?, world.z_of(&uj.id)?, &mut r);
            Ok(CcrLabel {
                svd_id: svd.id.clone(),
                annotator_id: "sim".to_string(),
                utt_i: ui.id.clone(),
                utt_j: uj.id.clone(),
                choice,
            })
        })
        .collect()
}

/// `n` ordered questions drawn with the annotation pair sampler.
pub fn sample_questions(corpus: &Corpus, svd: &Svd, n: usize, seed: u64) -> Result<Vec<(String, String)>> {
    let mut r = rng::substream(seed, &[TAG_PANEL, 0]);
    (0..n)
        .map(|_| sample_ccr_pair(corpus, svd, &mut r).map(|(a, b)| (a.id.clone(), b.id.clone())))
        .collect()
}

/// Every annotator answers every question independently.
pub fn simulate_panel(
    world: &LatentWorld,
    questions: &[(String, String)],
    n_annotators: usize,
    seed: u64,
) -> Result<Vec<ResponseTally>> {
    if n_annotators == 0 {
        return Err(Error::Config("a panel needs at least one annotator".into()));
    }
    questions
        .iter()
        .enumerate()
        .map(|(q, (i, j))| {
            let (zi, zj) = (world.z_of(i)?, world.z_of(j)?);
            let mut tally = ResponseTally::default();
            for a in 0..n_annotators {
                let mut r = rng::substream(seed, &[TAG_PANEL, 1, q as u64, a as u64]);
                tally.record(world.compare(zi, zj, &mut r));
            }
            Ok(tally)
        })
        .collect()
}

/// Expected agreement of the noise model on a set of questions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticAgreement {
    /// `max(p1, p4) / (p1 + p4)` averaged over questions.
    pub strong: f64,
    pub weak: f64,
    /// Expected value of the estimator with a finite panel:
    /// `E[max(a1, a4) / (a1 + a4) | a1 + a4 > 0]` averaged over questions.
    pub strong_finite: f64,
    pub weak_finite: f64,
}

fn binomial_pmf(n: u64, p: f64, k: u64) -> f64 {
    if p <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let ln_choose = libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0);
    (ln_choose + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()
}

/// `E[max(A, m - A) / m]` for `A ~ Bin(m, q)`, and the same conditioned on
/// `m ~ Bin(n, p_pair) > 0`.
fn expected_finite_agreement(n: u64, p_pair: f64, q: f64) -> f64 {
    let p_any = 1.0 - (1.0 - p_pair).powi(n as i32);
    if p_any <= 0.0 {
        return f64::NAN;
    }
    let mut total = 0.0;
    for m in 1..=n {
        let pm = binomial_pmf(n, p_pair, m);
        if pm == 0.0 {
            continue;
        }
        let inner: f64 = (0..=m)
            .map(|k| binomial_pmf(m, q, k) * k.max(m - k) as f64 / m as f64)
            .sum();
        total += pm * inner;
    }
    total / p_any
}

pub fn analytic_agreement(
    world: &LatentWorld,
    questions: &[(String, String)],
    n_annotators: usize,
) -> Result<AnalyticAgreement> {
    if questions.is_empty() {
        return Err(Error::Empty("question list"));
    }
    let n = n_annotators as u64;
    let (mut s, mut w, mut sf, mut wf) = (0.0, 0.0, 0.0, 0.0);
    let (mut ns, mut nw, mut nsf, mut nwf) = (0usize, 0usize, 0usize, 0usize);
    for (i, j) in questions {
        let p = world.choice_probabilities(world.z_of(j)? - world.z_of(i)?);
        let (strong, weak) = (p[0] + p[3], p[1] + p[2]);
        if strong > 0.0 {
            s += p[0].max(p[3]) / strong;
            ns += 1;
            let e = expected_finite_agreement(n, strong, p[3] / strong);
            if e.is_finite() {
                sf += e;
                nsf += 1;
            }
        }
        if weak > 0.0 {
            w += p[1].max(p[2]) / weak;
            nw += 1;
            let e = expected_finite_agreement(n, weak, p[2] / weak);
            if e.is_finite() {
                wf += e;
                nwf += 1;
            }
        }
    }
    let mean = |x: f64, k: usize| if k == 0 { f64::NAN } else { x / k as f64 };
    Ok(AnalyticAgreement {
        strong: mean(s, ns),
        weak: mean(w, nw),
        strong_finite: mean(sf, nsf),
        weak_finite: mean(wf, nwf),
    })
}

/// A complete synthetic dataset for one descriptor.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub corpus: Corpus,
    pub world: LatentWorld,
    pub labels: LabelSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub acr: usize,
    pub ccr: usize,
}

impl Default for LabelCounts {
    fn default() -> Self {
        LabelCounts { acr: 8000, ccr: 14000 }
    }
}

/// Corpus, world and both label kinds (ACR first, then CCR) for `svd`.
pub fn generate_dataset(config: &SynthConfig, svd: &Svd, counts: &LabelCounts, seed: u64) -> Result<SynthDataset> {
    let (corpus, world) = generate_corpus(config, seed)?;
    let pool: Vec<&str> = corpus
        .utterances()
        .iter()
        .filter(|u| svd.gender_scope.admits(u.gender))
        .map(|u| u.id.as_str())
        .collect();
    let mut records: Vec<LabelRecord> = Vec::with_capacity(counts.acr + counts.ccr);
    if counts.acr > 0 {
        let acr = generate_acr(&world, &svd.id, &pool, counts.acr, rng::derive_seed(seed, &[TAG_ACR]))?;
        records.extend(acr.into_iter().map(LabelRecord::Acr));
    }
    if counts.ccr > 0 {
        let ccr = generate_ccr(&world, &corpus, svd, counts.ccr, rng::derive_seed(seed, &[TAG_CCR]))?;
        records.extend(ccr.into_iter().map(LabelRecord::Ccr));
    }
    Ok(SynthDataset {
        corpus,
        world,
        labels: LabelSet::new(records),
    })
}

/// Write `manifest.jsonl`, `labels.jsonl`, `world.json` and, per utterance,
/// `features/<id>.svdf` plus a sibling `features/<id>.svds`.
pub fn write_dataset(dataset: &SynthDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let feature_dir = dir.join("features");
    fs::create_dir_all(&feature_dir).map_err(|e| Error::io(&feature_dir, e))?;
    for u in dataset.corpus.utterances() {
        let Source::Feature(rel) = &u.source else {
            return Err(Error::Validation(format!(
                "synthetic utterance {:?} lacks a feature path",
                u.id
            )));
        };
        let path = dir.join(rel);
        save_pooled_feature(&path, &dataset.world.pooled_feature(&u.id)?)?;
        save_spectrogram(path.with_extension("svds"), &dataset.world.spectrogram(&u.id)?)?;
    }
    let manifest = dir.join("manifest.jsonl");
    let mut buf = Vec::new();
    dataset.corpus.write_manifest(&mut buf)?;
    fs::write(&manifest, buf).map_err(|e| Error::io(&manifest, e))?;
    let labels = dir.join("labels.jsonl");
    fs::write(&labels, dataset.labels.to_jsonl()).map_err(|e| Error::io(&labels, e))?;
    dataset.world.save(dir.join("world.json"))
}
