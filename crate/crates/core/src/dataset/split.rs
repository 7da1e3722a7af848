//! Speaker-disjoint train/test splits.
//!
//! Training labels may only touch speakers in the training speaker set; a CCR
//! test label must involve at least one speaker outside it.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::{Corpus, LabelSet, Svd};
use crate::error::{Error, Result};
use crate::rng;

/// Train speaker set plus label indices (into a [`LabelSet`]) for each role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub svd: String,
    pub seed: u64,
    pub train_speakers: BTreeSet<String>,
    pub train_acr: Vec<usize>,
    pub train_ccr: Vec<usize>,
    pub test_ccr: Vec<usize>,
}

impl SplitPlan {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Scan every label the plan references and report the first rule violation.
    pub fn audit(&self, corpus: &Corpus, labels: &LabelSet) -> Result<()> {
        let speaker = |id: &str| {
            corpus
                .speaker_of(id)
                .ok_or_else(|| Error::Validation(format!("unknown utterance {id:?}")))
        };
        let in_train = |s: &str| self.train_speakers.contains(s);

        for &i in &self.train_acr {
            let a = labels
                .acr(i)
                .ok_or_else(|| Error::Validation(format!("train_acr index {i} is not an ACR label")))?;
            if !in_train(speaker(&a.utterance_id)?) {
                return Err(Error::Validation(format!(
                    "train ACR label {i} touches a held-out speaker"
                )));
            }
        }
        for &i in &self.train_ccr {
            let c = labels
                .ccr(i)
                .ok_or_else(|| Error::Validation(format!("train_ccr index {i} is not a CCR label")))?;
            if !in_train(speaker(&c.utt_i)?) || !in_train(speaker(&c.utt_j)?) {
                return Err(Error::Validation(format!(
                    "train CCR label {i} touches a held-out speaker"
                )));
            }
        }
        let train: BTreeSet<usize> = self.train_ccr.iter().chain(&self.train_acr).copied().collect();
        for &i in &self.test_ccr {
            let c = labels
                .ccr(i)
                .ok_or_else(|| Error::Validation(format!("test_ccr index {i} is not a CCR label")))?;
            if in_train(speaker(&c.utt_i)?) && in_train(speaker(&c.utt_j)?) {
                return Err(Error::Validation(format!("test CCR label {i} has no held-out speaker")));
            }
            if train.contains(&i) {
                return Err(Error::Validation(format!("label {i} is both train and test")));
            }
        }
        Ok(())
    }
}

/// Randomly choose `train_speaker_count` speakers eligible for the descriptor
/// and assign that descriptor's labels to train or test roles.
///
/// Labels whose utterances fall outside the descriptor's gender scope are left
/// out of the plan.
pub fn make_split(
    corpus: &Corpus,
    labels: &LabelSet,
    svd: &Svd,
    train_speaker_count: usize,
    seed: u64,
) -> Result<SplitPlan> {
    let mut eligible: Vec<&str> = corpus
        .speakers()
        .filter(|(_, idx)| {
            idx.iter()
                .any(|&i| svd.gender_scope.admits(corpus.utterances()[i].gender))
        })
        .map(|(s, _)| s)
        .collect();
    if train_speaker_count > eligible.len() {
        return Err(Error::Config(format!(
            "requested {train_speaker_count} training speakers but only {} are eligible for {}",
            eligible.len(),
            svd.id
        )));
    }
    let mut rng = rng::substream(seed, &[0x5e11]);
    eligible.shuffle(&mut rng);
    let train_speakers: BTreeSet<String> = eligible[..train_speaker_count].iter().map(|s| s.to_string()).collect();

    let in_scope = |id: &str| {
        corpus
            .get(id)
            .map(|u| svd.gender_scope.admits(u.gender))
            .unwrap_or(false)
    };
    let is_train = |id: &str| {
        corpus
            .speaker_of(id)
            .map(|s| train_speakers.contains(s))
            .unwrap_or(false)
    };

    let train_acr = labels
        .acr_labels(&svd.id)
        .filter(|(_, a)| in_scope(&a.utterance_id) && is_train(&a.utterance_id))
        .map(|(i, _)| i)
        .collect();

    let mut train_ccr = Vec::new();
    let mut test_ccr = Vec::new();
    for (i, c) in labels.ccr_labels(&svd.id) {
        if !in_scope(&c.utt_i) || !in_scope(&c.utt_j) {
            continue;
        }
        match (is_train(&c.utt_i), is_train(&c.utt_j)) {
            (true, true) => train_ccr.push(i),
            _ => test_ccr.push(i),
        }
    }

    Ok(SplitPlan {
        svd: svd.id.clone(),
        seed,
        train_speakers,
        train_acr,
        train_ccr,
        test_ccr,
    })
}

/// Keep exactly `n` training labels of every non-empty training modality,
/// chosen uniformly without replacement. The test set is untouched.
pub fn subsample_training(plan: &SplitPlan, n: usize, seed: u64) -> Result<SplitPlan> {
    let pick = |pool: &[usize], tag: u64| -> Result<Vec<usize>> {
        if pool.is_empty() {
            return Ok(Vec::new());
        }
        if n > pool.len() {
            return Err(Error::Config(format!(
                "requested {n} training labels but only {} are available",
                pool.len()
            )));
        }
        let mut rng = rng::substream(seed, &[0x5ab, tag]);
        let mut chosen: Vec<usize> = index::sample(&mut rng, pool.len(), n)
            .into_iter()
            .map(|k| pool[k])
            .collect();
        chosen.sort_unstable();
        Ok(chosen)
    };
    Ok(SplitPlan {
        train_acr: pick(&plan.train_acr, 1)?,
        train_ccr: pick(&plan.train_ccr, 2)?,
        ..plan.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::test_support::utt;
    use crate::dataset::{AcrLabel, CcrChoice, CcrLabel, Gender, GenderScope, LabelRecord};

    fn four_speakers() -> (Corpus, LabelSet) {
        let corpus = Corpus::from_utterances(
            (1..=4)
                .map(|s| utt(&format!("u{s}"), &format!("s{s}"), Gender::Male, "a"))
                .collect(),
        )
        .unwrap();
        let ccr = |i: &str, j: &str| {
            LabelRecord::Ccr(CcrLabel {
                svd_id: "x".into(),
                annotator_id: "a".into(),
                utt_i: i.into(),
                utt_j: j.into(),
                choice: CcrChoice::JMore,
            })
        };
        let acr = |u: &str| {
            LabelRecord::Acr(AcrLabel {
                svd_id: "x".into(),
                annotator_id: "a".into(),
                utterance_id: u.into(),
                rating: 3,
            })
        };
        let labels = LabelSet::new(vec![
            ccr("u1", "u2"),
            ccr("u1", "u3"),
            ccr("u3", "u4"),
            ccr("u2", "u4"),
            acr("u1"),
            acr("u4"),
        ]);
        (corpus, labels)
    }

    fn svd() -> Svd {
        Svd::new("x", "x", GenderScope::Any)
    }

    #[test]
    fn rule_application() {
        let (corpus, labels) = four_speakers();
        // Search seeds for the plan with S_train = {s1, s2}.
        let plan = (0..200)
            .map(|seed| make_split(&corpus, &labels, &svd(), 2, seed).unwrap())
            .find(|p| p.train_speakers == ["s1", "s2"].iter().map(|s| s.to_string()).collect())
            .expect("some seed picks s1,s2");
        assert_eq!(plan.train_ccr, vec![0]);
        assert_eq!(plan.test_ccr, vec![1, 2, 3]);
        assert_eq!(plan.train_acr, vec![4]);
        plan.audit(&corpus, &labels).unwrap();
    }

    #[test]
    fn all_speakers_in_train_leaves_no_test() {
        let (corpus, labels) = four_speakers();
        let plan = make_split(&corpus, &labels, &svd(), 4, 1).unwrap();
        assert!(plan.test_ccr.is_empty());
        assert_eq!(plan.train_ccr.len(), 4);
    }

    #[test]
    fn too_many_speakers_is_config_error() {
        let (corpus, labels) = four_speakers();
        assert!(matches!(
            make_split(&corpus, &labels, &svd(), 5, 1),
            Err(Error::Config(_))
        ));
        let female = Svd::new("x", "x", GenderScope::Female);
        assert!(make_split(&corpus, &labels, &female, 1, 1).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let (corpus, labels) = four_speakers();
        let a = make_split(&corpus, &labels, &svd(), 2, 9).unwrap();
        let b = make_split(&corpus, &labels, &svd(), 2, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn subsample_bounds() {
        let (corpus, labels) = four_speakers();
        let plan = make_split(&corpus, &labels, &svd(), 4, 1).unwrap();
        let full = subsample_training(&plan, 2, 3).unwrap();
        assert_eq!(full.train_acr, plan.train_acr);
        let two = subsample_training(&plan, 2, 3).unwrap();
        assert_eq!(two.train_ccr.len(), 2);
        assert_eq!(two, subsample_training(&plan, 2, 3).unwrap());
        assert!(subsample_training(&plan, 3, 3).is_err());
    }

    #[test]
    fn plan_json_roundtrip() {
        let (corpus, labels) = four_speakers();
        let plan = make_split(&corpus, &labels, &svd(), 2, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.json");
        plan.save(&path).unwrap();
        assert_eq!(SplitPlan::load(&path).unwrap(), plan);
    }
}
