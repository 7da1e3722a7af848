//! Ranking and agreement metrics.
//!
//! * [`ppref`]: precision of preferences, i.e. the fraction of labeled pairs whose
//!   predicted score order agrees with the labeled direction. The strong
//!   variant keeps `i_more`/`j_more` labels, the weak variant keeps the
//!   `*_little` labels. Exact score ties count as wrong.
//! * [`upper_bound_estimate`]: mean per-question panel agreement on common
//!   questions, `max(a1, a4) / (a1 + a4)` for strong and
//!   `max(a2, a3) / (a2 + a3)` for weak.
//! * [`pseudo_f`]: Calinski-Harabasz between/within variance ratio over
//!   speaker-grouped scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{CcrChoice, LabelSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PrefPrediction {
    pub score_i: f64,
    pub score_j: f64,
    pub choice: CcrChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Strong,
    Weak,
}

impl Subset {
    pub fn keeps(self, choice: CcrChoice) -> bool {
        match self {
            Subset::Strong => choice.is_strong(),
            Subset::Weak => !choice.is_strong(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PprefCount {
    pub correct: usize,
    pub kept: usize,
    pub ties: usize,
}

impl PprefCount {
    pub fn precision(&self) -> f64 {
        self.correct as f64 / self.kept as f64
    }
}

/// Whether the predicted order agrees with the labeled direction; ties are wrong.
pub fn prediction_is_correct(score_i: f64, score_j: f64, choice: CcrChoice) -> bool {
    if choice.prefers_j() {
        score_j > score_i
    } else {
        score_i > score_j
    }
}

pub fn ppref_count(predictions: &[PrefPrediction], subset: Subset) -> Result<PprefCount> {
    let mut count = PprefCount {
        correct: 0,
        kept: 0,
        ties: 0,
    };
    for p in predictions.iter().filter(|p| subset.keeps(p.choice)) {
        if !(p.score_i.is_finite() && p.score_j.is_finite()) {
            return Err(Error::Validation("ppref needs finite scores".into()));
        }
        count.kept += 1;
        if p.score_i == p.score_j {
            count.ties += 1;
        } else if prediction_is_correct(p.score_i, p.score_j, p.choice) {
            count.correct += 1;
        }
    }
    if count.kept == 0 {
        return Err(Error::Empty("no predictions in the requested ppref subset"));
    }
    Ok(count)
}

pub fn ppref(predictions: &[PrefPrediction], subset: Subset) -> Result<f64> {
    Ok(ppref_count(predictions, subset)?.precision())
}

/// Counts of the four CCR responses to one common question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ResponseTally {
    pub a1: u32,
    pub a2: u32,
    pub a3: u32,
    pub a4: u32,
}

impl ResponseTally {
    pub fn new(a1: u32, a2: u32, a3: u32, a4: u32) -> Self {
        ResponseTally { a1, a2, a3, a4 }
    }

    pub fn record(&mut self, choice: CcrChoice) {
        match choice.tally_slot() {
            0 => self.a1 += 1,
            1 => self.a2 += 1,
            2 => self.a3 += 1,
            _ => self.a4 += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.a1 as u64 + self.a2 as u64 + self.a3 as u64 + self.a4 as u64
    }

    pub fn strong_agreement(&self) -> Option<f64> {
        let d = self.a1 as u64 + self.a4 as u64;
        (d > 0).then(|| self.a1.max(self.a4) as f64 / d as f64)
    }

    pub fn weak_agreement(&self) -> Option<f64> {
        let d = self.a2 as u64 + self.a3 as u64;
        (d > 0).then(|| self.a2.max(self.a3) as f64 / d as f64)
    }
}

/// Estimated ppref ceilings; `None` when no question contributed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpperBound {
    pub strong: Option<f64>,
    pub weak: Option<f64>,
    pub strong_questions: usize,
    pub weak_questions: usize,
}

pub fn upper_bound_estimate(tallies: &[ResponseTally]) -> Result<UpperBound> {
    if tallies.is_empty() {
        return Err(Error::Empty("upper bound needs at least one tally"));
    }
    if let Some(i) = tallies.iter().position(|t| t.total() == 0) {
        return Err(Error::Validation(format!("tally {i} has no responses")));
    }
    let average = |xs: Vec<f64>| -> (Option<f64>, usize) {
        let n = xs.len();
        ((n > 0).then(|| xs.iter().sum::<f64>() / n as f64), n)
    };
    let (strong, strong_questions) = average(tallies.iter().filter_map(|t| t.strong_agreement()).collect());
    let (weak, weak_questions) = average(tallies.iter().filter_map(|t| t.weak_agreement()).collect());
    Ok(UpperBound {
        strong,
        weak,
        strong_questions,
        weak_questions,
    })
}

/// Group one descriptor's CCR labels by ordered pair and keep the pairs
/// answered at least `min_responses` times.
pub fn tallies_from_labels(labels: &LabelSet, svd_id: &str, min_responses: u64) -> Vec<ResponseTally> {
    let mut by_pair: BTreeMap<(&str, &str), ResponseTally> = BTreeMap::new();
    for (_, c) in labels.ccr_labels(svd_id) {
        by_pair
            .entry((c.utt_i.as_str(), c.utt_j.as_str()))
            .or_default()
            .record(c.choice);
    }
    by_pair.into_values().filter(|t| t.total() >= min_responses).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PseudoF {
    Finite(f64),
    /// Zero within-group variance with non-zero between-group variance.
    Infinite,
}

impl PseudoF {
    pub fn value(self) -> f64 {
        match self {
            PseudoF::Finite(v) => v,
            PseudoF::Infinite => f64::INFINITY,
        }
    }
}

/// `(SS_between / (k - 1)) / (SS_within / (n - k))` for k groups and n observations.
pub fn pseudo_f(groups: &[Vec<f64>]) -> Result<PseudoF> {
    let k = groups.len();
    if k < 2 {
        return Err(Error::Degenerate(format!("pseudo-F needs at least 2 groups, got {k}")));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::Degenerate("pseudo-F group is empty".into()));
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    if n <= k {
        return Err(Error::Degenerate(format!(
            "pseudo-F needs more observations ({n}) than groups ({k})"
        )));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Validation("pseudo-F needs finite scores".into()));
    }
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut between = 0.0;
    let mut within = 0.0;
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        between += g.len() as f64 * (m - grand).powi(2);
        within += g.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    if within == 0.0 {
        return if between == 0.0 {
            Err(Error::Degenerate("all observations are equal (0/0)".into()))
        } else {
            Ok(PseudoF::Infinite)
        };
    }
    Ok(PseudoF::Finite((between / (k - 1) as f64) / (within / (n - k) as f64)))
}

pub fn acr_mse(predicted: &[f64], ratings: &[f64]) -> Result<f64> {
    if predicted.len() != ratings.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} ratings",
            predicted.len(),
            ratings.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Empty("acr_mse needs at least one pair"));
    }
    Ok(predicted.iter().zip(ratings).map(|(p, r)| (p - r).powi(2)).sum::<f64>() / predicted.len() as f64)
}

/// Evaluation summary written by the `eval` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub svd: String,
    pub n_pairs_strong: usize,
    pub n_pairs_weak: usize,
    pub ppref_strong: Option<f64>,
    pub ppref_weak: Option<f64>,
    pub ties_strong: usize,
    pub ties_weak: usize,
    pub ub_strong: Option<f64>,
    pub ub_weak: Option<f64>,
}

impl MetricReport {
    pub fn from_predictions(svd: &str, predictions: &[PrefPrediction], bound: Option<&UpperBound>) -> Self {
        let strong = ppref_count(predictions, Subset::Strong).ok();
        let weak = ppref_count(predictions, Subset::Weak).ok();
        MetricReport {
            svd: svd.to_string(),
            n_pairs_strong: strong.map_or(0, |c| c.kept),
            n_pairs_weak: weak.map_or(0, |c| c.kept),
            ppref_strong: strong.map(|c| c.precision()),
            ppref_weak: weak.map(|c| c.precision()),
            ties_strong: strong.map_or(0, |c| c.ties),
            ties_weak: weak.map_or(0, |c| c.ties),
            ub_strong: bound.and_then(|b| b.strong),
            ub_weak: bound.and_then(|b| b.weak),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pred(si: f64, sj: f64, choice: CcrChoice) -> PrefPrediction {
        PrefPrediction {
            score_i: si,
            score_j: sj,
            choice,
        }
    }

    #[test]
    fn counting_example() {
        // A=2, B=1, C=3: (A,B) "A more" is right; (B,C) "B more" is wrong.
        let p = [pred(2.0, 1.0, CcrChoice::IMore), pred(1.0, 3.0, CcrChoice::IMore)];
        assert_eq!(ppref(&p, Subset::Strong).unwrap(), 0.5);
    }

    #[test]
    fn constant_scorer_scores_zero() {
        let p = [pred(1.0, 1.0, CcrChoice::IMore), pred(1.0, 1.0, CcrChoice::JMore)];
        let c = ppref_count(&p, Subset::Strong).unwrap();
        assert_eq!(c.precision(), 0.0);
        assert_eq!(c.ties, 2);
    }

    #[test]
    fn empty_subset_is_error() {
        let p = [pred(1.0, 2.0, CcrChoice::JMore)];
        assert!(ppref(&p, Subset::Weak).is_err());
        assert_eq!(ppref(&p, Subset::Strong).unwrap(), 1.0);
    }

    #[test]
    fn tally_example() {
        let ub = upper_bound_estimate(&[ResponseTally::new(40, 5, 3, 2)]).unwrap();
        assert_eq!(ub.strong, Some(40.0 / 42.0));
        assert_eq!(ub.weak, Some(5.0 / 8.0));
    }

    #[test]
    fn unanimous_question() {
        let ub = upper_bound_estimate(&[ResponseTally::new(50, 0, 0, 0)]).unwrap();
        assert_eq!(ub.strong, Some(1.0));
        assert_eq!(ub.weak, None);
        assert_eq!(ub.weak_questions, 0);
        assert!(upper_bound_estimate(&[]).is_err());
        assert!(upper_bound_estimate(&[ResponseTally::default()]).is_err());
    }

    #[test]
    fn pseudo_f_examples() {
        assert_eq!(
            pseudo_f(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap(),
            PseudoF::Finite(8.0)
        );
        assert!(pseudo_f(&[vec![2.0, 2.0], vec![2.0, 2.0]]).is_err());
        assert_eq!(
            pseudo_f(&[vec![1.0, 3.0], vec![0.0, 4.0]]).unwrap(),
            PseudoF::Finite(0.0)
        );
        assert_eq!(pseudo_f(&[vec![1.0, 1.0], vec![3.0, 3.0]]).unwrap(), PseudoF::Infinite);
        assert!(pseudo_f(&[vec![1.0, 2.0]]).is_err());
        assert!(pseudo_f(&[vec![1.0], vec![2.0]]).is_err());
        assert!(pseudo_f(&[vec![1.0, 2.0], vec![]]).is_err());
    }

    #[test]
    fn pseudo_f_by_brute_force_sums() {
        // Between-group SS taken as total SS minus within SS, with explicit loops.
        let groups = vec![vec![1.0, 2.5, 0.5], vec![4.0, 3.0], vec![-1.0, 0.0, 2.0, 1.0]];
        let all: Vec<f64> = groups.iter().flatten().copied().collect();
        let n = all.len() as f64;
        let mut total_ss = 0.0;
        let grand = all.iter().sum::<f64>() / n;
        for v in &all {
            total_ss += (v - grand) * (v - grand);
        }
        let mut within = 0.0;
        for g in &groups {
            let m = g.iter().sum::<f64>() / g.len() as f64;
            for v in g {
                within += (v - m) * (v - m);
            }
        }
        let between = total_ss - within;
        let expected = (between / 2.0) / (within / (n - 3.0));
        let got = pseudo_f(&groups).unwrap().value();
        assert!((got - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(acr_mse(&[1.0, 2.0], &[3.0, 2.0]).unwrap(), 2.0);
        assert_eq!(acr_mse(&[4.0, 1.5], &[4.0, 1.5]).unwrap(), 0.0);
        assert!(acr_mse(&[1.0], &[1.0, 2.0]).is_err());
        let p: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let r: Vec<f64> = (0..50).map(|i| (i % 5 + 1) as f64).collect();
        let mut s = 0.0;
        for i in 0..50 {
            s += (p[i] - r[i]) * (p[i] - r[i]);
        }
        assert!((acr_mse(&p, &r).unwrap() - s / 50.0).abs() < 1e-12);
    }

    #[test]
    fn tallies_group_by_ordered_pair() {
        use crate::dataset::{CcrLabel, LabelRecord};
        let c = |i: &str, j: &str, choice| {
            LabelRecord::Ccr(CcrLabel {
                svd_id: "x".into(),
                annotator_id: "a".into(),
                utt_i: i.into(),
                utt_j: j.into(),
                choice,
            })
        };
        let labels = LabelSet::new(vec![
            c("u1", "u2", CcrChoice::IMore),
            c("u1", "u2", CcrChoice::IMore),
            c("u1", "u2", CcrChoice::JLittleMore),
            c("u3", "u4", CcrChoice::JMore),
        ]);
        let t = tallies_from_labels(&labels, "x", 2);
        assert_eq!(t, vec![ResponseTally::new(2, 0, 1, 0)]);
    }

    fn choice_strategy() -> impl Strategy<Value = CcrChoice> {
        prop::sample::select(CcrChoice::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn upper_bound_in_half_to_one(t in prop::collection::vec((0u32..30, 0u32..30, 0u32..30, 0u32..30), 1..20)) {
            let tallies: Vec<_> = t.into_iter().map(|(a, b, c, d)| ResponseTally::new(a, b, c, d)).filter(|t| t.total() > 0).collect();
            prop_assume!(!tallies.is_empty());
            let ub = upper_bound_estimate(&tallies).unwrap();
            for v in [ub.strong, ub.weak].into_iter().flatten() {
                prop_assert!((0.5..=1.0).contains(&v));
            }
        }

        #[test]
        fn ppref_invariances(
            items in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, choice_strategy()), 1..40),
            slope in 0.01f64..10.0,
            shift in -100.0f64..100.0,
        ) {
            let preds: Vec<_> = items.iter().map(|&(a, b, c)| pred(a, b, c)).collect();
            let affine: Vec<_> = items.iter().map(|&(a, b, c)| pred(slope * a + shift, slope * b + shift, c)).collect();
            let expd: Vec<_> = items.iter().map(|&(a, b, c)| pred(a.exp(), b.exp(), c)).collect();
            let swapped: Vec<_> = items.iter().map(|&(a, b, c)| pred(b, a, c.mirror())).collect();
            for subset in [Subset::Strong, Subset::Weak] {
                let base = ppref_count(&preds, subset).ok().map(|c| (c.correct, c.kept));
                prop_assert_eq!(base, ppref_count(&expd, subset).ok().map(|c| (c.correct, c.kept)));
                prop_assert_eq!(base, ppref_count(&swapped, subset).ok().map(|c| (c.correct, c.kept)));
                // Affine maps can merge nearly equal scores in floating point, so
                // compare only when no pair is that close.
                if items.iter().all(|&(a, b, _)| (a - b).abs() > 1e-9) {
                    prop_assert_eq!(base, ppref_count(&affine, subset).ok().map(|c| (c.correct, c.kept)));
                }
            }
        }
    }
}
