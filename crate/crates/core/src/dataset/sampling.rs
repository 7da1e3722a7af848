//! Constrained random draws used by annotation sessions.

use rand::seq::index;
use rand::Rng as _;

use super::{Corpus, Svd, Utterance};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Draw an ordered pair sharing sentence and gender, uniformly over all
/// eligible unordered pairs, then orient it uniformly at random.
pub fn sample_ccr_pair<'c>(corpus: &'c Corpus, svd: &Svd, rng: &mut Rng) -> Result<(&'c Utterance, &'c Utterance)> {
    let groups: Vec<&[usize]> = corpus
        .groups()
        .filter(|(_, g, idx)| svd.gender_scope.admits(*g) && idx.len() >= 2)
        .map(|(_, _, idx)| idx)
        .collect();
    let weight = |n: usize| (n as u64) * (n as u64 - 1) / 2;
    let total: u64 = groups.iter().map(|g| weight(g.len())).sum();
    if total == 0 {
        return Err(Error::Config(format!(
            "no same-sentence, same-gender pair is available for {}",
            svd.id
        )));
    }
    let mut pick = rng.random_range(0..total);
    let group = groups
        .iter()
        .find(|g| {
            let w = weight(g.len());
            if pick < w {
                true
            } else {
                pick -= w;
                false
            }
        })
        .expect("pick < total");
    let two = index::sample(rng, group.len(), 2);
    let (mut a, mut b) = (group[two.index(0)], group[two.index(1)]);
    if rng.random_bool(0.5) {
        std::mem::swap(&mut a, &mut b);
    }
    let u = corpus.utterances();
    Ok((&u[a], &u[b]))
}

/// One uniformly random utterance within the descriptor's gender scope.
pub fn sample_in_scope<'c>(corpus: &'c Corpus, svd: &Svd, rng: &mut Rng) -> Result<&'c Utterance> {
    Ok(sample_distinct_in_scope(corpus, svd, 1, rng)?[0])
}

/// `k` distinct uniformly random utterances within the descriptor's gender scope.
pub fn sample_distinct_in_scope<'c>(
    corpus: &'c Corpus,
    svd: &Svd,
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<&'c Utterance>> {
    let pool: Vec<&Utterance> = corpus
        .utterances()
        .iter()
        .filter(|u| svd.gender_scope.admits(u.gender))
        .collect();
    if pool.len() < k || pool.is_empty() {
        return Err(Error::Config(format!(
            "need {k} utterances in scope of {} but the corpus has {}",
            svd.id,
            pool.len()
        )));
    }
    Ok(index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect())
}
