//! Pointwise (ACR) and pairwise (RankNet) losses.

/// Squared error against an ACR rating and its derivative in the score.
pub fn mse_loss(score: f64, rating: f64) -> (f64, f64) {
    let r = score - rating;
    (r * r, 2.0 * r)
}

/// `1 / (1 + exp(-(score_j - score_i)))`: modeled probability that j is
/// perceived as exhibiting the descriptor more than i.
pub fn ranknet_probability(score_i: f64, score_j: f64) -> f64 {
    sigmoid(score_j - score_i)
}

pub(crate) fn sigmoid(d: f64) -> f64 {
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

const PROB_CLAMP: f64 = 1e-12;

/// Binary cross-entropy `-(P ln Q + (1 - P) ln(1 - Q))` and its derivative in Q,
/// with Q clamped to `[1e-12, 1 - 1e-12]`.
pub fn ranknet_loss(target: f64, predicted: f64) -> (f64, f64) {
    let q = predicted.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let loss = -(target * q.ln() + (1.0 - target) * (1.0 - q).ln());
    let grad = -target / q + (1.0 - target) / (1.0 - q);
    (loss, grad)
}

/// RankNet loss of one ordered pair computed directly from the score gap,
/// returning `(loss, d loss / d score_i, d loss / d score_j)`.
///
/// Equal to `ranknet_loss(target, ranknet_probability(si, sj))` away from the
/// clamp, but stays accurate (and keeps a non-vanishing gradient) for large
/// score gaps.
pub fn ranknet_pair_loss(score_i: f64, score_j: f64, target: f64) -> (f64, f64, f64) {
    let d = score_j - score_i;
    let loss = target * softplus(-d) + (1.0 - target) * softplus(d);
    let dd = sigmoid(d) - target;
    (loss, -dd, dd)
}
