use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scenegen::Pixel;

pub(crate) fn zero<T: Real>(tape: &Tape<T>) -> Var {
    tape.constant(Tensor::scalar(T::zero()))
}

pub(crate) fn add_all<T: Real>(tape: &Tape<T>, terms: &[Var]) -> Result<Var> {
    let mut acc = match terms.first() {
        Some(&t) => t,
        None => return Ok(zero(tape)),
    };
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// Sum of `terms` divided by `count`, or 0 when there is nothing to average.
pub(crate) fn mean_of<T: Real>(tape: &Tape<T>, terms: &[Var], count: usize) -> Result<Var> {
    if count == 0 {
        return Ok(zero(tape));
    }
    Ok(tape.scale(add_all(tape, terms)?, T::from_f64_lossy(1.0 / count as f64)))
}

/// Binary cross-entropy over the positive pixels plus
/// `ceil(neg_ratio * |positives|)` negatives drawn uniformly without
/// replacement from the remaining pixels (`empty_negatives` of them when
/// there are no positives), averaged over all selected pixels.
///
/// `pred` holds an `h x w` map in its trailing two dimensions.
pub fn heatmap_loss<T: Real>(
    tape: &Tape<T>,
    pred: Var,
    positives: &[Pixel],
    neg_ratio: f64,
    empty_negatives: usize,
    seed: u64,
) -> Result<Var> {
    let s = tape.shape(pred);
    if s.len() < 2 || s[..s.len() - 2].iter().any(|&d| d != 1) {
        return Err(Error::shape(format!("heatmap_loss: expected an h x w map, got {s:?}")));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let mut is_positive = vec![false; h * w];
    let mut chosen = Vec::new();
    for &(x, y) in positives {
        if x >= w || y >= h {
            return Err(Error::Invalid(format!("positive pixel ({x}, {y}) outside {w}x{h}")));
        }
        if !is_positive[y * w + x] {
            is_positive[y * w + x] = true;
            chosen.push(y * w + x);
        }
    }
    let n_pos = chosen.len();
    let pool: Vec<usize> = (0..h * w).filter(|&i| !is_positive[i]).collect();
    let wanted = if n_pos == 0 {
        empty_negatives
    } else {
        (neg_ratio * n_pos as f64).ceil() as usize
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, pool.len(), wanted.min(pool.len()));
    chosen.extend(picks.iter().map(|i| pool[i]));
    if chosen.is_empty() {
        return Ok(zero(tape));
    }
    let mut targets = vec![T::zero(); chosen.len()];
    targets[..n_pos].fill(T::one());
    let n = chosen.len();
    let p = tape.select(pred, &chosen, &[n])?;
    Ok(tape.mean(tape.bce(p, &targets)?))
}

/// `(1 / sum K_i) * sum_i sum_k ||h_i - h'_ik||^2`; zero without references.
pub fn pull_loss<T: Real>(tape: &Tape<T>, vertices: &[Var], references: &[Vec<Var>]) -> Result<Var> {
    if vertices.len() != references.len() {
        return Err(Error::shape(format!(
            "pull_loss: {} vertices, {} reference sets",
            vertices.len(),
            references.len()
        )));
    }
    let mut terms = Vec::new();
    for (&h, refs) in vertices.iter().zip(references) {
        for &r in refs {
            terms.push(tape.sum(tape.square(tape.sub(h, r)?)));
        }
    }
    let n = terms.len();
    mean_of(tape, &terms, n)
}

/// `sum_{i<j} max(0, m - ||h_i - h_j||)`.
pub fn push_loss<T: Real>(tape: &Tape<T>, vertices: &[Var], margin: f64) -> Result<Var> {
    let mut terms = Vec::new();
    for i in 0..vertices.len() {
        for j in i + 1..vertices.len() {
            let dist = tape.norm(tape.sub(vertices[i], vertices[j])?);
            let slack = tape.shift(tape.scale(dist, -T::one()), T::from_f64_lossy(margin));
            terms.push(tape.relu(slack));
        }
    }
    add_all(tape, &terms)
}

/// Softmax cross-entropy of a logit vector against a class index.
pub fn cross_entropy<T: Real>(tape: &Tape<T>, logits: Var, target: usize) -> Result<Var> {
    let k = tape.value(logits).numel();
    if target >= k {
        return Err(Error::Invalid(format!("class {target} out of range for {k} logits")));
    }
    let flat = tape.reshape(logits, &[k])?;
    let picked = tape.select(tape.log_softmax(flat), &[target], &[1])?;
    Ok(tape.scale(picked, -T::one()))
}

/// Smooth-L1 summed over the components of `pred - target`.
pub fn smooth_l1_loss<T: Real>(tape: &Tape<T>, pred: Var, target: &[f64]) -> Result<Var> {
    let shape = tape.shape(pred);
    let t = Tensor::new(shape, target.iter().map(|&v| T::from_f64_lossy(v)).collect())?;
    let diff = tape.sub(pred, tape.constant(t))?;
    Ok(tape.sum(tape.smooth_l1(diff)))
}

/// Slot-score cross-entropy, summed over slots.
pub fn score_loss<T: Real>(tape: &Tape<T>, scores: Var, full: &[bool]) -> Result<Var> {
    let targets: Vec<T> = full.iter().map(|&f| if f { T::one() } else { T::zero() }).collect();
    Ok(tape.sum(tape.bce(scores, &targets)?))
}
