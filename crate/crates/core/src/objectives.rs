//! Auxiliary objectives and the combined training loss.
//!
//! * `L_disc`: a discriminator scores `[h_i : c_i]` (word vector with its own
//!   exclude-self context) against `[h_i : c_j]` (a context drawn from another
//!   word position in the mini-batch). Minimizing its binary cross-entropy
//!   jointly with everything else pushes word and context representations
//!   toward high mutual information.
//! * `L_wp`: predict each word's label from its context vector alone.
//! * `L_sp`: multi-label prediction of which labels occur in the sentence,
//!   from the max-pooled sentence vector.
//!
//! `L = L_pred + alpha * L_disc + beta * L_wp + gamma * L_sp`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::FeedForwardHead;
use crate::numerics::{Bound, Graph, ParamSet, Tensor, Var};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Logit interval equivalent to the probability clamp.
pub fn logit_clamp() -> (f64, f64) {
    let hi = ((1.0 - PROB_CLAMP) / PROB_CLAMP).ln();
    (-hi, hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.1,
            gamma: 0.1,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Two-layer feed-forward net over `[word : context]` followed by a sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub head: FeedForwardHead,
}

impl Discriminator {
    /// `vector_dim` is the width of one word (or context) vector.
    pub fn new(prefix: &str, vector_dim: usize, hidden_dim: usize) -> Self {
        Self {
            head: FeedForwardHead::new(prefix, 2 * vector_dim, hidden_dim, 1),
        }
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) {
        self.head.init(params, rng);
    }

    /// Pre-sigmoid scores for rows `[words_i : contexts_i]`, `N x 1`.
    pub fn logits(&self, g: &mut Graph, bound: &Bound, words: Var, contexts: Var) -> Result<Var> {
        let pair = g.concat(&[words, contexts], 1)?;
        self.head.forward(g, bound, pair)
    }

    /// `D([w : c])` for each row, clamped into `[1e-7, 1 - 1e-7]`.
    pub fn probabilities(&self, g: &mut Graph, bound: &Bound, words: Var, contexts: Var) -> Result<Vec<f64>> {
        let z = self.logits(g, bound, words, contexts)?;
        let (lo, hi) = logit_clamp();
        let log_p = g.log_sigmoid(z, lo, hi);
        Ok(g.value(log_p).data().iter().map(|v| v.exp()).collect())
    }
}

/// For each of `n` word positions, a partner drawn uniformly from the other
/// `n - 1`; `None` when no other position exists.
pub fn sample_negatives(n: usize, rng: &mut impl Rng) -> Vec<Option<usize>> {
    (0..n)
        .map(|i| {
            if n < 2 {
                return None;
            }
            let r = rng.gen_range(0..n - 1);
            Some(if r >= i { r + 1 } else { r })
        })
        .collect()
}

/// Mean over word positions of
/// `-[log D([h_i : c_i]) + log(1 - D([h_i : c_j]))]`, where `j =
/// negatives[i]`. A position without a partner contributes only its
/// positive term.
pub fn mi_discriminator_loss(
    g: &mut Graph,
    bound: &Bound,
    words: Var,
    contexts: Var,
    negatives: &[Option<usize>],
    disc: &Discriminator,
) -> Result<Var> {
    let n = g.value(words).rows();
    if g.value(contexts).shape() != g.value(words).shape() {
        return Err(Error::Shape {
            op: "mi_discriminator_loss",
            lhs: g.value(words).shape().to_vec(),
            rhs: g.value(contexts).shape().to_vec(),
        });
    }
    if negatives.len() != n || n == 0 {
        return Err(Error::LengthMismatch(format!(
            "{} negative assignments for {n} word positions",
            negatives.len()
        )));
    }
    let (lo, hi) = logit_clamp();
    let pos = disc.logits(g, bound, words, contexts)?;
    let pos = g.log_sigmoid(pos, lo, hi);
    let mut total = g.sum(pos);

    let (anchors, partners): (Vec<usize>, Vec<usize>) = negatives
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .unzip();
    if let Some(&bad) = partners.iter().find(|&&j| j >= n) {
        return Err(Error::IndexOutOfRange {
            what: "negative partner",
            index: bad,
            bound: n,
        });
    }
    if anchors.len() < n {
        log::warn!(
            "{} word position(s) had no negative partner; positive term only",
            n - anchors.len()
        );
    }
    if !anchors.is_empty() {
        let w = g.gather_rows(words, &anchors)?;
        let c = g.gather_rows(contexts, &partners)?;
        let neg = disc.logits(g, bound, w, c)?;
        let neg = g.scale(neg, -1.0);
        let neg = g.log_sigmoid(neg, lo, hi);
        let neg = g.sum(neg);
        total = g.add(total, neg)?;
    }
    Ok(g.scale(total, -1.0 / n as f64))
}

/// `(1/n) sum_i -log softmax(FF(c_i))[y_i]`.
pub fn word_from_context_loss(
    g: &mut Graph,
    bound: &Bound,
    contexts: Var,
    gold: &[usize],
    head: &FeedForwardHead,
) -> Result<Var> {
    let n = g.value(contexts).rows();
    if gold.len() != n {
        return Err(Error::LengthMismatch(format!("{} labels for {n} contexts", gold.len())));
    }
    if let Some(&bad) = gold.iter().find(|&&y| y >= head.output_dim) {
        return Err(Error::IndexOutOfRange {
            what: "word label",
            index: bad,
            bound: head.output_dim,
        });
    }
    let logits = head.forward(g, bound, contexts)?;
    let logp = g.log_softmax_rows(logits)?;
    let picked = g.pick(logp, gold)?;
    let mean = g.mean(picked)?;
    Ok(g.scale(mean, -1.0))
}

/// Binary vector over the label space: 1 iff the label occurs in the
/// sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceLabelVector(pub Vec<f64>);

impl SentenceLabelVector {
    /// `space[y]` maps a label id into the target space (identity when
    /// `None`).
    pub fn from_labels(labels: &[usize], size: usize, space: Option<&[usize]>) -> Result<Self> {
        let mut v = vec![0.0; size];
        for &y in labels {
            let k = space.map_or(Some(y), |m| m.get(y).copied()).unwrap_or(usize::MAX);
            if k >= size {
                return Err(Error::IndexOutOfRange {
                    what: "sentence label",
                    index: y,
                    bound: size,
                });
            }
            v[k] = 1.0;
        }
        Ok(Self(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `(1/|L|) sum_k -[y_k log P_k + (1 - y_k) log(1 - P_k)]` with
/// `P = sigmoid(FF(H))`, clamped.
pub fn sentence_label_loss(
    g: &mut Graph,
    bound: &Bound,
    sentence: Var,
    target: &SentenceLabelVector,
    head: &FeedForwardHead,
) -> Result<Var> {
    if target.len() != head.output_dim {
        return Err(Error::LengthMismatch(format!(
            "sentence target has {} entries, head predicts {}",
            target.len(),
            head.output_dim
        )));
    }
    let (lo, hi) = logit_clamp();
    let z = head.forward(g, bound, sentence)?;
    let log_p = g.log_sigmoid(z, lo, hi);
    let neg_z = g.scale(z, -1.0);
    let log_q = g.log_sigmoid(neg_z, lo, hi);
    let y = g.constant(Tensor::row_vector(target.0.clone()));
    let not_y = g.constant(Tensor::row_vector(target.0.iter().map(|v| 1.0 - v).collect()));
    let a = g.mul(y, log_p)?;
    let b = g.mul(not_y, log_q)?;
    let ll = g.add(a, b)?;
    let mean = g.mean(ll)?;
    Ok(g.scale(mean, -1.0))
}

/// `l_pred + alpha * l_disc + beta * l_wp + gamma * l_sp`.
pub fn combined_loss(
    g: &mut Graph,
    l_pred: Var,
    l_disc: Var,
    l_wp: Var,
    l_sp: Var,
    w: &LossWeights,
) -> Result<Var> {
    w.validate()?;
    let terms = [("l_pred", l_pred, 1.0), ("l_disc", l_disc, w.alpha), ("l_wp", l_wp, w.beta), ("l_sp", l_sp, w.gamma)];
    for (name, v, _) in terms {
        let t = g.value(v);
        if !t.is_scalar() {
            return Err(Error::NotScalar(t.shape().to_vec()));
        }
        if !t.item().is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
    }
    let mut total = l_pred;
    for (_, v, weight) in &terms[1..] {
        let scaled = g.scale(*v, *weight);
        total = g.add(total, scaled)?;
    }
    Ok(total)
}
