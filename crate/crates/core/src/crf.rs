//! Linear-chain CRF with virtual START/STOP states.
//!
//! Label ids are `0..K`; the transition matrix is `(K+2) x (K+2)` with
//! `START = K` and `STOP = K+1`. A path `y` scores
//!
//! ```text
//! T[START, y_0] + sum_i E[i, y_i] + sum_i T[y_{i-1}, y_i] + T[y_{n-1}, STOP]
//! ```
//!
//! Entries into START and out of STOP are never read by any recursion; they
//! hold [`NEG_INF_SURROGATE`] so they stay finite under training.

use crate::error::{Error, Result};
use crate::numerics::{logsumexp, Graph, Tensor, Var};

/// Stand-in for `-inf` inside differentiable code.
pub const NEG_INF_SURROGATE: f64 = -1e4;

/// Per-token label scores, `n x K`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmissionTable {
    scores: Tensor,
}

impl EmissionTable {
    pub fn new(scores: Tensor) -> Result<Self> {
        let (n, k) = scores.dims2("emissions")?;
        if n == 0 || k == 0 {
            return Err(Error::EmptyAxis {
                op: "emissions",
                shape: vec![n, k],
            });
        }
        if !scores.all_finite() {
            return Err(Error::NonFinite("emission scores".into()));
        }
        Ok(Self { scores })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Tensor::from_rows(rows)?)
    }

    pub fn len(&self) -> usize {
        self.scores.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label_count(&self) -> usize {
        self.scores.cols()
    }

    pub fn scores(&self) -> &Tensor {
        &self.scores
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    scores: Tensor,
}

impl TransitionMatrix {
    /// Zero transitions between real labels and from START / to STOP.
    pub fn zeros(label_count: usize) -> Self {
        let size = label_count + 2;
        let mut scores = Tensor::zeros(&[size, size]);
        let (start, stop) = (label_count, label_count + 1);
        let d = scores.data_mut();
        for r in 0..size {
            d[r * size + start] = NEG_INF_SURROGATE;
            d[stop * size + r] = NEG_INF_SURROGATE;
        }
        Self { scores }
    }

    /// Wraps a full `(K+2) x (K+2)` matrix.
    pub fn new(scores: Tensor) -> Result<Self> {
        let (r, c) = scores.dims2("transitions")?;
        if r != c || r < 3 {
            return Err(Error::Shape {
                op: "transitions",
                lhs: vec![r, c],
                rhs: vec![r.max(3), r.max(3)],
            });
        }
        Ok(Self { scores })
    }

    /// Builds the matrix from real-label transitions plus START/STOP rows.
    pub fn from_parts(label: &[Vec<f64>], from_start: &[f64], to_stop: &[f64]) -> Result<Self> {
        let k = label.len();
        if from_start.len() != k || to_stop.len() != k || label.iter().any(|r| r.len() != k) {
            return Err(Error::LengthMismatch(format!(
                "transition parts for {k} labels"
            )));
        }
        let mut t = Self::zeros(k);
        let size = k + 2;
        let d = t.scores.data_mut();
        for a in 0..k {
            for b in 0..k {
                d[a * size + b] = label[a][b];
            }
            d[k * size + a] = from_start[a];
            d[a * size + k + 1] = to_stop[a];
        }
        Ok(t)
    }

    pub fn label_count(&self) -> usize {
        self.scores.rows() - 2
    }

    pub fn start(&self) -> usize {
        self.label_count()
    }

    pub fn stop(&self) -> usize {
        self.label_count() + 1
    }

    pub fn scores(&self) -> &Tensor {
        &self.scores
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.scores.at(from, to)
    }
}

fn check_compatible(em: &EmissionTable, tr: &TransitionMatrix) -> Result<()> {
    if em.label_count() != tr.label_count() {
        return Err(Error::Shape {
            op: "crf",
            lhs: em.scores().shape().to_vec(),
            rhs: tr.scores().shape().to_vec(),
        });
    }
    Ok(())
}

fn check_gold(em: &EmissionTable, gold: &[usize]) -> Result<()> {
    if gold.len() != em.len() {
        return Err(Error::LengthMismatch(format!(
            "gold path has {} labels for {} tokens",
            gold.len(),
            em.len()
        )));
    }
    if let Some(&bad) = gold.iter().find(|&&y| y >= em.label_count()) {
        return Err(Error::IndexOutOfRange {
            what: "gold label",
            index: bad,
            bound: em.label_count(),
        });
    }
    Ok(())
}

/// Unnormalized log-score of one label path.
pub fn path_score(em: &EmissionTable, tr: &TransitionMatrix, path: &[usize]) -> Result<f64> {
    check_compatible(em, tr)?;
    check_gold(em, path)?;
    let e = em.scores();
    let mut s = tr.get(tr.start(), path[0]) + e.at(0, path[0]);
    for i in 1..path.len() {
        s += tr.get(path[i - 1], path[i]) + e.at(i, path[i]);
    }
    Ok(s + tr.get(path[path.len() - 1], tr.stop()))
}

/// `alpha[i][y]`: log-sum of all prefixes ending in `y` at `i`, emission
/// `i` included.
fn forward(em: &EmissionTable, tr: &TransitionMatrix) -> Vec<Vec<f64>> {
    let (n, k) = (em.len(), em.label_count());
    let e = em.scores();
    let mut alpha = vec![vec![0.0; k]; n];
    for y in 0..k {
        alpha[0][y] = tr.get(tr.start(), y) + e.at(0, y);
    }
    let mut buf = vec![0.0; k];
    for i in 1..n {
        for y in 0..k {
            for (p, b) in buf.iter_mut().enumerate() {
                *b = alpha[i - 1][p] + tr.get(p, y);
            }
            alpha[i][y] = logsumexp(&buf) + e.at(i, y);
        }
    }
    alpha
}

/// `beta[i][y]`: log-sum of all suffixes after `i` given `y` at `i`,
/// STOP transition included, emission `i` excluded.
fn backward(em: &EmissionTable, tr: &TransitionMatrix) -> Vec<Vec<f64>> {
    let (n, k) = (em.len(), em.label_count());
    let e = em.scores();
    let mut beta = vec![vec![0.0; k]; n];
    for y in 0..k {
        beta[n - 1][y] = tr.get(y, tr.stop());
    }
    let mut buf = vec![0.0; k];
    for i in (0..n - 1).rev() {
        for y in 0..k {
            for (nx, b) in buf.iter_mut().enumerate() {
                *b = tr.get(y, nx) + e.at(i + 1, nx) + beta[i + 1][nx];
            }
            beta[i][y] = logsumexp(&buf);
        }
    }
    beta
}

fn log_z_from(alpha: &[Vec<f64>], tr: &TransitionMatrix) -> f64 {
    let last = alpha.last().expect("n >= 1");
    let terms: Vec<f64> = last
        .iter()
        .enumerate()
        .map(|(y, a)| a + tr.get(y, tr.stop()))
        .collect();
    logsumexp(&terms)
}

/// Log partition function via the forward algorithm.
pub fn log_partition(em: &EmissionTable, tr: &TransitionMatrix) -> Result<f64> {
    check_compatible(em, tr)?;
    Ok(log_z_from(&forward(em, tr), tr))
}

/// `log Z - score(gold)`.
pub fn crf_nll_value(em: &EmissionTable, tr: &TransitionMatrix, gold: &[usize]) -> Result<f64> {
    Ok(log_partition(em, tr)? - path_score(em, tr, gold)?)
}

fn marginals_from(alpha: &[Vec<f64>], beta: &[Vec<f64>], log_z: f64) -> Vec<Vec<f64>> {
    alpha
        .iter()
        .zip(beta)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x + y - log_z).exp()).collect())
        .collect()
}

/// Posterior `P(y_i = y | x)` by forward-backward, `n x K`.
pub fn crf_marginals(em: &EmissionTable, tr: &TransitionMatrix) -> Result<Tensor> {
    check_compatible(em, tr)?;
    let alpha = forward(em, tr);
    let beta = backward(em, tr);
    let log_z = log_z_from(&alpha, tr);
    Tensor::from_rows(&marginals_from(&alpha, &beta, log_z))
}

/// Highest-scoring path and its score. Among equal-scoring paths the
/// lexicographically smallest label sequence wins.
pub fn viterbi_decode(em: &EmissionTable, tr: &TransitionMatrix) -> Result<(Vec<usize>, f64)> {
    check_compatible(em, tr)?;
    let (n, k) = (em.len(), em.label_count());
    let e = em.scores();
    // best[i][y]: best suffix score after position i given y at i
    let mut best = vec![vec![0.0; k]; n];
    for y in 0..k {
        best[n - 1][y] = tr.get(y, tr.stop());
    }
    for i in (0..n - 1).rev() {
        for y in 0..k {
            best[i][y] = (0..k)
                .map(|nx| tr.get(y, nx) + e.at(i + 1, nx) + best[i + 1][nx])
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }
    // Greedy left-to-right: strict `>` keeps the smallest label on ties.
    let mut path = Vec::with_capacity(n);
    let mut prev = tr.start();
    for (i, suffix) in best.iter().enumerate() {
        let mut arg = 0;
        let mut top = f64::NEG_INFINITY;
        for y in 0..k {
            let v = tr.get(prev, y) + e.at(i, y) + suffix[y];
            if v > top {
                top = v;
                arg = y;
            }
        }
        path.push(arg);
        prev = arg;
    }
    let score = path_score(em, tr, &path)?;
    Ok((path, score))
}

/// Differentiable sentence NLL. `emissions` is `n x K`, `transitions` is
/// `(K+2) x (K+2)`. The local gradients are posterior minus empirical
/// feature counts, computed by forward-backward.
pub fn crf_nll(g: &mut Graph, emissions: Var, transitions: Var, gold: &[usize]) -> Result<Var> {
    let em = EmissionTable::new(g.value(emissions).clone())?;
    let tr = TransitionMatrix::new(g.value(transitions).clone())?;
    check_compatible(&em, &tr)?;
    check_gold(&em, gold)?;
    let (n, k) = (em.len(), em.label_count());
    let e = em.scores();
    let alpha = forward(&em, &tr);
    let beta = backward(&em, &tr);
    let log_z = log_z_from(&alpha, &tr);
    let value = log_z - path_score(&em, &tr, gold)?;

    let unary = marginals_from(&alpha, &beta, log_z);
    let mut d_em = Tensor::zeros(&[n, k]);
    {
        let d = d_em.data_mut();
        for i in 0..n {
            for y in 0..k {
                d[i * k + y] = unary[i][y];
            }
            d[i * k + gold[i]] -= 1.0;
        }
    }
    let size = k + 2;
    let (start, stop) = (tr.start(), tr.stop());
    let mut d_tr = Tensor::zeros(&[size, size]);
    {
        let d = d_tr.data_mut();
        for y in 0..k {
            d[start * size + y] += unary[0][y];
            d[y * size + stop] += unary[n - 1][y];
        }
        for i in 1..n {
            for a in 0..k {
                for b in 0..k {
                    let lp = alpha[i - 1][a] + tr.get(a, b) + e.at(i, b) + beta[i][b] - log_z;
                    d[a * size + b] += lp.exp();
                }
            }
        }
        d[start * size + gold[0]] -= 1.0;
        d[gold[n - 1] * size + stop] -= 1.0;
        for i in 1..n {
            d[gold[i - 1] * size + gold[i]] -= 1.0;
        }
    }
    g.scalar_custom(value, &[emissions, transitions], vec![d_em, d_tr])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_potentials_give_log_k_to_the_n() {
        let em = EmissionTable::new(Tensor::zeros(&[2, 3])).unwrap();
        let tr = TransitionMatrix::zeros(3);
        let nll = crf_nll_value(&em, &tr, &[0, 2]).unwrap();
        assert!((nll - 9f64.ln()).abs() < 1e-12);
        assert!((nll - 2.19722).abs() < 1e-5);
    }

    #[test]
    fn single_token_reduces_to_softmax() {
        let (a, b) = (0.7, -1.3);
        let em = EmissionTable::from_rows(&[vec![a, b]]).unwrap();
        let tr = TransitionMatrix::zeros(2);
        let nll = crf_nll_value(&em, &tr, &[0]).unwrap();
        assert!((nll - ((a.exp() + b.exp()).ln() - a)).abs() < 1e-12);
        let m = crf_marginals(&em, &tr).unwrap();
        let z = a.exp() + b.exp();
        assert!((m.at(0, 0) - a.exp() / z).abs() < 1e-12);
        assert!((m.at(0, 1) - b.exp() / z).abs() < 1e-12);
    }

    #[test]
    fn zero_transitions_decode_to_per_position_argmax() {
        let em = EmissionTable::from_rows(&[vec![0.1, 2.0, -1.0], vec![3.0, 0.0, 0.5], vec![0.0, 0.0, 0.2]])
            .unwrap();
        let (path, _) = viterbi_decode(&em, &TransitionMatrix::zeros(3)).unwrap();
        assert_eq!(path, vec![1, 0, 2]);
    }

    #[test]
    fn all_equal_potentials_decode_to_zeros() {
        let em = EmissionTable::new(Tensor::full(&[4, 3], 0.25)).unwrap();
        let (path, score) = viterbi_decode(&em, &TransitionMatrix::zeros(3)).unwrap();
        assert_eq!(path, vec![0, 0, 0, 0]);
        assert_eq!(score, 1.0);
    }

    #[test]
    fn zero_potentials_give_uniform_marginals() {
        let em = EmissionTable::new(Tensor::zeros(&[3, 3])).unwrap();
        let m = crf_marginals(&em, &TransitionMatrix::zeros(3)).unwrap();
        for v in m.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_gold_is_rejected() {
        let em = EmissionTable::new(Tensor::zeros(&[2, 3])).unwrap();
        let tr = TransitionMatrix::zeros(3);
        assert!(matches!(crf_nll_value(&em, &tr, &[0]), Err(Error::LengthMismatch(_))));
        assert!(matches!(
            crf_nll_value(&em, &tr, &[0, 3]),
            Err(Error::IndexOutOfRange { index: 3, .. })
        ));
        assert!(log_partition(&em, &TransitionMatrix::zeros(2)).is_err());
    }

    #[test]
    fn start_and_stop_surrogates_are_in_place() {
        let tr = TransitionMatrix::zeros(2);
        for r in 0..4 {
            assert_eq!(tr.get(r, tr.start()), NEG_INF_SURROGATE);
            assert_eq!(tr.get(tr.stop(), r), NEG_INF_SURROGATE);
        }
        assert_eq!(tr.get(tr.start(), 0), 0.0);
    }
}
