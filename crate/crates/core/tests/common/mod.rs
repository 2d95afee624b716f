#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use slotfill::crf::TransitionMatrix;
use slotfill::model::ModelConfig;
use slotfill::training::TrainConfig;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn read_tags(name: &str) -> Vec<Vec<String>> {
    std::fs::read_to_string(fixture(name))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect()
}

/// A model small enough for several full training runs per test.
pub fn small_model() -> ModelConfig {
    ModelConfig {
        word_dim: 50,
        pos_dim: 10,
        lstm_hidden: 50,
        ff_hidden: 50,
        ..ModelConfig::default()
    }
}

pub fn small_train(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        max_epochs: 30,
        seed,
        ..TrainConfig::default()
    }
}

/// Raw potentials of a random chain: emissions `n x k`, label-to-label
/// scores, start and stop scores.
pub struct Chain {
    pub emissions: Vec<Vec<f64>>,
    pub label: Vec<Vec<f64>>,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
}

impl Chain {
    pub fn random(rng: &mut impl Rng, n: usize, k: usize) -> Self {
        let mut v = |len: usize| (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>();
        Self {
            emissions: (0..n).map(|_| v(k)).collect(),
            label: (0..k).map(|_| v(k)).collect(),
            start: v(k),
            stop: v(k),
        }
    }

    /// Length in `1..=max_n`, label count in `1..=max_k`.
    pub fn random_sized(rng: &mut impl Rng, max_n: usize, max_k: usize) -> Self {
        let n = rng.gen_range(1..=max_n);
        let k = rng.gen_range(1..=max_k);
        Self::random(rng, n, k)
    }

    pub fn n(&self) -> usize {
        self.emissions.len()
    }

    pub fn k(&self) -> usize {
        self.start.len()
    }

    pub fn transitions(&self) -> TransitionMatrix {
        TransitionMatrix::from_parts(&self.label, &self.start, &self.stop).unwrap()
    }

    /// Score of one path, written out from the definition.
    pub fn score(&self, path: &[usize]) -> f64 {
        let mut s = self.start[path[0]] + self.stop[path[path.len() - 1]];
        for (i, &y) in path.iter().enumerate() {
            s += self.emissions[i][y];
            if i > 0 {
                s += self.label[path[i - 1]][y];
            }
        }
        s
    }

    /// Every label sequence in lexicographic order.
    pub fn paths(&self) -> Vec<Vec<usize>> {
        let (n, k) = (self.n(), self.k());
        (0..k.pow(n as u32))
            .map(|mut code| {
                let mut p = vec![0; n];
                for slot in p.iter_mut().rev() {
                    *slot = code % k;
                    code /= k;
                }
                p
            })
            .collect()
    }

    pub fn log_partition(&self) -> f64 {
        let scores: Vec<f64> = self.paths().iter().map(|p| self.score(p)).collect();
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
    }

    pub fn marginals(&self) -> Vec<Vec<f64>> {
        let log_z = self.log_partition();
        let mut out = vec![vec![0.0; self.k()]; self.n()];
        for p in self.paths() {
            let prob = (self.score(&p) - log_z).exp();
            for (i, &y) in p.iter().enumerate() {
                out[i][y] += prob;
            }
        }
        out
    }

    /// Best path; the first maximum in lexicographic order wins ties.
    pub fn argmax(&self) -> (Vec<usize>, f64) {
        let mut best: Option<(Vec<usize>, f64)> = None;
        for p in self.paths() {
            let s = self.score(&p);
            if best.as_ref().is_none_or(|(_, b)| s > *b) {
                best = Some((p, s));
            }
        }
        best.unwrap()
    }
}
