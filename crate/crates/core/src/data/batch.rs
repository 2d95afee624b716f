use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EncodedSentence;
use crate::layers::PAD;

/// Padded mini-batch; matrices are `n_max x B` (`[position][sentence]`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub sentence_ids: Vec<usize>,
    pub lengths: Vec<usize>,
    pub word_ids: Vec<Vec<usize>>,
    pub pos_ids: Vec<Vec<usize>>,
    pub label_ids: Vec<Vec<usize>>,
    pub mask: Vec<Vec<u8>>,
}

impl Batch {
    fn from_sentences(ids: &[usize], corpus: &[EncodedSentence]) -> Self {
        let n_max = ids.iter().map(|&i| corpus[i].len()).max().unwrap_or(0);
        let b = ids.len();
        let mut batch = Batch {
            sentence_ids: ids.to_vec(),
            lengths: ids.iter().map(|&i| corpus[i].len()).collect(),
            word_ids: vec![vec![PAD; b]; n_max],
            pos_ids: vec![vec![PAD; b]; n_max],
            label_ids: vec![vec![0; b]; n_max],
            mask: vec![vec![0; b]; n_max],
        };
        for (col, &i) in ids.iter().enumerate() {
            let s = &corpus[i];
            for t in 0..s.len() {
                batch.word_ids[t][col] = s.words[t];
                batch.pos_ids[t][col] = s.pos[t];
                batch.label_ids[t][col] = s.labels[t];
                batch.mask[t][col] = 1;
            }
        }
        batch
    }

    pub fn size(&self) -> usize {
        self.sentence_ids.len()
    }

    pub fn word_positions(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// Unpadded column `b`. Cells past `lengths[b]` are never read.
    pub fn sentence(&self, b: usize) -> EncodedSentence {
        let n = self.lengths[b];
        EncodedSentence {
            words: (0..n).map(|t| self.word_ids[t][b]).collect(),
            pos: (0..n).map(|t| self.pos_ids[t][b]).collect(),
            labels: (0..n).map(|t| self.label_ids[t][b]).collect(),
        }
    }

    pub fn sentences(&self) -> Vec<EncodedSentence> {
        (0..self.size()).map(|b| self.sentence(b)).collect()
    }
}

/// Every sentence lands in exactly one batch. With a seed the order is a
/// seeded shuffle; sentences are then sorted by length inside windows of
/// eight batches to cut padding. A trailing batch with fewer than two word
/// positions is folded into its predecessor so in-batch negatives exist.
pub fn make_batches(corpus: &[EncodedSentence], batch_size: usize, shuffle_seed: Option<u64>) -> Vec<Batch> {
    let batch_size = batch_size.max(1);
    let mut ids: Vec<usize> = (0..corpus.len()).collect();
    if let Some(seed) = shuffle_seed {
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    for window in ids.chunks_mut(batch_size * 8) {
        window.sort_by_key(|&i| corpus[i].len());
    }
    let mut groups: Vec<Vec<usize>> = ids.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if groups.len() >= 2 {
        let last = groups.last().expect("non-empty");
        if last.iter().map(|&i| corpus[i].len()).sum::<usize>() < 2 {
            let tail = groups.pop().expect("non-empty");
            groups.last_mut().expect("non-empty").extend(tail);
        }
    }
    groups.iter().map(|g| Batch::from_sentences(g, corpus)).collect()
}
