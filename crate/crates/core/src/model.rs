//! The slot-filling network: embeddings, BiLSTM, emission head and CRF,
//! plus the three auxiliary heads used only by the training objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crf::{crf_nll, viterbi_decode, EmissionTable, TransitionMatrix};
use crate::data::{EncodedSentence, LabelSet};
use crate::error::{Error, Result};
use crate::layers::{context_vectors, embed_sentence, sentence_vector, BiLstmEncoder, EmbeddingTable, FeedForwardHead};
use crate::numerics::{Bound, Graph, ParamSet, Tensor, Var};
use crate::objectives::{
    combined_loss, mi_discriminator_loss, sample_negatives, sentence_label_loss, word_from_context_loss,
    Discriminator, LossWeights, SentenceLabelVector,
};

pub const TRANSITIONS: &str = "crf.transitions";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub pos_dim: usize,
    pub lstm_hidden: usize,
    pub ff_hidden: usize,
    /// Sentence-level targets over slot types instead of full BIO tags.
    pub collapse_bio_for_sp: bool,
    /// When false, the discriminator and both auxiliary heads are not
    /// built at all and only the CRF loss is available.
    pub auxiliary_heads: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            word_dim: 300,
            pos_dim: 30,
            lstm_hidden: 200,
            ff_hidden: 200,
            collapse_bio_for_sp: false,
            auxiliary_heads: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("word_dim", self.word_dim),
            ("pos_dim", self.pos_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("ff_hidden", self.ff_hidden),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Loss values of one mini-batch. Disabled terms are exactly zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub pred: f64,
    pub disc: f64,
    pub wp: f64,
    pub sp: f64,
    pub total: f64,
}

/// Graph nodes of the four loss terms; disabled ones are constant zeros.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossTerms {
    pub pred: Var,
    pub disc: Var,
    pub wp: Var,
    pub sp: Var,
}

#[derive(Clone, Debug)]
struct AuxHeads {
    wp: FeedForwardHead,
    sp: FeedForwardHead,
    disc: Discriminator,
}

#[derive(Clone, Debug)]
pub struct SlotFillingModel {
    config: ModelConfig,
    label_count: usize,
    /// Label id to sentence-target index.
    sp_map: Vec<usize>,
    sp_size: usize,
    word_emb: EmbeddingTable,
    pos_emb: EmbeddingTable,
    encoder: BiLstmEncoder,
    emission: FeedForwardHead,
    aux: Option<AuxHeads>,
}

impl SlotFillingModel {
    pub fn new(config: &ModelConfig, word_vocab: usize, pos_vocab: usize, labels: &LabelSet) -> Result<Self> {
        config.validate()?;
        if labels.is_empty() {
            return Err(Error::Config("empty label set".into()));
        }
        let k = labels.len();
        let (sp_map, sp_size) = if config.collapse_bio_for_sp {
            let ids = labels.collapsed_ids();
            let size = ids.iter().max().map_or(1, |m| m + 1);
            (ids, size)
        } else {
            ((0..k).collect(), k)
        };
        let input = config.word_dim + config.pos_dim;
        let encoder = BiLstmEncoder::new("lstm", input, config.lstm_hidden);
        let h2 = encoder.output_dim();
        let aux = config.auxiliary_heads.then(|| AuxHeads {
            wp: FeedForwardHead::new("wp", h2, config.ff_hidden, k),
            sp: FeedForwardHead::new("sp", h2, config.ff_hidden, sp_size),
            disc: Discriminator::new("disc", h2, config.ff_hidden),
        });
        Ok(Self {
            config: config.clone(),
            label_count: k,
            sp_map,
            sp_size,
            word_emb: EmbeddingTable::new("word_emb", word_vocab, config.word_dim),
            pos_emb: EmbeddingTable::new("pos_emb", pos_vocab, config.pos_dim),
            encoder,
            emission: FeedForwardHead::new("emission", h2, config.ff_hidden, k),
            aux,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn label_count(&self) -> usize {
        self.label_count
    }

    pub fn has_auxiliary_heads(&self) -> bool {
        self.aux.is_some()
    }

    /// Seeded initialization. Main-path parameters are drawn before the
    /// auxiliary ones, so they do not depend on `auxiliary_heads`.
    pub fn init(&self, seed: u64, pretrained: Option<&[(usize, Vec<f64>)]>) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        self.word_emb.init(&mut p, &mut rng, pretrained);
        self.pos_emb.init(&mut p, &mut rng, None);
        self.encoder.init(&mut p, &mut rng);
        self.emission.init(&mut p, &mut rng);
        p.insert(TRANSITIONS, TransitionMatrix::zeros(self.label_count).scores().clone());
        if let Some(aux) = &self.aux {
            aux.wp.init(&mut p, &mut rng);
            aux.sp.init(&mut p, &mut rng);
            aux.disc.init(&mut p, &mut rng);
        }
        p
    }

    /// Checks that `params` holds every tensor this model reads, with the
    /// right shapes.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        let reference = self.init(0, None);
        for (name, t) in reference.iter() {
            match params.get(name) {
                Some(have) if have.shape() == t.shape() => {}
                Some(have) => {
                    return Err(Error::Checkpoint(format!(
                        "parameter `{name}` has shape {:?}, model expects {:?}",
                        have.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing parameter `{name}`"))),
            }
        }
        Ok(())
    }

    /// Encodes every sentence of a batch. The embedding lookup is done once
    /// for all word positions and then cut per sentence.
    fn encode_batch(&self, g: &mut Graph, bound: &Bound, batch: &[EncodedSentence]) -> Result<Vec<Var>> {
        let words: Vec<usize> = batch.iter().flat_map(|s| s.words.iter().copied()).collect();
        let pos: Vec<usize> = batch.iter().flat_map(|s| s.pos.iter().copied()).collect();
        if batch.iter().any(EncodedSentence::is_empty) {
            return Err(Error::Data("empty sentence in batch".into()));
        }
        let x = embed_sentence(g, bound, &words, &pos, &self.word_emb, &self.pos_emb)?;
        let mut start = 0;
        let mut out = Vec::with_capacity(batch.len());
        for s in batch {
            let rows = g.slice(x, 0, start, start + s.len())?;
            start += s.len();
            out.push(self.encoder.encode(g, bound, rows)?);
        }
        Ok(out)
    }

    /// Left-to-right sum of scalar terms divided by their count.
    fn mean_of(g: &mut Graph, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Data("no terms to average".into()))?;
        let mut total = first;
        for &t in rest {
            total = g.add(total, t)?;
        }
        Ok(g.scale(total, 1.0 / terms.len() as f64))
    }

    /// Builds the four loss terms of one batch on `g`. A term whose weight
    /// is zero is never computed and is the constant 0; in particular no
    /// negatives are drawn when `alpha == 0`. Only the weights' zero
    /// pattern matters here.
    pub fn loss_terms(
        &self,
        g: &mut Graph,
        bound: &Bound,
        batch: &[EncodedSentence],
        weights: &LossWeights,
        negatives_rng: &mut impl Rng,
    ) -> Result<LossTerms> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        weights.validate()?;
        let aux = match &self.aux {
            Some(a) => Some(a),
            None if *weights == LossWeights::zero() => None,
            None => {
                return Err(Error::Config(
                    "non-zero auxiliary weights need a model built with auxiliary heads".into(),
                ))
            }
        };
        let encoded = self.encode_batch(g, bound, batch)?;
        let trans = bound.var(TRANSITIONS)?;

        let mut nll = Vec::with_capacity(batch.len());
        for (h, s) in encoded.iter().zip(batch) {
            let em = self.emission.forward(g, bound, *h)?;
            nll.push(crf_nll(g, em, trans, &s.labels)?);
        }
        let pred = Self::mean_of(g, &nll)?;
        let zero = g.constant(Tensor::scalar(0.0));
        let mut terms = LossTerms {
            pred,
            disc: zero,
            wp: zero,
            sp: zero,
        };
        let Some(aux) = aux else {
            return Ok(terms);
        };

        let contexts = if weights.alpha > 0.0 || weights.beta > 0.0 {
            encoded
                .iter()
                .map(|&h| context_vectors(g, h))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };

        if weights.alpha > 0.0 {
            let h_all = g.concat(&encoded, 0)?;
            let c_all = g.concat(&contexts, 0)?;
            let n = g.value(h_all).rows();
            let negatives = sample_negatives(n, negatives_rng);
            terms.disc = mi_discriminator_loss(g, bound, h_all, c_all, &negatives, &aux.disc)?;
        }

        if weights.beta > 0.0 {
            let per = contexts
                .iter()
                .zip(batch)
                .map(|(&c, s)| word_from_context_loss(g, bound, c, &s.labels, &aux.wp))
                .collect::<Result<Vec<_>>>()?;
            terms.wp = Self::mean_of(g, &per)?;
        }

        if weights.gamma > 0.0 {
            let mut per = Vec::with_capacity(batch.len());
            for (&h, s) in encoded.iter().zip(batch) {
                let sv = sentence_vector(g, h)?;
                let target = SentenceLabelVector::from_labels(&s.labels, self.sp_size, Some(&self.sp_map))?;
                per.push(sentence_label_loss(g, bound, sv, &target, &aux.sp)?);
            }
            terms.sp = Self::mean_of(g, &per)?;
        }
        Ok(terms)
    }

    /// The training loss of one batch. Without auxiliary heads this is the
    /// CRF term itself; otherwise the weighted sum of all four terms.
    pub fn batch_loss(
        &self,
        g: &mut Graph,
        bound: &Bound,
        batch: &[EncodedSentence],
        weights: &LossWeights,
        negatives_rng: &mut impl Rng,
    ) -> Result<(Var, LossParts)> {
        let t = self.loss_terms(g, bound, batch, weights, negatives_rng)?;
        let total = if self.aux.is_some() {
            combined_loss(g, t.pred, t.disc, t.wp, t.sp, weights)?
        } else {
            t.pred
        };
        let parts = LossParts {
            pred: g.value(t.pred).item(),
            disc: g.value(t.disc).item(),
            wp: g.value(t.wp).item(),
            sp: g.value(t.sp).item(),
            total: g.value(total).item(),
        };
        Ok((total, parts))
    }

    /// Emission scores `n x K` for each sentence, without recording a tape.
    pub fn emissions(&self, params: &ParamSet, batch: &[EncodedSentence]) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let bound = params.bind_frozen(&mut g);
        let encoded = self.encode_batch(&mut g, &bound, batch)?;
        encoded
            .into_iter()
            .map(|h| {
                let em = self.emission.forward(&mut g, &bound, h)?;
                Ok(g.value(em).clone())
            })
            .collect()
    }

    /// Viterbi label ids for every sentence.
    pub fn decode(&self, params: &ParamSet, sentences: &[EncodedSentence]) -> Result<Vec<Vec<usize>>> {
        let trans = params
            .get(TRANSITIONS)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{TRANSITIONS}`")))?;
        let trans = TransitionMatrix::new(trans.clone())?;
        let mut out = Vec::with_capacity(sentences.len());
        for chunk in sentences.chunks(64) {
            for em in self.emissions(params, chunk)? {
                out.push(viterbi_decode(&EmissionTable::new(em)?, &trans)?.0);
            }
        }
        Ok(out)
    }
}
