//! Optimization of the combined loss, dev-based model selection,
//! checkpoints and the ablation harness.

mod ablation;
mod adam;
mod checkpoint;

pub use ablation::{ablation_configs, run_ablation, AblationReport, AblationResult, AblationRow};
pub use adam::{adam_step, global_norm, AdamConfig, AdamState, StepOutcome};
pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_batches, EncodedSentence, LabelSet, LabeledCorpus, Sentence, Vocab};
use crate::error::{Error, Result};
use crate::evaluation::{extract_spans, span_f1_tags};
use crate::model::{LossParts, ModelConfig, SlotFillingModel};
use crate::numerics::{Graph, ParamSet};
use crate::objectives::LossWeights;

/// RNG stream ids derived from the one configured seed.
const SHUFFLE_STREAM: u64 = 1;
const NEGATIVES_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            learning_rate: a.learning_rate,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            grad_clip_norm: a.grad_clip_norm,
            seed: 13,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("eps", self.eps),
            ("grad_clip_norm", self.grad_clip_norm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience ({}) exceeds max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        self.weights.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            grad_clip_norm: self.grad_clip_norm,
        }
    }
}

/// One line of the epoch log. Loss components are means over the epoch's
/// mini-batches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossParts,
    pub dev_f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochLog {
    pub records: Vec<EpochRecord>,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch\tL_pred\tL_disc\tL_wp\tL_sp\ttotal\tdev_F1";

    /// Tab-separated lines, shortest round-trip float formatting.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", Self::HEADER);
        for r in &self.records {
            let l = &r.losses;
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.epoch, l.pred, l.disc, l.wp, l.sp, l.total, r.dev_f1
            );
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: EpochLog,
    /// Parameters after the last epoch run (not necessarily the best).
    pub last_params: ParamSet,
}

/// Ids under fixed tables; tags unknown to `labels` become `O`.
pub fn encode_with(s: &Sentence, words: &Vocab, pos: &Vocab, labels: &LabelSet) -> EncodedSentence {
    EncodedSentence {
        words: s.tokens.iter().map(|t| words.id(t)).collect(),
        pos: s.pos_tags.iter().map(|t| pos.id(t)).collect(),
        labels: s
            .bio_tags
            .iter()
            .map(|t| labels.get(t).unwrap_or_else(|| labels.outside()))
            .collect(),
    }
}

/// Viterbi tag strings for raw sentences.
pub fn predict_tags(
    model: &SlotFillingModel,
    params: &ParamSet,
    words: &Vocab,
    pos: &Vocab,
    labels: &LabelSet,
    sentences: &[Sentence],
) -> Result<Vec<Vec<String>>> {
    let encoded: Vec<EncodedSentence> = sentences.iter().map(|s| encode_with(s, words, pos, labels)).collect();
    Ok(model
        .decode(params, &encoded)?
        .into_iter()
        .map(|path| path.into_iter().map(|y| labels.tag(y).to_string()).collect())
        .collect())
}

impl Checkpoint {
    pub fn predict(&self, sentences: &[Sentence]) -> Result<Vec<Vec<String>>> {
        let model = self.build_model()?;
        predict_tags(&model, &self.params, &self.word_vocab, &self.pos_vocab, &self.label_set, sentences)
    }
}

/// Gradient of the combined loss of one batch.
pub fn batch_gradients(
    model: &SlotFillingModel,
    params: &ParamSet,
    batch: &[EncodedSentence],
    weights: &LossWeights,
    negatives_rng: &mut impl Rng,
) -> Result<(ParamSet, LossParts)> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let (loss, parts) = model.batch_loss(&mut g, &bound, batch, weights, negatives_rng)?;
    g.backward(loss)?;
    Ok((bound.grads(&g, params), parts))
}

/// Trains from a seeded initialization and keeps the parameters with the
/// best dev span-F1 (earliest epoch on ties). Stops after `patience`
/// epochs without improvement or at `max_epochs`.
pub fn train(
    train: &LabeledCorpus,
    dev: &LabeledCorpus,
    model_config: &ModelConfig,
    config: &TrainConfig,
    pretrained: Option<&[(usize, Vec<f64>)]>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training corpus is empty".into()));
    }
    if dev.is_empty() {
        return Err(Error::Data("dev corpus is empty".into()));
    }
    let labels = &train.label_set;
    let dev_gold: Vec<Vec<String>> = dev
        .sentences
        .iter()
        .map(|s| {
            s.bio_tags
                .iter()
                .map(|t| if labels.get(t).is_some() { t.clone() } else { labels.tag(labels.outside()).to_string() })
                .collect()
        })
        .collect();
    if dev_gold.iter().all(|tags| extract_spans(tags).spans.is_empty()) {
        return Err(Error::Data(
            "dev corpus has no slot spans under the training label set; dev F1 is undefined".into(),
        ));
    }

    let model = SlotFillingModel::new(model_config, train.word_vocab.len(), train.pos_vocab.len(), labels)?;
    let mut params = model.init(config.seed, pretrained);
    let encoded = train.encode();
    let adam = config.adam();
    let mut state = AdamState::default();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut negatives_rng = ChaCha8Rng::seed_from_u64(config.seed);
    negatives_rng.set_stream(NEGATIVES_STREAM);

    let mut log = EpochLog::default();
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        let batches = make_batches(&encoded, config.batch_size, Some(shuffle_rng.gen()));
        let mut sum = LossParts::default();
        for batch in &batches {
            let sentences = batch.sentences();
            let (grads, parts) = batch_gradients(&model, &params, &sentences, &config.weights, &mut negatives_rng)?;
            adam_step(&mut params, &grads, &mut state, &adam)?;
            sum.pred += parts.pred;
            sum.disc += parts.disc;
            sum.wp += parts.wp;
            sum.sp += parts.sp;
            sum.total += parts.total;
        }
        let k = batches.len() as f64;
        let losses = LossParts {
            pred: sum.pred / k,
            disc: sum.disc / k,
            wp: sum.wp / k,
            sp: sum.sp / k,
            total: sum.total / k,
        };
        let predicted = predict_tags(&model, &params, &train.word_vocab, &train.pos_vocab, labels, &dev.sentences)?;
        let dev_f1 = span_f1_tags(&dev_gold, &predicted)?.f1;
        log::info!(
            "epoch {epoch}: total {:.6} (pred {:.6}) dev F1 {:.4}",
            losses.total,
            losses.pred,
            dev_f1
        );
        log.records.push(EpochRecord { epoch, losses, dev_f1 });

        if best.as_ref().is_none_or(|(f, _, _)| dev_f1 > *f) {
            best = Some((dev_f1, epoch, params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                log::info!("no dev improvement for {stale} epochs; stopping");
                break;
            }
        }
    }
    let (best_dev_f1, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model: model_config.clone(),
            train: config.clone(),
            word_vocab: train.word_vocab.clone(),
            pos_vocab: train.pos_vocab.clone(),
            label_set: labels.clone(),
            params: best_params,
            best_dev_f1,
            best_epoch,
        },
        log,
        last_params: params,
    })
}
