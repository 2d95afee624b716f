//! Finite-difference verification of every loss term on a seeded
//! micro-instance.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::GradcheckConfig;
use crate::data::{generate_synthetic_corpus, EncodedSentence};
use crate::error::Result;
use crate::model::{ModelConfig, SlotFillingModel};
use crate::numerics::{finite_difference_check, Coordinate, Graph, OpKind, ParamSet};
use crate::objectives::LossWeights;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Term {
    Pred,
    Disc,
    Wp,
    Sp,
    Combined,
}

impl Term {
    pub const ALL: [Term; 5] = [Term::Pred, Term::Disc, Term::Wp, Term::Sp, Term::Combined];

    /// Weights that switch on this term; the CRF term is always built.
    fn weights(self) -> LossWeights {
        let z = LossWeights::zero();
        match self {
            Term::Pred => z,
            Term::Disc => LossWeights { alpha: 1.0, ..z },
            Term::Wp => LossWeights { beta: 1.0, ..z },
            Term::Sp => LossWeights { gamma: 1.0, ..z },
            Term::Combined => LossWeights::default(),
        }
    }

    /// Parameter prefixes this term can reach.
    fn reaches(self, name: &str) -> bool {
        let shared = name.starts_with("word_emb") || name.starts_with("pos_emb") || name.starts_with("lstm.");
        let own = match self {
            Term::Pred => name.starts_with("emission.") || name.starts_with("crf."),
            Term::Disc => name.starts_with("disc."),
            Term::Wp => name.starts_with("wp."),
            Term::Sp => name.starts_with("sp."),
            Term::Combined => true,
        };
        shared || own
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Term::Pred => "L_pred",
            Term::Disc => "L_disc",
            Term::Wp => "L_wp",
            Term::Sp => "L_sp",
            Term::Combined => "L_combined",
        })
    }
}

#[derive(Clone, Debug)]
pub struct TermCheck {
    pub term: Term,
    pub max_rel_error: f64,
    pub worst: Option<Coordinate>,
    pub passed: bool,
}

impl TermCheck {
    pub fn line(&self, cfg: &GradcheckConfig) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        let mut s = format!(
            "{status} {:<10} max_rel_error={:.3e} epsilon={:e} samples={}",
            self.term.to_string(),
            self.max_rel_error,
            cfg.epsilon,
            cfg.samples
        );
        if let Some(c) = &self.worst {
            s.push_str(&format!(
                " worst={}[{}] analytic={:.6e} numeric={:.6e}",
                c.param, c.index, c.analytic, c.numeric
            ));
        }
        s
    }
}

/// Three short synthetic sentences plus a one-token sentence, encoded
/// against their own tables, and a small model over them.
pub fn micro_instance(seed: u64) -> Result<(SlotFillingModel, ParamSet, Vec<EncodedSentence>)> {
    let corpus = generate_synthetic_corpus(seed, 3, 2, 20)?;
    let mut batch = corpus.encode();
    let mut single = batch[0].clone();
    single.words.truncate(1);
    single.pos.truncate(1);
    single.labels.truncate(1);
    batch.push(single);
    let config = ModelConfig {
        word_dim: 4,
        pos_dim: 3,
        lstm_hidden: 3,
        ff_hidden: 4,
        ..ModelConfig::default()
    };
    let model = SlotFillingModel::new(&config, corpus.word_vocab.len(), corpus.pos_vocab.len(), &corpus.label_set)?;
    let params = model.init(seed, None);
    Ok((model, params, batch))
}

/// Runs the check for every term. `corrupt` injects a faulty backward rule
/// for one primitive (negative control).
pub fn run_gradcheck(cfg: &GradcheckConfig, corrupt: Option<OpKind>) -> Result<Vec<TermCheck>> {
    let (model, params, batch) = micro_instance(cfg.seed)?;
    Term::ALL
        .iter()
        .map(|&term| {
            let weights = term.weights();
            let f = |g: &mut Graph, b: &crate::numerics::Bound| {
                if let Some(kind) = corrupt {
                    g.corrupt_backward(kind);
                }
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
                if term == Term::Combined {
                    return Ok(model.batch_loss(g, b, &batch, &weights, &mut rng)?.0);
                }
                let t = model.loss_terms(g, b, &batch, &weights, &mut rng)?;
                Ok(match term {
                    Term::Pred => t.pred,
                    Term::Disc => t.disc,
                    Term::Wp => t.wp,
                    Term::Sp => t.sp,
                    Term::Combined => unreachable!("handled above"),
                })
            };
            let names: Vec<&str> = params.names().map(String::as_str).filter(|n| term.reaches(n)).collect();
            let report = finite_difference_check(f, &params, cfg.epsilon, cfg.samples, cfg.seed, Some(&names))?;
            Ok(TermCheck {
                term,
                max_rel_error: report.max_rel_error,
                passed: report.max_rel_error < cfg.tolerance,
                worst: report.worst,
            })
        })
        .collect()
}
