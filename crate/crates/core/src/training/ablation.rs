use std::fmt::Write as _;

use super::{train, TrainConfig};
use crate::data::LabeledCorpus;
use crate::evaluation::span_f1;
use crate::model::ModelConfig;
use crate::objectives::LossWeights;

/// The four rows of the ablation table. Each ablated row zeroes exactly
/// one weight of `base`.
pub fn ablation_configs(base: &LossWeights) -> [(&'static str, LossWeights); 4] {
    [
        ("Full", *base),
        ("Full - MI", LossWeights { alpha: 0.0, ..*base }),
        ("Full - WP", LossWeights { beta: 0.0, ..*base }),
        ("Full - SP", LossWeights { gamma: 0.0, ..*base }),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationResult {
    pub test_f1: f64,
    pub best_dev_f1: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: &'static str,
    pub weights: LossWeights,
    /// Error text when the run failed.
    pub outcome: Result<AblationResult, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub dataset: String,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// `Model | <dataset>` table with test F1 in percent.
    pub fn to_text(&self) -> String {
        let width = self.dataset.len().max(8);
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} | {:>width$}", "Model", self.dataset);
        let _ = writeln!(out, "{}-+-{}", "-".repeat(10), "-".repeat(width));
        for row in &self.rows {
            let cell = match &row.outcome {
                Ok(r) => format!("{:.1}", 100.0 * r.test_f1),
                Err(_) => "FAILED".to_string(),
            };
            let _ = writeln!(out, "{:<10} | {:>width$}", row.name, cell);
        }
        for row in &self.rows {
            if let Err(e) = &row.outcome {
                let _ = writeln!(out, "# {}: {e}", row.name);
            }
        }
        out
    }

    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let key = row.name.replace(" - ", "-minus-").to_lowercase();
            let w = row.weights;
            let _ = writeln!(out, "{key}.alpha={}\n{key}.beta={}\n{key}.gamma={}", w.alpha, w.beta, w.gamma);
            match &row.outcome {
                Ok(r) => {
                    let _ = writeln!(
                        out,
                        "{key}.test_f1={}\n{key}.best_dev_f1={}\n{key}.best_epoch={}",
                        r.test_f1, r.best_dev_f1, r.best_epoch
                    );
                }
                Err(e) => {
                    let _ = writeln!(out, "{key}.error={e}");
                }
            }
        }
        out
    }
}

/// Four training runs from the same seed that differ only in one zeroed
/// loss weight, each scored on `test`. A failing run is reported in its
/// row and does not stop the others.
pub fn run_ablation(
    dataset: &str,
    train_set: &LabeledCorpus,
    dev: &LabeledCorpus,
    test: &LabeledCorpus,
    model: &ModelConfig,
    base: &TrainConfig,
    pretrained: Option<&[(usize, Vec<f64>)]>,
) -> AblationReport {
    let rows = ablation_configs(&base.weights)
        .into_iter()
        .map(|(name, weights)| {
            let config = TrainConfig {
                weights,
                ..base.clone()
            };
            let outcome = train(train_set, dev, model, &config, pretrained)
                .and_then(|o| {
                    let predicted = o.checkpoint.predict(&test.sentences)?;
                    let report = span_f1(&test.sentences, &predicted)?;
                    Ok(AblationResult {
                        test_f1: report.f1,
                        best_dev_f1: o.checkpoint.best_dev_f1,
                        best_epoch: o.checkpoint.best_epoch,
                    })
                })
                .map_err(|e| e.to_string());
            if let Err(e) = &outcome {
                log::error!("ablation row `{name}` failed: {e}");
            }
            AblationRow { name, weights, outcome }
        })
        .collect();
    AblationReport {
        dataset: dataset.to_string(),
        rows,
    }
}
