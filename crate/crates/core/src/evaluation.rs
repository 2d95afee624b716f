//! Span-level precision/recall/F1 with conlleval semantics.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use crate::data::{parse_bio, Bio, Sentence};
use crate::error::{Error, Result};

/// Labeled span over token indices `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Spans {
    pub spans: Vec<Span>,
    /// Runs opened by an `I-` tag.
    pub violations: usize,
}

/// conlleval chunking: a chunk starts at `B-x`, or at `I-x` when the
/// previous tag is not of type `x` (counted as a violation); it ends before
/// `O`, `B-*`, or a tag of another type. Tags outside the grammar are read
/// as `O`.
pub fn extract_spans<S: AsRef<str>>(tags: &[S]) -> Spans {
    let mut out = Spans::default();
    let mut open: Option<(&str, usize)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let bio = parse_bio(tag.as_ref()).unwrap_or(Bio::Outside);
        let continues = matches!((&bio, open), (Bio::Inside(t), Some((o, _))) if *t == o);
        if continues {
            continue;
        }
        if let Some((label, start)) = open.take() {
            out.spans.push(Span {
                label: label.to_string(),
                start,
                end: i,
            });
        }
        match bio {
            Bio::Begin(t) => open = Some((t, i)),
            Bio::Inside(t) => {
                out.violations += 1;
                open = Some((t, i));
            }
            Bio::Outside => {}
        }
    }
    if let Some((label, start)) = open {
        out.spans.push(Span {
            label: label.to_string(),
            start,
            end: tags.len(),
        });
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TypeCounts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

fn prf(correct: usize, predicted: usize, gold: usize) -> (f64, f64, f64) {
    let p = if predicted == 0 { 0.0 } else { correct as f64 / predicted as f64 };
    let r = if gold == 0 { 0.0 } else { correct as f64 / gold as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

impl TypeCounts {
    pub fn precision_recall_f1(&self) -> (f64, f64, f64) {
        prf(self.correct, self.predicted, self.gold)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpanF1Report {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub totals: TypeCounts,
    pub per_type: BTreeMap<String, TypeCounts>,
    /// `I-` run openings in the predictions.
    pub bio_violations: usize,
    pub sentences: usize,
    pub tokens: usize,
}

impl SpanF1Report {
    /// Adds zero rows for types that never occurred.
    pub fn with_types<'a>(mut self, types: impl IntoIterator<Item = &'a str>) -> Self {
        for t in types {
            self.per_type.entry(t.to_string()).or_default();
        }
        self
    }

    pub fn macro_f1(&self) -> f64 {
        if self.per_type.is_empty() {
            return 0.0;
        }
        self.per_type.values().map(|c| c.precision_recall_f1().2).sum::<f64>() / self.per_type.len() as f64
    }

    /// Aligned table, conlleval-like.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "processed {} tokens with {} phrases; found: {} phrases; correct: {}.",
            self.tokens, self.totals.gold, self.totals.predicted, self.totals.correct
        );
        let _ = writeln!(
            out,
            "{:<20} precision: {:6.2}%; recall: {:6.2}%; FB1: {:6.2}",
            "overall (micro)",
            100.0 * self.precision,
            100.0 * self.recall,
            100.0 * self.f1
        );
        for (label, c) in &self.per_type {
            let (p, r, f) = c.precision_recall_f1();
            let _ = writeln!(
                out,
                "{:<20} precision: {:6.2}%; recall: {:6.2}%; FB1: {:6.2}  {}",
                label,
                100.0 * p,
                100.0 * r,
                100.0 * f,
                c.predicted
            );
        }
        let _ = writeln!(out, "{:<20} FB1: {:6.2}", "macro", 100.0 * self.macro_f1());
        let _ = writeln!(out, "bio violations in predictions: {}", self.bio_violations);
        out
    }

    /// `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "sentences={}", self.sentences);
        let _ = writeln!(out, "tokens={}", self.tokens);
        let _ = writeln!(out, "precision={}", self.precision);
        let _ = writeln!(out, "recall={}", self.recall);
        let _ = writeln!(out, "f1={}", self.f1);
        let _ = writeln!(out, "macro_f1={}", self.macro_f1());
        let _ = writeln!(out, "gold_spans={}", self.totals.gold);
        let _ = writeln!(out, "predicted_spans={}", self.totals.predicted);
        let _ = writeln!(out, "correct_spans={}", self.totals.correct);
        let _ = writeln!(out, "bio_violations={}", self.bio_violations);
        for (label, c) in &self.per_type {
            let (p, r, f) = c.precision_recall_f1();
            let _ = writeln!(
                out,
                "type.{label}.gold={}\ntype.{label}.predicted={}\ntype.{label}.correct={}\ntype.{label}.precision={p}\ntype.{label}.recall={r}\ntype.{label}.f1={f}",
                c.gold, c.predicted, c.correct
            );
        }
        out
    }
}

/// Micro-averaged span F1 over aligned tag sequences. A predicted span is
/// correct iff its type and both boundaries match a gold span.
pub fn span_f1_tags<G: AsRef<str>, P: AsRef<str>>(gold: &[Vec<G>], predicted: &[Vec<P>]) -> Result<SpanF1Report> {
    if gold.len() != predicted.len() {
        return Err(Error::LengthMismatch(format!(
            "{} gold sentences vs {} predicted",
            gold.len(),
            predicted.len()
        )));
    }
    let mut report = SpanF1Report::default();
    for (idx, (g, p)) in gold.iter().zip(predicted).enumerate() {
        if g.len() != p.len() {
            return Err(Error::LengthMismatch(format!(
                "sentence {idx}: {} gold tags vs {} predicted",
                g.len(),
                p.len()
            )));
        }
        report.sentences += 1;
        report.tokens += g.len();
        let gs = extract_spans(g);
        let ps = extract_spans(p);
        report.bio_violations += ps.violations;
        let gold_set: HashSet<&Span> = gs.spans.iter().collect();
        for s in &gs.spans {
            report.per_type.entry(s.label.clone()).or_default().gold += 1;
        }
        for s in &ps.spans {
            let c = report.per_type.entry(s.label.clone()).or_default();
            c.predicted += 1;
            if gold_set.contains(s) {
                c.correct += 1;
            }
        }
    }
    for c in report.per_type.values() {
        report.totals.gold += c.gold;
        report.totals.predicted += c.predicted;
        report.totals.correct += c.correct;
    }
    let (p, r, f) = report.totals.precision_recall_f1();
    report.precision = p;
    report.recall = r;
    report.f1 = f;
    Ok(report)
}

/// [`span_f1_tags`] with gold tags taken from sentences.
pub fn span_f1<P: AsRef<str>>(gold: &[Sentence], predicted: &[Vec<P>]) -> Result<SpanF1Report> {
    let g: Vec<&Vec<String>> = gold.iter().map(|s| &s.bio_tags).collect();
    let g: Vec<Vec<&str>> = g.iter().map(|t| t.iter().map(String::as_str).collect()).collect();
    span_f1_tags(&g, predicted)
}
