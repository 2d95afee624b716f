//! Corpora: CoNLL-style ingestion, vocabularies, label sets, batching and
//! a seeded synthetic slot corpus.

mod batch;
mod conll;
mod synth;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

pub use batch::{make_batches, Batch};
pub use conll::{load_conll, parse_conll, write_conll, ColumnSpec, PosSource};
pub use synth::{generate_synthetic_corpus, generate_synthetic_splits, SyntheticSplits, EDIT_SLOT_TYPES};

use crate::error::{Error, Result};
use crate::evaluation::extract_spans;
use crate::layers::{PAD, UNK};

pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";
pub const OUTSIDE: &str = "O";

/// Parsed BIO tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Bio<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

pub fn parse_bio(tag: &str) -> Option<Bio<'_>> {
    if tag == OUTSIDE {
        return Some(Bio::Outside);
    }
    let (prefix, ty) = tag.split_once('-')?;
    if ty.is_empty() {
        return None;
    }
    match prefix {
        "B" => Some(Bio::Begin(ty)),
        "I" => Some(Bio::Inside(ty)),
        _ => None,
    }
}

/// Number of `I-x` tags not preceded by `B-x` or `I-x`.
pub fn count_bio_violations<S: AsRef<str>>(tags: &[S]) -> usize {
    let mut prev: Option<&str> = None;
    let mut count = 0;
    for tag in tags {
        let cur = parse_bio(tag.as_ref());
        if let Some(Bio::Inside(ty)) = cur {
            if prev != Some(ty) {
                count += 1;
            }
        }
        prev = match cur {
            Some(Bio::Begin(t)) | Some(Bio::Inside(t)) => Some(t),
            _ => None,
        };
    }
    count
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub pos_tags: Vec<String>,
    pub bio_tags: Vec<String>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, pos_tags: Vec<String>, bio_tags: Vec<String>) -> Result<Self> {
        let n = tokens.len();
        if n == 0 || pos_tags.len() != n || bio_tags.len() != n {
            return Err(Error::LengthMismatch(format!(
                "sentence columns have lengths {}, {}, {}",
                n,
                pos_tags.len(),
                bio_tags.len()
            )));
        }
        if let Some(bad) = bio_tags.iter().find(|t| parse_bio(t).is_none()) {
            return Err(Error::Data(format!("`{bad}` is not a BIO tag")));
        }
        Ok(Self {
            tokens,
            pos_tags,
            bio_tags,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn bio_violations(&self) -> usize {
        count_bio_violations(&self.bio_tags)
    }
}

/// String-to-id map with `<unk>` = 0 and `<pad>` = 1; other ids follow
/// first occurrence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    items: Vec<String>,
    index: HashMap<String, usize>,
    lowercase: bool,
}

impl Vocab {
    pub fn new(lowercase: bool) -> Self {
        let mut v = Self {
            items: Vec::new(),
            index: HashMap::new(),
            lowercase,
        };
        v.push(UNK_TOKEN.to_string());
        v.push(PAD_TOKEN.to_string());
        debug_assert_eq!(v.index[UNK_TOKEN], UNK);
        debug_assert_eq!(v.index[PAD_TOKEN], PAD);
        v
    }

    pub fn build<'a>(items: impl IntoIterator<Item = &'a str>, lowercase: bool) -> Self {
        let mut v = Self::new(lowercase);
        for item in items {
            let key = v.key(item);
            if !v.index.contains_key(&key) {
                v.push(key);
            }
        }
        v
    }

    /// Rebuilds from a stored item list (checkpoints).
    pub fn from_items(items: Vec<String>, lowercase: bool) -> Result<Self> {
        if items.len() < 2 || items[UNK] != UNK_TOKEN || items[PAD] != PAD_TOKEN {
            return Err(Error::Checkpoint("vocabulary lacks reserved rows".into()));
        }
        let index: HashMap<String, usize> = items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        if index.len() != items.len() {
            return Err(Error::Checkpoint("vocabulary has duplicate entries".into()));
        }
        Ok(Self {
            items,
            index,
            lowercase,
        })
    }

    fn key(&self, item: &str) -> String {
        if self.lowercase {
            item.to_lowercase()
        } else {
            item.to_string()
        }
    }

    fn push(&mut self, item: String) {
        self.index.insert(item.clone(), self.items.len());
        self.items.push(item);
    }

    pub fn get(&self, item: &str) -> Option<usize> {
        self.index.get(&self.key(item)).copied()
    }

    /// Id of `item`, or [`UNK`].
    pub fn id(&self, item: &str) -> usize {
        self.get(item).unwrap_or(UNK)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }
}

/// Ordered BIO tag list: `O` first, then for each slot type (sorted) its
/// `B-` and `I-` tags when present.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

fn tag_order(tag: &str) -> (u8, String, u8) {
    match parse_bio(tag) {
        Some(Bio::Outside) | None => (0, String::new(), 0),
        Some(Bio::Begin(t)) => (1, t.to_string(), 0),
        Some(Bio::Inside(t)) => (1, t.to_string(), 1),
    }
}

impl LabelSet {
    pub fn from_tags<'a>(tags: impl IntoIterator<Item = &'a str>) -> Self {
        let mut all: Vec<String> = tags.into_iter().map(str::to_string).collect();
        all.push(OUTSIDE.to_string());
        all.sort_by_key(|t| tag_order(t));
        all.dedup();
        Self::from_ordered(all).expect("deduplicated")
    }

    /// Keeps the given order; used when restoring a checkpoint.
    pub fn from_ordered(tags: Vec<String>) -> Result<Self> {
        let index: HashMap<String, usize> = tags.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        if index.len() != tags.len() || !index.contains_key(OUTSIDE) {
            return Err(Error::Data("label set must be unique and contain O".into()));
        }
        Ok(Self { tags, index })
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn get(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn outside(&self) -> usize {
        self.index[OUTSIDE]
    }

    pub fn tag(&self, id: usize) -> &str {
        &self.tags[id]
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    /// Sorted distinct slot types.
    pub fn slot_types(&self) -> Vec<String> {
        let mut types: Vec<String> = self
            .tags
            .iter()
            .filter_map(|t| match parse_bio(t) {
                Some(Bio::Begin(ty)) | Some(Bio::Inside(ty)) => Some(ty.to_string()),
                _ => None,
            })
            .collect();
        types.sort();
        types.dedup();
        types
    }

    /// Maps every tag id to `0` for `O` or `1 + index of its slot type`.
    pub fn collapsed_ids(&self) -> Vec<usize> {
        let types = self.slot_types();
        self.tags
            .iter()
            .map(|t| match parse_bio(t) {
                Some(Bio::Begin(ty)) | Some(Bio::Inside(ty)) => {
                    1 + types.iter().position(|x| x == ty).expect("type listed")
                }
                _ => 0,
            })
            .collect()
    }
}

/// Sentence converted to ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSentence {
    pub words: Vec<usize>,
    pub pos: Vec<usize>,
    pub labels: Vec<usize>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct LabeledCorpus {
    pub sentences: Vec<Sentence>,
    pub word_vocab: Vocab,
    pub pos_vocab: Vocab,
    pub label_set: LabelSet,
    /// Tags rewritten to `O` because the training label set lacks them.
    pub unseen_labels: usize,
}

impl LabeledCorpus {
    /// Builds vocabularies and the label set from these sentences.
    pub fn from_sentences(sentences: Vec<Sentence>) -> Self {
        let word_vocab = Vocab::build(sentences.iter().flat_map(|s| s.tokens.iter().map(String::as_str)), true);
        let pos_vocab = Vocab::build(sentences.iter().flat_map(|s| s.pos_tags.iter().map(String::as_str)), false);
        let label_set = LabelSet::from_tags(sentences.iter().flat_map(|s| s.bio_tags.iter().map(String::as_str)));
        Self {
            sentences,
            word_vocab,
            pos_vocab,
            label_set,
            unseen_labels: 0,
        }
    }

    /// Re-indexes against the training corpus tables. Tags outside the
    /// training label set become `O`.
    pub fn with_tables_of(self, train: &LabeledCorpus) -> Self {
        self.with_tables(train.word_vocab.clone(), train.pos_vocab.clone(), train.label_set.clone())
    }

    pub fn with_tables(mut self, word_vocab: Vocab, pos_vocab: Vocab, label_set: LabelSet) -> Self {
        let mut unseen = 0;
        for s in &mut self.sentences {
            for tag in &mut s.bio_tags {
                if label_set.get(tag).is_none() {
                    *tag = OUTSIDE.to_string();
                    unseen += 1;
                }
            }
        }
        if unseen > 0 {
            log::warn!("{unseen} tags outside the training label set were mapped to O");
        }
        self.word_vocab = word_vocab;
        self.pos_vocab = pos_vocab;
        self.label_set = label_set;
        self.unseen_labels += unseen;
        self
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn encode_sentence(&self, s: &Sentence) -> EncodedSentence {
        EncodedSentence {
            words: s.tokens.iter().map(|t| self.word_vocab.id(t)).collect(),
            pos: s.pos_tags.iter().map(|t| self.pos_vocab.id(t)).collect(),
            labels: s
                .bio_tags
                .iter()
                .map(|t| self.label_set.get(t).unwrap_or_else(|| self.label_set.outside()))
                .collect(),
        }
    }

    pub fn encode(&self) -> Vec<EncodedSentence> {
        self.sentences.iter().map(|s| self.encode_sentence(s)).collect()
    }

    pub fn stats(&self, split: &str) -> CorpusStats {
        let mut stats = CorpusStats {
            split: split.to_string(),
            sentences: self.sentences.len(),
            unseen_labels: self.unseen_labels,
            ..CorpusStats::default()
        };
        for s in &self.sentences {
            stats.tokens += s.len();
            stats.oov_tokens += s.tokens.iter().filter(|t| self.word_vocab.get(t).is_none()).count();
            stats.bio_violations += s.bio_violations();
            for tag in &s.bio_tags {
                *stats.tags.entry(tag.clone()).or_default() += 1;
            }
            for span in extract_spans(&s.bio_tags).spans {
                *stats.spans.entry(span.label).or_default() += 1;
            }
        }
        stats
    }
}

/// Per-split counts in the shape of the usual dataset tables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusStats {
    pub split: String,
    pub sentences: usize,
    pub tokens: usize,
    pub oov_tokens: usize,
    pub bio_violations: usize,
    pub unseen_labels: usize,
    /// Span counts per slot type.
    pub spans: BTreeMap<String, usize>,
    /// Token counts per BIO tag.
    pub tags: BTreeMap<String, usize>,
}

impl CorpusStats {
    pub fn oov_rate(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.oov_tokens as f64 / self.tokens as f64
        }
    }

    /// Slot type with the most spans (ties: alphabetical first).
    pub fn most_frequent_type(&self) -> Option<&str> {
        self.spans
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(k, _)| k.as_str())
    }

    /// `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "split={}", self.split);
        let _ = writeln!(out, "sentences={}", self.sentences);
        let _ = writeln!(out, "tokens={}", self.tokens);
        let _ = writeln!(out, "oov_tokens={}", self.oov_tokens);
        let _ = writeln!(out, "oov_rate={:.6}", self.oov_rate());
        let _ = writeln!(out, "bio_violations={}", self.bio_violations);
        let _ = writeln!(out, "unseen_labels={}", self.unseen_labels);
        for (k, v) in &self.spans {
            let _ = writeln!(out, "label.{k}={v}");
        }
        for (k, v) in &self.tags {
            let _ = writeln!(out, "tag.{k}={v}");
        }
        out
    }
}
