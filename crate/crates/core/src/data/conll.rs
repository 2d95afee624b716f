use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LabeledCorpus, Sentence};
use crate::error::{Error, Result};

/// Where POS tags come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "col")]
pub enum PosSource {
    Column(usize),
    /// Degraded mode: pseudo-tags derived from a hash of the lowercased
    /// token, for corpora without a POS column.
    Hash,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnSpec {
    pub token_col: usize,
    pub pos: PosSource,
    pub tag_col: usize,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            token_col: 0,
            pos: PosSource::Column(1),
            tag_col: 2,
        }
    }
}

impl ColumnSpec {
    fn min_fields(&self) -> usize {
        let pos = match self.pos {
            PosSource::Column(c) => c,
            PosSource::Hash => 0,
        };
        self.token_col.max(self.tag_col).max(pos) + 1
    }
}

fn hash_pos(token: &str) -> String {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.to_lowercase().bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("H{}", h % 16)
}

/// Parses CoNLL-style text: whitespace-separated columns, one token per
/// line, blank lines between sentences. `path` is only used in errors.
pub fn parse_conll(text: &str, spec: &ColumnSpec, path: &Path) -> Result<Vec<Sentence>> {
    let need = spec.min_fields();
    let mut sentences = Vec::new();
    let mut cur: (Vec<String>, Vec<String>, Vec<String>) = Default::default();
    let mut width: Option<usize> = None;
    let mut start_line = 0;

    let mut flush = |cur: &mut (Vec<String>, Vec<String>, Vec<String>), line: usize| -> Result<()> {
        if cur.0.is_empty() {
            return Ok(());
        }
        let (t, p, b) = std::mem::take(cur);
        let s = Sentence::new(t, p, b).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: e.to_string(),
        })?;
        sentences.push(s);
        Ok(())
    };

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            flush(&mut cur, start_line)?;
            continue;
        }
        if trimmed.starts_with("-DOCSTART-") {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let expected = *width.get_or_insert(fields.len());
        if fields.len() < need || fields.len() != expected {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!(
                    "ragged line: {} fields (expected {}, at least {need})",
                    fields.len(),
                    expected
                ),
            });
        }
        if cur.0.is_empty() {
            start_line = lineno;
        }
        let token = fields[spec.token_col].to_string();
        let pos = match spec.pos {
            PosSource::Column(c) => fields[c].to_string(),
            PosSource::Hash => hash_pos(&token),
        };
        cur.0.push(token);
        cur.1.push(pos);
        cur.2.push(fields[spec.tag_col].to_string());
    }
    flush(&mut cur, start_line)?;
    Ok(sentences)
}

/// Loads a file and builds vocabularies from it (training semantics); use
/// [`LabeledCorpus::with_tables_of`] for dev/test splits.
pub fn load_conll(path: &Path, spec: &ColumnSpec) -> Result<LabeledCorpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sentences = parse_conll(&text, spec, path)?;
    if sentences.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    Ok(LabeledCorpus::from_sentences(sentences))
}

/// Writes `token pos tag` lines with a blank line after every sentence.
pub fn write_conll(out: &mut impl Write, sentences: &[Sentence]) -> std::io::Result<()> {
    for s in sentences {
        for i in 0..s.len() {
            writeln!(out, "{} {} {}", s.tokens[i], s.pos_tags[i], s.bio_tags[i])?;
        }
        writeln!(out)?;
    }
    Ok(())
}
