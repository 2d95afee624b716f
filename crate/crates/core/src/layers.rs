//! Embeddings, the BiLSTM encoder, two-layer feed-forward heads, and the
//! max-pooling used for context and sentence vectors.
//!
//! Layers are descriptors: they know their parameter names and shapes, and
//! the weights themselves live in a [`ParamSet`]. Forward passes read the
//! weights through a [`Bound`] map for the current graph.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Bound, Graph, ParamSet, Tensor, Var};

/// Reserved vocabulary rows.
pub const UNK: usize = 0;
pub const PAD: usize = 1;

fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches")
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, limit: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches")
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub name: String,
    pub vocab_size: usize,
    pub dim: usize,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn new(name: impl Into<String>, vocab_size: usize, dim: usize) -> Self {
        Self {
            name: name.into(),
            vocab_size: vocab_size.max(2),
            dim,
            trainable: true,
        }
    }

    /// Uniform(-0.1, 0.1) for every row, then pretrained rows where given.
    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng, pretrained: Option<&[(usize, Vec<f64>)]>) {
        let mut w = uniform(rng, self.vocab_size, self.dim, 0.1);
        for (id, vec) in pretrained.unwrap_or(&[]) {
            if *id < self.vocab_size && vec.len() == self.dim && *id != UNK && *id != PAD {
                let d = self.dim;
                w.data_mut()[id * d..(id + 1) * d].copy_from_slice(vec);
            }
        }
        params.insert(self.name.clone(), w);
    }

    pub fn lookup(&self, g: &mut Graph, bound: &Bound, ids: &[usize]) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::IndexOutOfRange {
                what: "embedding",
                index: bad,
                bound: self.vocab_size,
            });
        }
        g.gather_rows(bound.var(&self.name)?, ids)
    }

    pub fn param_count(&self) -> usize {
        self.vocab_size * self.dim
    }
}

/// Row `i` is `[word_table[words[i]] : pos_table[pos[i]]]`.
pub fn embed_sentence(
    g: &mut Graph,
    bound: &Bound,
    words: &[usize],
    pos: &[usize],
    word_table: &EmbeddingTable,
    pos_table: &EmbeddingTable,
) -> Result<Var> {
    if words.len() != pos.len() || words.is_empty() {
        return Err(Error::LengthMismatch(format!(
            "{} word ids vs {} POS ids",
            words.len(),
            pos.len()
        )));
    }
    let w = word_table.lookup(g, bound, words)?;
    let p = pos_table.lookup(g, bound, pos)?;
    g.concat(&[w, p], 1)
}

/// Single-layer bidirectional LSTM. Gate order in the packed weights is
/// input, forget, cell, output.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmEncoder {
    pub prefix: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];

impl BiLstmEncoder {
    pub fn new(prefix: impl Into<String>, input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input_dim,
            hidden_dim,
        }
    }

    fn name(&self, dir: &str, part: &str) -> String {
        format!("{}.{dir}.{part}", self.prefix)
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    /// Glorot-uniform matrices, zero biases except forget gate = 1.
    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) {
        let h = self.hidden_dim;
        for dir in DIRECTIONS {
            params.insert(self.name(dir, "w_ih"), glorot(rng, self.input_dim, 4 * h));
            params.insert(self.name(dir, "w_hh"), glorot(rng, h, 4 * h));
            let mut b = Tensor::zeros(&[1, 4 * h]);
            b.data_mut()[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
            params.insert(self.name(dir, "b"), b);
        }
    }

    pub fn param_count(&self) -> usize {
        let h = self.hidden_dim;
        2 * (self.input_dim * 4 * h + h * 4 * h + 4 * h)
    }

    fn run(&self, g: &mut Graph, bound: &Bound, x: Var, dir: &str, reverse: bool) -> Result<Vec<Var>> {
        let h = self.hidden_dim;
        let n = g.value(x).rows();
        let proj = g.matmul(x, bound.var(&self.name(dir, "w_ih"))?)?;
        let proj = g.add(proj, bound.var(&self.name(dir, "b"))?)?;
        let w_hh = bound.var(&self.name(dir, "w_hh"))?;
        let mut states: Vec<Option<Var>> = vec![None; n];
        let mut prev: Option<(Var, Var)> = None;
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for t in order {
            let mut z = g.slice(proj, 0, t, t + 1)?;
            if let Some((h_prev, _)) = prev {
                let rec = g.matmul(h_prev, w_hh)?;
                z = g.add(z, rec)?;
            }
            let i_gate = g.slice(z, 1, 0, h)?;
            let i_gate = g.sigmoid(i_gate);
            let f_gate = g.slice(z, 1, h, 2 * h)?;
            let f_gate = g.sigmoid(f_gate);
            let cand = g.slice(z, 1, 2 * h, 3 * h)?;
            let cand = g.tanh(cand);
            let o_gate = g.slice(z, 1, 3 * h, 4 * h)?;
            let o_gate = g.sigmoid(o_gate);
            let mut c = g.mul(i_gate, cand)?;
            if let Some((_, c_prev)) = prev {
                let keep = g.mul(f_gate, c_prev)?;
                c = g.add(keep, c)?;
            }
            let c_act = g.tanh(c);
            let h_t = g.mul(o_gate, c_act)?;
            states[t] = Some(h_t);
            prev = Some((h_t, c));
        }
        Ok(states.into_iter().map(|s| s.expect("every step visited")).collect())
    }

    /// `n x d_in -> n x 2h`; row `i` is `[forward state at i : backward
    /// state at i]`.
    pub fn encode(&self, g: &mut Graph, bound: &Bound, embedded: Var) -> Result<Var> {
        let (n, d) = g.value(embedded).dims2("encode")?;
        if d != self.input_dim {
            return Err(Error::Shape {
                op: "encode",
                lhs: vec![n, d],
                rhs: vec![n, self.input_dim],
            });
        }
        if n == 0 {
            return Err(Error::EmptyAxis {
                op: "encode",
                shape: vec![n, d],
            });
        }
        let fwd = self.run(g, bound, embedded, DIRECTIONS[0], false)?;
        let bwd = self.run(g, bound, embedded, DIRECTIONS[1], true)?;
        let fwd = g.concat(&fwd, 0)?;
        let bwd = g.concat(&bwd, 0)?;
        g.concat(&[fwd, bwd], 1)
    }
}

/// `tanh(x W1 + b1) W2 + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForwardHead {
    pub prefix: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

impl FeedForwardHead {
    pub fn new(prefix: impl Into<String>, input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input_dim,
            hidden_dim,
            output_dim,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) {
        params.insert(self.name("w1"), glorot(rng, self.input_dim, self.hidden_dim));
        params.insert(self.name("b1"), Tensor::zeros(&[1, self.hidden_dim]));
        params.insert(self.name("w2"), glorot(rng, self.hidden_dim, self.output_dim));
        params.insert(self.name("b2"), Tensor::zeros(&[1, self.output_dim]));
    }

    pub fn param_count(&self) -> usize {
        (self.input_dim + 1) * self.hidden_dim + (self.hidden_dim + 1) * self.output_dim
    }

    pub fn param_names(&self) -> [String; 4] {
        ["w1", "b1", "w2", "b2"].map(|p| self.name(p))
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        let a = g.matmul(x, bound.var(&self.name("w1"))?)?;
        let a = g.add(a, bound.var(&self.name("b1"))?)?;
        let a = g.tanh(a);
        let out = g.matmul(a, bound.var(&self.name("w2"))?)?;
        g.add(out, bound.var(&self.name("b2"))?)
    }
}

/// Element-wise max over every row of `encoded` except `i`, as `1 x 2h`.
/// A single-row input has an empty pool and yields the zero vector.
pub fn context_vector(g: &mut Graph, encoded: Var, i: usize) -> Result<Var> {
    let (n, m) = g.value(encoded).dims2("context_vector")?;
    if i >= n {
        return Err(Error::IndexOutOfRange {
            what: "context position",
            index: i,
            bound: n,
        });
    }
    if n == 1 {
        return Ok(g.constant(Tensor::zeros(&[1, m])));
    }
    let mask: Vec<bool> = (0..n * m).map(|k| k / m == i).collect();
    let masked = g.mask_fill(encoded, &mask, f64::NEG_INFINITY)?;
    g.max_over_rows(masked)
}

/// Context vectors for every position, stacked as `n x 2h`.
pub fn context_vectors(g: &mut Graph, encoded: Var) -> Result<Var> {
    let n = g.value(encoded).rows();
    let rows = (0..n)
        .map(|i| context_vector(g, encoded, i))
        .collect::<Result<Vec<_>>>()?;
    g.concat(&rows, 0)
}

/// Element-wise max over all rows, `n x 2h -> 1 x 2h`.
pub fn sentence_vector(g: &mut Graph, encoded: Var) -> Result<Var> {
    g.max_over_rows(encoded)
}

/// Pretrained vectors for vocabulary ids read from a GloVe text file.
#[derive(Clone, Debug, Default)]
pub struct GloveVectors {
    pub vectors: Vec<(usize, Vec<f64>)>,
    pub lines: usize,
    pub skipped: usize,
}

/// Reads `token f1 ... f_dim` lines. Tokens `lookup` does not know are
/// skipped; any line without exactly `dim` parseable floats is an error
/// naming its line number.
pub fn read_glove(path: &Path, dim: usize, lookup: impl Fn(&str) -> Option<usize>) -> Result<GloveVectors> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = GloveVectors::default();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.lines += 1;
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let token = fields.next().unwrap_or_default();
        let values: Vec<&str> = fields.collect();
        let malformed = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        if values.len() != dim {
            return Err(malformed(format!("expected {dim} values, found {}", values.len())));
        }
        let parsed = values
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| malformed(format!("bad float: {e}")))?;
        if parsed.iter().any(|v| !v.is_finite()) {
            return Err(malformed("non-finite value".into()));
        }
        match lookup(token) {
            Some(id) => out.vectors.push((id, parsed)),
            None => out.skipped += 1,
        }
    }
    Ok(out)
}
