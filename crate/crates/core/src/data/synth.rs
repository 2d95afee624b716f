use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LabeledCorpus, Sentence, OUTSIDE};
use crate::error::{Error, Result};

/// Slot names used when four types are requested (image-editing style).
pub const EDIT_SLOT_TYPES: [&str; 4] = ["Action", "Object", "Attribute", "Value"];

fn type_name(k: usize, total: usize) -> String {
    if total <= EDIT_SLOT_TYPES.len() {
        EDIT_SLOT_TYPES[k].to_string()
    } else {
        format!("Slot{}", k + 1)
    }
}

struct Lexicon {
    filler: Vec<usize>,
    /// per type: (span-initial tokens, continuation tokens)
    slots: Vec<(Vec<usize>, Vec<usize>)>,
    names: Vec<String>,
}

impl Lexicon {
    fn new(slot_types: usize, vocab_size: usize) -> Self {
        let per_type = vocab_size / (slot_types + 1);
        let heads = (per_type / 2).max(1);
        let mut next = 0;
        let mut take = |n: usize| {
            let ids: Vec<usize> = (next..next + n).collect();
            next += n;
            ids
        };
        let slots = (0..slot_types)
            .map(|_| (take(heads), take(per_type - heads)))
            .collect();
        let filler = take(vocab_size - slot_types * per_type);
        Self {
            filler,
            slots,
            names: (0..slot_types).map(|k| type_name(k, slot_types)).collect(),
        }
    }
}

fn word(id: usize) -> String {
    format!("w{id}")
}

fn filler_pos(id: usize) -> &'static str {
    ["DT", "VB", "IN"][id % 3]
}

fn slot_pos(id: usize) -> &'static str {
    ["NN", "JJ"][id % 2]
}

fn generate_sentences(rng: &mut ChaCha8Rng, lex: &Lexicon, n: usize) -> Vec<Sentence> {
    let types = lex.slots.len();
    (0..n)
        .map(|_| {
            let mut tokens = Vec::new();
            let mut pos = Vec::new();
            let mut tags = Vec::new();
            let push_filler = |count: usize, tokens: &mut Vec<String>, pos: &mut Vec<String>, tags: &mut Vec<String>, rng: &mut ChaCha8Rng| {
                for _ in 0..count {
                    let id = *lex.filler.choose(rng).expect("filler vocabulary");
                    tokens.push(word(id));
                    pos.push(filler_pos(id).to_string());
                    tags.push(OUTSIDE.to_string());
                }
            };
            let lead = rng.gen_range(1..=2);
            push_filler(lead, &mut tokens, &mut pos, &mut tags, rng);
            let slot_count = rng.gen_range(1..=types.min(3));
            let mut order: Vec<usize> = (0..types).collect();
            order.shuffle(rng);
            for (k, &ty) in order[..slot_count].iter().enumerate() {
                if k > 0 {
                    let gap = rng.gen_range(0..=2);
                    push_filler(gap, &mut tokens, &mut pos, &mut tags, rng);
                }
                let (heads, tails) = &lex.slots[ty];
                let name = &lex.names[ty];
                let head = *heads.choose(rng).expect("heads");
                tokens.push(word(head));
                pos.push(slot_pos(head).to_string());
                tags.push(format!("B-{name}"));
                let extra = if tails.is_empty() { 0 } else { rng.gen_range(0..=2) };
                for _ in 0..extra {
                    let t = *tails.choose(rng).expect("tails");
                    tokens.push(word(t));
                    pos.push(slot_pos(t).to_string());
                    tags.push(format!("I-{name}"));
                }
            }
            let trail = rng.gen_range(0..=1);
            push_filler(trail, &mut tokens, &mut pos, &mut tags, rng);
            Sentence::new(tokens, pos, tags).expect("generator emits aligned BIO columns")
        })
        .collect()
}

fn check_pre(slot_types: usize, vocab_size: usize) -> Result<()> {
    if slot_types == 0 || vocab_size < 10 * slot_types {
        return Err(Error::Config(format!(
            "synthetic corpus needs slot_types >= 1 and vocab_size >= 10 * slot_types (got {slot_types}, {vocab_size})"
        )));
    }
    Ok(())
}

/// Template sentences where each slot type owns a disjoint token set, split
/// further into span-initial and continuation tokens, so the labeling is a
/// function of the tokens. Filler tokens are `O`.
pub fn generate_synthetic_corpus(
    seed: u64,
    n_sentences: usize,
    slot_types: usize,
    vocab_size: usize,
) -> Result<LabeledCorpus> {
    check_pre(slot_types, vocab_size)?;
    let lex = Lexicon::new(slot_types, vocab_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(LabeledCorpus::from_sentences(generate_sentences(&mut rng, &lex, n_sentences)))
}

#[derive(Clone, Debug)]
pub struct SyntheticSplits {
    pub train: LabeledCorpus,
    pub dev: LabeledCorpus,
    pub test: LabeledCorpus,
}

/// One seeded stream cut into train/dev/test; dev and test are indexed with
/// the training tables.
pub fn generate_synthetic_splits(
    seed: u64,
    sizes: (usize, usize, usize),
    slot_types: usize,
    vocab_size: usize,
) -> Result<SyntheticSplits> {
    let all = generate_synthetic_corpus(seed, sizes.0 + sizes.1 + sizes.2, slot_types, vocab_size)?;
    let mut sentences = all.sentences;
    let test = sentences.split_off(sizes.0 + sizes.1);
    let dev = sentences.split_off(sizes.0);
    let train = LabeledCorpus::from_sentences(sentences);
    let dev = LabeledCorpus::from_sentences(dev).with_tables_of(&train);
    let test = LabeledCorpus::from_sentences(test).with_tables_of(&train);
    Ok(SyntheticSplits { train, dev, test })
}
