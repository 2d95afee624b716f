mod common;

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use common::fixture;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slotfill::data::{
    generate_synthetic_splits, load_conll, make_batches, parse_conll, write_conll, ColumnSpec, PosSource,
};
use slotfill::evaluation::span_f1;
use slotfill::layers::PAD;
use slotfill::model::{ModelConfig, SlotFillingModel};
use slotfill::numerics::Graph;
use slotfill::objectives::LossWeights;
use slotfill::Error;

#[test]
fn synthetic_corpus_survives_a_write_read_cycle() {
    let splits = generate_synthetic_splits(3, (40, 5, 5), 4, 60).unwrap();
    let mut buf = Vec::new();
    write_conll(&mut buf, &splits.train.sentences).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let back = parse_conll(&text, &ColumnSpec::default(), Path::new("mem")).unwrap();
    assert_eq!(back, splits.train.sentences);
}

#[test]
fn editing_commands_have_object_as_most_frequent_type() {
    let c = load_conll(&fixture("editme_like.conll"), &ColumnSpec::default()).unwrap();
    let st = c.stats("train");
    assert_eq!(st.sentences, 8);
    assert_eq!(st.most_frequent_type(), Some("Object"));
    assert_eq!(st.oov_tokens, 0);
    let types: BTreeSet<String> = c.label_set.slot_types().into_iter().collect();
    assert!(types.contains("Action") && types.contains("Object"));
}

#[test]
fn single_token_file_loads() {
    let c = load_conll(&fixture("single_token.conll"), &ColumnSpec::default()).unwrap();
    assert_eq!(c.sentences.len(), 1);
    assert_eq!(c.sentences[0].tokens, vec!["play"]);
}

#[test]
fn ragged_line_is_reported_with_its_number() {
    match load_conll(&fixture("ragged.conll"), &ColumnSpec::default()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn blank_only_file_is_empty_input() {
    assert!(matches!(
        load_conll(&fixture("empty.conll"), &ColumnSpec::default()),
        Err(Error::EmptyInput(_))
    ));
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(
        load_conll(&fixture("no_such_file.conll"), &ColumnSpec::default()),
        Err(Error::Io { .. })
    ));
}

#[test]
fn hashed_pos_ignores_the_pos_column() {
    let spec = ColumnSpec {
        token_col: 0,
        pos: PosSource::Hash,
        tag_col: 1,
    };
    let c = parse_conll("Play O\nplay B-x\n", &spec, Path::new("mem")).unwrap();
    assert_eq!(c[0].pos_tags[0], c[0].pos_tags[1]);
    assert!(c[0].pos_tags[0].starts_with('H'));
}

#[test]
fn batches_cover_every_sentence_once() {
    let splits = generate_synthetic_splits(5, (103, 1, 1), 4, 60).unwrap();
    let enc = splits.train.encode();
    for (bs, seed) in [(1, None), (8, Some(1)), (32, Some(2)), (500, None)] {
        let batches = make_batches(&enc, bs, seed);
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.sentence_ids.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..enc.len()).collect::<Vec<_>>());
        for b in &batches {
            for (col, &id) in b.sentence_ids.iter().enumerate() {
                assert_eq!(b.sentence(col), enc[id]);
            }
        }
    }
}

#[test]
fn padded_cells_never_reach_the_loss() {
    let splits = generate_synthetic_splits(9, (12, 1, 1), 3, 40).unwrap();
    let train = &splits.train;
    let enc = train.encode();
    let cfg = ModelConfig {
        word_dim: 6,
        pos_dim: 3,
        lstm_hidden: 4,
        ff_hidden: 5,
        ..ModelConfig::default()
    };
    let model = SlotFillingModel::new(&cfg, train.word_vocab.len(), train.pos_vocab.len(), &train.label_set).unwrap();
    let params = model.init(1, None);
    let weights = LossWeights {
        alpha: 0.3,
        beta: 0.2,
        gamma: 0.1,
    };
    let batch = make_batches(&enc, 12, None).remove(0);
    assert!(batch.mask.iter().flatten().any(|&m| m == 0), "need some padding");

    let mut corrupted = batch.clone();
    for t in 0..corrupted.mask.len() {
        for b in 0..corrupted.size() {
            if corrupted.mask[t][b] == 0 {
                assert_eq!(corrupted.word_ids[t][b], PAD);
                corrupted.word_ids[t][b] = 3;
                corrupted.pos_ids[t][b] = 3;
                corrupted.label_ids[t][b] = 1;
            }
        }
    }
    let loss = |b: &slotfill::data::Batch| {
        let mut g = Graph::new();
        let bound = params.bind_frozen(&mut g);
        let (_, parts) = model
            .batch_loss(&mut g, &bound, &b.sentences(), &weights, &mut ChaCha8Rng::seed_from_u64(4))
            .unwrap();
        parts
    };
    assert_eq!(loss(&batch), loss(&corrupted));
}

fn memorizer(train: &slotfill::data::LabeledCorpus) -> HashMap<String, String> {
    let mut counts: HashMap<String, HashMap<String, usize>> = HashMap::new();
    for s in &train.sentences {
        for (tok, tag) in s.tokens.iter().zip(&s.bio_tags) {
            *counts.entry(tok.clone()).or_default().entry(tag.clone()).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .map(|(tok, tags)| {
            let best = tags.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).unwrap();
            (tok, best.0)
        })
        .collect()
}

#[test]
fn synthetic_labels_are_a_function_of_tokens() {
    let splits = generate_synthetic_splits(7, (200, 50, 50), 4, 60).unwrap();
    let lookup = memorizer(&splits.train);

    let memorized: Vec<Vec<String>> = splits
        .test
        .sentences
        .iter()
        .map(|s| s.tokens.iter().map(|t| lookup.get(t).cloned().unwrap_or_else(|| "O".into())).collect())
        .collect();
    let mem = span_f1(&splits.test.sentences, &memorized).unwrap();
    assert!(mem.f1 > 0.95, "memorization F1 {}", mem.f1);

    let mut tag_counts: HashMap<&str, usize> = HashMap::new();
    for s in &splits.train.sentences {
        for t in &s.bio_tags {
            *tag_counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let majority_span_tag = tag_counts
        .iter()
        .filter(|(t, _)| **t != "O")
        .max_by_key(|(t, c)| (**c, std::cmp::Reverse(**t)))
        .map(|(t, _)| t.to_string())
        .unwrap();
    for guess in ["O".to_string(), majority_span_tag] {
        let pred: Vec<Vec<String>> = splits.test.sentences.iter().map(|s| vec![guess.clone(); s.len()]).collect();
        let r = span_f1(&splits.test.sentences, &pred).unwrap();
        assert!(r.f1 < 0.3, "constant {guess} scored {}", r.f1);
    }
}
