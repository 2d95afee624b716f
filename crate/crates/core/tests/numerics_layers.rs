mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slotfill::layers::{context_vector, context_vectors, read_glove, sentence_vector, BiLstmEncoder, FeedForwardHead};
use slotfill::numerics::{finite_difference_check, Graph, ParamSet, Tensor};
use slotfill::objectives::{
    mi_discriminator_loss, sentence_label_loss, word_from_context_loss, Discriminator, SentenceLabelVector,
};
use slotfill::Error;

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            for p in 0..k {
                out[i * m + j] += a.at(i, p) * b.at(p, j);
            }
        }
    }
    out
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_matrix(&mut rng, 5, 4);
    let b = random_matrix(&mut rng, 4, 3);
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
    let c = g.matmul(va, vb).unwrap();
    assert_eq!(g.value(c).shape(), &[5, 3]);
    for (got, want) in g.value(c).data().iter().zip(naive_matmul(&a, &b)) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn matmul_gradient_is_transposed_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_matrix(&mut rng, 3, 4);
    let b = random_matrix(&mut rng, 4, 2);
    let mut g = Graph::new();
    let (va, vb) = (g.param(a.clone()), g.param(b.clone()));
    let c = g.matmul(va, vb).unwrap();
    let s = g.sum(c);
    g.backward(s).unwrap();
    // d sum(AB) / dA[i][p] = sum_j B[p][j]
    let ga = g.grad(va).unwrap();
    for i in 0..3 {
        for p in 0..4 {
            let want: f64 = b.row(p).iter().sum();
            assert!((ga.at(i, p) - want).abs() < 1e-12);
        }
    }
    let gb = g.grad(vb).unwrap();
    for p in 0..4 {
        let want: f64 = (0..3).map(|i| a.at(i, p)).sum();
        for j in 0..2 {
            assert!((gb.at(p, j) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn matmul_rejects_inner_dimension_mismatch() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(g.matmul(a, b), Err(Error::Shape { .. })));
}

fn encoder_params(seed: u64, d_in: usize, h: usize) -> (BiLstmEncoder, ParamSet) {
    let enc = BiLstmEncoder::new("lstm", d_in, h);
    let mut p = ParamSet::new();
    enc.init(&mut p, &mut ChaCha8Rng::seed_from_u64(seed));
    (enc, p)
}

#[test]
fn bilstm_gradients_match_finite_differences() {
    let (enc, mut p) = encoder_params(3, 3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    p.insert("x", random_matrix(&mut rng, 4, 3));
    let report = finite_difference_check(
        |g, b| {
            let h = enc.encode(g, b, b.var("x")?)?;
            let sq = g.mul(h, h)?;
            Ok(g.sum(sq))
        },
        &p,
        1e-5,
        60,
        0,
        None,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn bilstm_with_mirrored_weights_is_reversal_symmetric() {
    let (enc, mut p) = encoder_params(5, 3, 4);
    for part in ["w_ih", "w_hh", "b"] {
        let fwd = p.get(&format!("lstm.fwd.{part}")).unwrap().clone();
        p.insert(format!("lstm.bwd.{part}"), fwd);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_matrix(&mut rng, 5, 3);
    let reversed = Tensor::from_rows(&x.to_rows().into_iter().rev().collect::<Vec<_>>()).unwrap();

    let run = |input: &Tensor| {
        let mut g = Graph::new();
        let b = p.bind_frozen(&mut g);
        let v = g.constant(input.clone());
        let h = enc.encode(&mut g, &b, v).unwrap();
        g.value(h).clone()
    };
    let a = run(&x);
    let r = run(&reversed);
    let n = 5;
    for t in 0..n {
        let (fwd_a, bwd_a) = a.row(t).split_at(4);
        let (fwd_r, bwd_r) = r.row(n - 1 - t).split_at(4);
        for (u, v) in fwd_a.iter().zip(bwd_r) {
            assert!((u - v).abs() < 1e-12);
        }
        for (u, v) in bwd_a.iter().zip(fwd_r) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn bilstm_parameter_count_matches_stored_tensors() {
    for (d, h) in [(1, 1), (3, 2), (330, 200)] {
        let (enc, p) = encoder_params(0, d, h);
        assert_eq!(enc.param_count(), p.scalar_count());
        assert_eq!(enc.param_count(), 8 * h * (d + h + 1));
    }
}

#[test]
fn objectives_pass_finite_difference_checks_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (n, m, k) = (4, 6, 5);
    let disc = Discriminator::new("disc", m, 3);
    let wp = FeedForwardHead::new("wp", m, 3, k);
    let sp = FeedForwardHead::new("sp", m, 3, k);
    let mut p = ParamSet::new();
    disc.init(&mut p, &mut rng);
    wp.init(&mut p, &mut rng);
    sp.init(&mut p, &mut rng);
    p.insert("h", random_matrix(&mut rng, n, m));
    let negatives = vec![Some(2), Some(3), Some(0), Some(1)];
    let gold = vec![0, 4, 1, 1];
    let target = SentenceLabelVector::from_labels(&gold, k, None).unwrap();

    let check = |label: &str, f: &dyn Fn(&mut Graph, &slotfill::numerics::Bound) -> slotfill::Result<slotfill::numerics::Var>| {
        let r = finite_difference_check(f, &p, 1e-5, 80, 1, None).unwrap();
        assert!(r.max_rel_error < 1e-4, "{label}: {r:?}");
    };
    check("disc", &|g, b| {
        let h = b.var("h")?;
        let c = context_vectors(g, h)?;
        mi_discriminator_loss(g, b, h, c, &negatives, &disc)
    });
    check("wp", &|g, b| {
        let c = context_vectors(g, b.var("h")?)?;
        word_from_context_loss(g, b, c, &gold, &wp)
    });
    check("sp", &|g, b| {
        let s = sentence_vector(g, b.var("h")?)?;
        sentence_label_loss(g, b, s, &target, &sp)
    });
}

#[test]
fn glove_reader_maps_known_tokens_and_skips_others() {
    let known = ["play", "music"];
    let got = read_glove(&common::fixture("glove_small.txt"), 3, |t| known.iter().position(|k| *k == t)).unwrap();
    assert_eq!((got.lines, got.skipped), (3, 1));
    assert_eq!(got.vectors, vec![(0, vec![0.1, 0.2, 0.3]), (1, vec![-0.5, 0.25, 0.01])]);
}

#[test]
fn glove_reader_reports_bad_line() {
    let err = read_glove(&common::fixture("glove_bad.txt"), 3, |_| Some(0)).unwrap_err();
    match err {
        Error::Parse { line, .. } => assert_eq!(line, 2),
        other => panic!("unexpected {other:?}"),
    }
}

fn naive_context(rows: &[Vec<f64>], i: usize) -> Vec<f64> {
    let m = rows[0].len();
    if rows.len() == 1 {
        return vec![0.0; m];
    }
    (0..m)
        .map(|c| {
            rows.iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, r)| r[c])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

fn matrix_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..8, 1usize..6).prop_flat_map(|(n, m)| prop::collection::vec(prop::collection::vec(-5.0f64..5.0, m), n))
}

proptest! {
    #[test]
    fn context_pooling_matches_naive_max(rows in matrix_strategy()) {
        let mut g = Graph::new();
        let h = g.constant(Tensor::from_rows(&rows).unwrap());
        let all = context_vectors(&mut g, h).unwrap();
        for i in 0..rows.len() {
            let want = naive_context(&rows, i);
            let one = context_vector(&mut g, h, i).unwrap();
            prop_assert_eq!(g.value(one).data(), &want[..]);
            prop_assert_eq!(g.value(all).row(i), &want[..]);
        }
    }

    #[test]
    fn context_ignores_changes_to_own_row(rows in matrix_strategy(), bump in -10.0f64..10.0, pick in 0usize..8) {
        let i = pick % rows.len();
        let mut changed = rows.clone();
        changed[i].iter_mut().for_each(|v| *v += bump);
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_rows(&rows).unwrap());
        let b = g.constant(Tensor::from_rows(&changed).unwrap());
        let ca = context_vector(&mut g, a, i).unwrap();
        let cb = context_vector(&mut g, b, i).unwrap();
        prop_assert_eq!(g.value(ca).data(), g.value(cb).data());
    }

    #[test]
    fn sentence_vector_dominates_every_context(rows in matrix_strategy()) {
        // A lone row has the zero context, which the max need not dominate.
        prop_assume!(rows.len() > 1);
        let mut g = Graph::new();
        let h = g.constant(Tensor::from_rows(&rows).unwrap());
        let s = sentence_vector(&mut g, h).unwrap();
        let c = context_vectors(&mut g, h).unwrap();
        for i in 0..rows.len() {
            for (cv, sv) in g.value(c).row(i).iter().zip(g.value(s).data()) {
                prop_assert!(cv <= sv);
            }
        }
    }
}
