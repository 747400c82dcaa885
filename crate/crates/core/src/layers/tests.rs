use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::autodiff::check::{ABS_FLOOR, REL_TOL_F64};
use crate::autodiff::{Tensor, Var};
use crate::error::Error;
use crate::gradcheck::check_loss;
use crate::params::{ParamStore, Session};

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn assert_grads_ok(
    store: &ParamStore<f64>,
    build: impl Fn(&mut Session<f64>) -> crate::Result<Var>,
) {
    let checks = check_loss(store, REL_TOL_F64, ABS_FLOOR, build).unwrap();
    assert!(!checks.is_empty());
    for c in checks {
        assert!(
            c.max_error < REL_TOL_F64,
            "{} max rel err {:e}",
            c.name,
            c.max_error
        );
    }
}

#[test]
fn embedding_lookup_and_unk_fallback() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let table = EmbeddingTable::<f64>::random(&words(&["the", "cat"]), 4, &mut rng);
    let idx = table.indices(&["cat", "dog"]);
    assert_eq!(idx, vec![2, UNK_INDEX]);
    let m = table.lookup(&idx).unwrap();
    assert_eq!(m.shape(), &[4, 2]);
    for k in 0..4 {
        assert_eq!(m.get(k, 0), table.matrix().get(2, k));
        assert_eq!(m.get(k, 1), table.matrix().get(UNK_INDEX, k));
    }
    assert!(matches!(table.lookup(&[17]), Err(Error::Data(_))));
}

#[test]
fn embedding_requires_unk_row() {
    let m = Tensor::<f64>::zeros(&[2, 3]);
    assert!(EmbeddingTable::new(words(&["a", "b"]), m).is_err());
}

#[test]
fn word_vector_file_parsing() {
    let text = "2 3\nthe 0.1 0.2 0.3\ncat -1 0 1e-2\n";
    let wv = WordVectors::parse(text, std::path::Path::new("v.txt")).unwrap();
    assert_eq!(wv.dim, 3);
    assert_eq!(wv.words, words(&["the", "cat"]));
    assert_eq!(wv.vectors[1], vec![-1.0, 0.0, 0.01]);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let table = EmbeddingTable::<f64>::with_pretrained(&words(&["cat", "zebra"]), &wv, &mut rng);
    assert_eq!(
        table.lookup(&[table.index_of("cat")]).unwrap().data(),
        &[-1.0, 0.0, 0.01]
    );

    let bad = "the 0.1 0.2\ncat 0.1 x\n";
    match WordVectors::parse(bad, std::path::Path::new("v.txt")) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }
}

fn char_cnn_store(
    window: usize,
    filters: usize,
    char_dim: usize,
) -> (ParamStore<f64>, CharCnn, CharVocab) {
    let vocab = CharVocab::from_words(&["abc", "de"]);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cnn = CharCnn::new(&mut store, vocab.len(), char_dim, window, filters, &mut rng);
    (store, cnn, vocab)
}

#[test]
fn char_cnn_single_character_word_is_padded() {
    let (store, cnn, vocab) = char_cnn_store(3, 4, 5);
    let mut s = Session::infer(&store);
    let v = cnn.embed_word(&mut s, &vocab.encode("a")).unwrap();
    assert_eq!(s.shape(v), &[4]);
    assert!(s.value(v).is_finite());
}

#[test]
fn char_cnn_zero_filters_yield_bias() {
    let (mut store, cnn, vocab) = char_cnn_store(3, 4, 5);
    store.set(cnn.kernel, Tensor::zeros(&[4, 15])).unwrap();
    let bias = Tensor::vector(vec![0.5, -1.0, 2.0, 0.0]).unwrap();
    store.set(cnn.bias, bias.clone()).unwrap();
    let table =
        EmbeddingTable::<f64>::random(&words(&["abc", "de"]), 3, &mut ChaCha8Rng::seed_from_u64(1));
    let toks = ["abc", "de", "zzz"];
    let chars: Vec<Vec<usize>> = toks.iter().map(|t| vocab.encode(t)).collect();
    let mut s = Session::infer(&store);
    let e = embed_tokens(&mut s, &table, &table.indices(&toks), Some((&cnn, &chars))).unwrap();
    let m = s.value(e).clone();
    assert_eq!(m.shape(), &[7, 3]);
    for j in 0..3 {
        assert_eq!(&m.column(j)[3..], bias.data());
    }
}

#[test]
fn char_cnn_filter_permutation_permutes_output() {
    let (mut store, cnn, vocab) = char_cnn_store(2, 3, 4);
    let word = vocab.encode("abcd");
    let mut s = Session::infer(&store);
    let v = cnn.embed_word(&mut s, &word).unwrap();
    let base = s.value(v).data().to_vec();
    drop(s);
    let k = store.get(cnn.kernel).clone();
    let b = store.get(cnn.bias).clone();
    let perm = [2, 0, 1];
    let cols = k.cols();
    let mut kp = Vec::new();
    let mut bp = Vec::new();
    for &p in &perm {
        kp.extend_from_slice(&k.data()[p * cols..(p + 1) * cols]);
        bp.push(b.data()[p]);
    }
    store
        .set(cnn.kernel, Tensor::matrix(3, cols, kp).unwrap())
        .unwrap();
    store.set(cnn.bias, Tensor::vector(bp).unwrap()).unwrap();
    let mut s = Session::infer(&store);
    let v = cnn.embed_word(&mut s, &word).unwrap();
    let permuted = s.value(v).data().to_vec();
    for (i, &p) in perm.iter().enumerate() {
        assert_eq!(permuted[i], base[p]);
    }
}

#[test]
fn char_cnn_hand_computed_convolution() {
    let (mut store, cnn, vocab) = char_cnn_store(2, 1, 2);
    let word = vocab.encode("abc");
    assert_eq!(word, vec![2, 3, 4]);
    let n_chars = vocab.len();
    let mut emb = vec![0.0; 2 * n_chars];
    // columns for a, b, c
    for (c, (x, y)) in [(2, (1.0, 0.0)), (3, (0.5, -1.0)), (4, (2.0, 1.0))] {
        emb[c] = x;
        emb[n_chars + c] = y;
    }
    store
        .set(cnn.emb, Tensor::matrix(2, n_chars, emb).unwrap())
        .unwrap();
    store
        .set(cnn.kernel, Tensor::from_rows(&[&[0.3, -0.2, 0.1, 0.4]]))
        .unwrap();
    store
        .set(cnn.bias, Tensor::vector(vec![0.05]).unwrap())
        .unwrap();
    let mut s = Session::infer(&store);
    let v = cnn.embed_word(&mut s, &word).unwrap();
    // positions (a,b) -> 0.0 and (b,c) -> 1.0
    assert!((s.value(v).data()[0] - 1.0).abs() < 1e-12);
}

#[test]
fn char_cnn_unknown_characters_map_to_unk() {
    let vocab = CharVocab::from_words(&["ab"]);
    assert_eq!(vocab.encode("aZ"), vec![2, UNK_CHAR]);
}

#[test]
fn char_cnn_gradients() {
    let (store, cnn, vocab) = char_cnn_store(3, 4, 3);
    let chars: Vec<Vec<usize>> = ["abc", "d", "eabd"]
        .iter()
        .map(|w| vocab.encode(w))
        .collect();
    assert_grads_ok(&store, |s| {
        let m = cnn.embed_words(s, &chars)?;
        let t = s.tanh(m);
        Ok(s.sum(t))
    });
}

#[test]
fn bilstm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let lstm = BiLstm::new(&mut store, "enc", 3, 2, &mut rng);
    let x = randn(&mut rng, 3, 4);
    let w = randn(&mut rng, 4, 4);
    assert_grads_ok(&store, |s| {
        let xv = s.constant(x.clone());
        let h = lstm.forward(s, xv)?;
        let wv = s.constant(w.clone());
        let p = s.mul(h, wv)?;
        Ok(s.sum(p))
    });
}

fn attention_fixture(max_len: usize, seed: u64) -> (ParamStore<f64>, TextAwareAttention) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let att = TextAwareAttention::new(&mut store, max_len, &mut rng);
    (store, att)
}

#[test]
fn attention_weights_sum_to_one() {
    let (store, att) = attention_fixture(8, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let mut s = Session::infer(&store);
        let hw = s.constant(randn(&mut rng, 5, 6));
        let hc = s.constant(randn(&mut rng, 4, 6));
        let a = att.forward(&mut s, hw, hc, None).unwrap();
        let sum: f64 = s.value(a.alpha).data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert_eq!(s.shape(a.output), &[4, 6]);
    }
}

#[test]
fn attention_zero_cognitive_input_gives_uniform_weights() {
    let (store, att) = attention_fixture(8, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut s = Session::infer(&store);
    let hw = s.constant(randn(&mut rng, 5, 3));
    let hc = s.constant(Tensor::zeros(&[4, 3]));
    let a = att.forward(&mut s, hw, hc, None).unwrap();
    assert!(s
        .value(a.alpha)
        .data()
        .iter()
        .all(|&v| (v - 0.25).abs() < 1e-15));
    assert!(s.value(a.output).data().iter().all(|&v| v == 0.0));
}

#[test]
fn attention_hand_computed_two_by_two() {
    let (mut store, att) = attention_fixture(4, 5);
    store.set(att.u, Tensor::identity(4)).unwrap();
    let hw = [[1.0, 0.5], [-0.5, 2.0]];
    let hc = [[0.3, -1.0], [2.0, 0.1]];
    // G = tanh(hw · I · hcᵀ)
    let mut g = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            g[i][j] = (0..2).map(|t| hw[i][t] * hc[j][t]).sum::<f64>().tanh();
        }
    }
    let score = [g[0][0].max(g[1][0]), g[0][1].max(g[1][1])];
    let z = score[0].exp() + score[1].exp();
    let alpha = [score[0].exp() / z, score[1].exp() / z];

    let mut s = Session::infer(&store);
    let hwv = s.constant(Tensor::from_rows(&[&hw[0], &hw[1]]));
    let hcv = s.constant(Tensor::from_rows(&[&hc[0], &hc[1]]));
    let a = att.forward(&mut s, hwv, hcv, None).unwrap();
    let gv = s.value(a.compat);
    for i in 0..2 {
        for j in 0..2 {
            assert!((gv.get(i, j) - g[i][j]).abs() < 1e-10);
        }
    }
    for j in 0..2 {
        assert!((s.value(a.alpha).data()[j] - alpha[j]).abs() < 1e-10);
        for t in 0..2 {
            assert!((s.value(a.output).get(j, t) - alpha[j] * hc[j][t]).abs() < 1e-10);
        }
    }
}

#[test]
fn attention_rejects_sentences_longer_than_capacity() {
    let (store, att) = attention_fixture(3, 6);
    let mut s = Session::infer(&store);
    let hw = s.constant(Tensor::zeros(&[2, 4]));
    let hc = s.constant(Tensor::zeros(&[2, 4]));
    assert!(matches!(
        att.forward(&mut s, hw, hc, None),
        Err(Error::Capacity { len: 4, max: 3 })
    ));
}

#[test]
fn attention_masked_positions_contribute_nothing() {
    let (store, att) = attention_fixture(6, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let hw = randn(&mut rng, 3, 4);
    let hc = randn(&mut rng, 2, 4);
    let mask = [true, true, true, false];
    let run = |hw: Tensor<f64>, hc: Tensor<f64>| {
        let mut s = Session::infer(&store);
        let a = s.constant(hw);
        let b = s.constant(hc);
        let r = att.forward(&mut s, a, b, Some(&mask)).unwrap();
        (s.value(r.compat).clone(), s.value(r.alpha).clone())
    };
    let (g1, a1) = run(hw.clone(), hc.clone());
    // change only the padded column
    let mut hw2 = hw.clone();
    let mut hc2 = hc.clone();
    for r in 0..3 {
        hw2.data_mut()[r * 4 + 3] = 100.0;
    }
    for r in 0..2 {
        hc2.data_mut()[r * 4 + 3] = -50.0;
    }
    let (g2, a2) = run(hw2, hc2);
    assert_eq!(g1, g2);
    assert_eq!(a1, a2);
}

#[test]
fn attention_gradients() {
    let (store, att) = attention_fixture(5, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let hw = randn(&mut rng, 3, 4);
    let hc = randn(&mut rng, 2, 4);
    let w = randn(&mut rng, 2, 4);
    assert_grads_ok(&store, |s| {
        let a = s.constant(hw.clone());
        let b = s.constant(hc.clone());
        let r = att.forward(s, a, b, None)?;
        let wv = s.constant(w.clone());
        let p = s.mul(r.output, wv)?;
        Ok(s.sum(p))
    });
}

fn pool_fixture(dim: usize, seed: u64) -> (ParamStore<f64>, SelfAttentionPool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let pool = SelfAttentionPool::new(&mut store, "pool", dim, &mut rng);
    (store, pool)
}

#[test]
fn self_attention_pool_single_position_is_identity() {
    let (store, pool) = pool_fixture(3, 1);
    let mut s = Session::infer(&store);
    let h = s.constant(Tensor::from_rows(&[&[0.2], &[-1.0], &[3.0]]));
    let p = pool.forward(&mut s, h, None).unwrap();
    assert_eq!(s.value(p.output).data(), &[0.2, -1.0, 3.0]);
}

#[test]
fn self_attention_pool_zero_v_gives_column_mean() {
    let (mut store, pool) = pool_fixture(2, 2);
    store.set(pool.v, Tensor::zeros(&[2])).unwrap();
    let mut s = Session::infer(&store);
    let h = s.constant(Tensor::from_rows(&[&[1.0, 2.0, 6.0], &[0.0, -3.0, 3.0]]));
    let p = pool.forward(&mut s, h, None).unwrap();
    let out = s.value(p.output).data();
    assert!((out[0] - 3.0).abs() < 1e-15 && out[1].abs() < 1e-15);
    assert!(s
        .value(p.weights)
        .data()
        .iter()
        .all(|&w| (w - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn self_attention_pool_matches_direct_evaluation() {
    let (store, pool) = pool_fixture(3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = randn(&mut rng, 3, 4);
    let (w, b, v) = (store.get(pool.w), store.get(pool.b), store.get(pool.v));
    let scores: Vec<f64> = (0..4)
        .map(|i| {
            (0..3)
                .map(|r| {
                    let pre = (0..3).map(|c| w.get(r, c) * h.get(c, i)).sum::<f64>() + b.data()[r];
                    v.data()[r] * pre.tanh()
                })
                .sum()
        })
        .collect();
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
    let alpha: Vec<f64> = scores.iter().map(|s| (s - m).exp() / z).collect();
    let expect: Vec<f64> = (0..3)
        .map(|r| (0..4).map(|i| alpha[i] * h.get(r, i)).sum())
        .collect();

    let mut s = Session::infer(&store);
    let hv = s.constant(h);
    let p = pool.forward(&mut s, hv, None).unwrap();
    for (a, e) in s.value(p.output).data().iter().zip(&expect) {
        assert!((a - e).abs() < 1e-10);
    }
}

#[test]
fn self_attention_pool_mask_excludes_positions() {
    let (store, pool) = pool_fixture(2, 5);
    let full = Tensor::from_rows(&[&[1.0, 2.0, 9.0], &[0.5, -1.0, 9.0]]);
    let short = Tensor::from_rows(&[&[1.0, 2.0], &[0.5, -1.0]]);
    let mut s = Session::infer(&store);
    let a = s.constant(full);
    let b = s.constant(short);
    let pa = pool.forward(&mut s, a, Some(&[true, true, false])).unwrap();
    let pb = pool.forward(&mut s, b, None).unwrap();
    assert_eq!(s.value(pa.output), s.value(pb.output));
}

#[test]
fn self_attention_pool_gradients() {
    let (store, pool) = pool_fixture(3, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = randn(&mut rng, 3, 5);
    assert_grads_ok(&store, |s| {
        let hv = s.constant(h.clone());
        let p = pool.forward(s, hv, None)?;
        let t = s.tanh(p.output);
        Ok(s.sum(t))
    });
}

#[test]
fn linear_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f64>::new();
    let lin = Linear::new(&mut store, "proj", "out", 2, 2, &mut rng);
    store.set(lin.w, Tensor::identity(2)).unwrap();
    let mut s = Session::infer(&store);
    let h = s.constant(Tensor::from_rows(&[&[1.0, -2.0], &[3.0, 4.0]]));
    let y = lin.forward(&mut s, h).unwrap();
    assert_eq!(s.value(y).data(), &[1.0, -2.0, 3.0, 4.0]);
    drop(s);

    store
        .set(lin.b, Tensor::vector(vec![0.5, -0.25]).unwrap())
        .unwrap();
    let mut s = Session::infer(&store);
    let h = s.constant(Tensor::zeros(&[2, 3]));
    let y = lin.forward(&mut s, h).unwrap();
    assert_eq!(s.value(y).data(), &[0.5, 0.5, 0.5, -0.25, -0.25, -0.25]);

    let bad = s.constant(Tensor::zeros(&[3, 1]));
    assert!(matches!(
        lin.forward(&mut s, bad),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn linear_random_case_matches_manual_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    let lin = Linear::new(&mut store, "proj", "out", 3, 2, &mut rng);
    store
        .set(lin.b, Tensor::vector(vec![0.1, -0.7]).unwrap())
        .unwrap();
    let h = randn(&mut rng, 3, 4);
    let (w, b) = (store.get(lin.w).clone(), store.get(lin.b).clone());
    let mut s = Session::infer(&store);
    let hv = s.constant(h.clone());
    let y = lin.forward(&mut s, hv).unwrap();
    for r in 0..2 {
        for c in 0..4 {
            let e = (0..3).map(|k| w.get(r, k) * h.get(k, c)).sum::<f64>() + b.data()[r];
            assert!((s.value(y).get(r, c) - e).abs() < 1e-12);
        }
    }
}

#[test]
fn linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let lin = Linear::new(&mut store, "proj", "out", 3, 2, &mut rng);
    let h = randn(&mut rng, 3, 4);
    assert_grads_ok(&store, |s| {
        let hv = s.constant(h.clone());
        let y = lin.forward(s, hv)?;
        let t = s.tanh(y);
        Ok(s.sum(t))
    });
}
