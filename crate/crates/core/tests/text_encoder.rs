use kgnews::text_encoder::{lstm_cell, BiLstmParams, LstmWeights, TokenSequence, Vocabulary, MAX_TOKENS, PAD_ID};
use ndarray::{s, Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_params(vocab: usize, e: usize, h: usize, seed: u64) -> BiLstmParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = BiLstmParams::<f64>::zeros(vocab, e, h);
    p.embedding.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
    for layer in p.layers.iter_mut() {
        for w in [&mut layer.fwd, &mut layer.bwd] {
            w.w.mapv_inplace(|_| rng.gen_range(-0.6..0.6));
            w.u.mapv_inplace(|_| rng.gen_range(-0.6..0.6));
            w.b.mapv_inplace(|_| rng.gen_range(-0.6..0.6));
        }
    }
    p
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Straight-line cell: every gate unit is written out as a dot product.
fn cell_by_hand(x: &[f64], h_prev: &[f64], c_prev: &[f64], w: &LstmWeights<f64>) -> (Vec<f64>, Vec<f64>) {
    let hd = h_prev.len();
    let pre = |row: usize| {
        let mut z = w.b[row];
        for (k, xv) in x.iter().enumerate() {
            z += w.w[[row, k]] * xv;
        }
        for (k, hv) in h_prev.iter().enumerate() {
            z += w.u[[row, k]] * hv;
        }
        z
    };
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    for j in 0..hd {
        let i = sigmoid(pre(j));
        let f = sigmoid(pre(hd + j));
        let g = pre(2 * hd + j).tanh();
        let o = sigmoid(pre(3 * hd + j));
        c[j] = f * c_prev[j] + i * g;
        h[j] = o * c[j].tanh();
    }
    (h, c)
}

#[test]
fn cell_matches_hand_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut w = LstmWeights::<f64>::zeros(5, 3);
    w.w.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
    w.u.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
    w.b.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
    let x: Array1<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let h0: Array1<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c0: Array1<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let step = lstm_cell(x.view(), h0.view(), c0.view(), &w).unwrap();
    let (h, c) = cell_by_hand(x.as_slice().unwrap(), h0.as_slice().unwrap(), c0.as_slice().unwrap(), &w);
    for j in 0..3 {
        assert!((step.h[j] - h[j]).abs() < 1e-12);
        assert!((step.c[j] - c[j]).abs() < 1e-12);
    }
}

/// Runs one direction with `lstm_cell`, returning the hidden state per step.
fn unroll(w: &LstmWeights<f64>, inputs: &[Array1<f64>]) -> Vec<Array1<f64>> {
    let hd = w.u.ncols();
    let (mut h, mut c) = (Array1::zeros(hd), Array1::zeros(hd));
    let mut out = Vec::new();
    for x in inputs {
        let step = lstm_cell(x.view(), h.view(), c.view(), w).unwrap();
        h = step.h;
        c = step.c;
        out.push(h.clone());
    }
    out
}

fn oracle_encode(p: &BiLstmParams<f64>, ids: &[usize]) -> Array1<f64> {
    let hd = p.hidden();
    let mut inputs: Vec<Array1<f64>> = ids.iter().map(|&i| p.embedding.row(i).to_owned()).collect();
    let mut last = (Array1::zeros(hd), Array1::zeros(hd));
    for layer in &p.layers {
        let fwd = unroll(&layer.fwd, &inputs);
        let rev: Vec<Array1<f64>> = inputs.iter().rev().cloned().collect();
        let mut bwd = unroll(&layer.bwd, &rev);
        last = (fwd.last().unwrap().clone(), bwd.last().unwrap().clone());
        bwd.reverse();
        inputs = fwd
            .iter()
            .zip(&bwd)
            .map(|(f, b)| f.iter().chain(b.iter()).copied().collect())
            .collect();
    }
    last.0.iter().chain(last.1.iter()).copied().collect()
}

#[test]
fn encode_matches_unrolled_cells() {
    for seed in 0..4 {
        let p = random_params(9, 4, 3, seed);
        let ids = [2, 7, 3, 3, 8];
        let got = p.encode(&TokenSequence::from_ids(ids.to_vec())).unwrap().title_vector;
        let want = oracle_encode(&p, &ids);
        assert_eq!(got.len(), 6);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn padding_positions_are_skipped_anywhere() {
    let p = random_params(9, 4, 3, 11);
    let plain = p.encode(&TokenSequence::from_ids(vec![2, 5, 6])).unwrap().title_vector;
    let holey = TokenSequence::new(vec![PAD_ID, 2, PAD_ID, 5, 6, PAD_ID], vec![false, true, false, true, true, false]).unwrap();
    assert_eq!(p.encode(&holey).unwrap().title_vector, plain);
}

fn swap_directions(p: &BiLstmParams<f64>) -> BiLstmParams<f64> {
    let hd = p.hidden();
    let mut q = p.clone();
    for (l, layer) in q.layers.iter_mut().enumerate() {
        std::mem::swap(&mut layer.fwd, &mut layer.bwd);
        if l > 0 {
            // the layer above sees [fwd || bwd] features, so its input columns swap too
            for w in [&mut layer.fwd, &mut layer.bwd] {
                let left = w.w.slice(s![.., ..hd]).to_owned();
                let right = w.w.slice(s![.., hd..]).to_owned();
                w.w.slice_mut(s![.., ..hd]).assign(&right);
                w.w.slice_mut(s![.., hd..]).assign(&left);
            }
        }
    }
    q
}

proptest! {
    #[test]
    fn trailing_padding_is_bit_identical(
        seed in any::<u64>(),
        ids in prop::collection::vec(1usize..12, 0..20),
        pad in 0usize..30,
    ) {
        let p = random_params(12, 3, 4, seed);
        let seq = TokenSequence::from_ids(ids.clone());
        let a = p.encode(&seq).unwrap().title_vector;
        let b = p.encode(&seq.padded_to(ids.len() + pad)).unwrap().title_vector;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn reversal_with_swapped_directions_swaps_halves(
        seed in any::<u64>(),
        ids in prop::collection::vec(1usize..12, 1..10),
    ) {
        let p = random_params(12, 3, 4, seed);
        let q = swap_directions(&p);
        let a = p.encode(&TokenSequence::from_ids(ids.clone())).unwrap().title_vector;
        let rev: Vec<usize> = ids.iter().rev().copied().collect();
        let b = q.encode(&TokenSequence::from_ids(rev)).unwrap().title_vector;
        for j in 0..4 {
            prop_assert!((a[j] - b[4 + j]).abs() < 1e-12);
            prop_assert!((a[4 + j] - b[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn encoding_is_deterministic(seed in any::<u64>(), ids in prop::collection::vec(0usize..12, 0..15)) {
        let p = random_params(12, 3, 2, seed);
        let seq = TokenSequence::from_ids(ids);
        prop_assert_eq!(p.encode(&seq).unwrap().title_vector, p.encode(&seq).unwrap().title_vector);
    }
}

fn objective(p: &BiLstmParams<f64>, seq: &TokenSequence, up: &Array1<f64>) -> f64 {
    p.encode(seq).unwrap().title_vector.dot(up)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

fn weights_mut(q: &mut BiLstmParams<f64>, l: usize, dir: usize) -> &mut LstmWeights<f64> {
    if dir == 0 {
        &mut q.layers[l].fwd
    } else {
        &mut q.layers[l].bwd
    }
}

/// Worst relative error between `analytic` and central differences of the
/// objective over the entries `table` exposes.
fn check_table(
    p: &BiLstmParams<f64>,
    seq: &TokenSequence,
    up: &Array1<f64>,
    analytic: &[f64],
    table: impl Fn(&mut BiLstmParams<f64>) -> &mut [f64],
) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let mut plus = p.clone();
        table(&mut plus)[k] += h;
        let mut minus = p.clone();
        table(&mut minus)[k] -= h;
        let numeric = (objective(&plus, seq, up) - objective(&minus, seq, up)) / (2.0 * h);
        worst = worst.max(rel_err(a, numeric));
    }
    worst
}

#[test]
fn gradients_match_finite_differences_for_every_table() {
    let (vocab, e, hd) = (7, 3, 4);
    let p = random_params(vocab, e, hd, 5);
    let seq = TokenSequence::new(vec![2, 4, 2, 6, 3, PAD_ID], vec![true, true, true, true, true, false]).unwrap();
    assert_eq!(seq.real_ids().count(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let up: Array1<f64> = (0..2 * hd).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let out = p.encode(&seq).unwrap();
    let g = p.encode_backward(&out, up.view()).unwrap();

    let mut dense_emb = Array2::zeros((vocab, e));
    for (&row, grad) in &g.embedding {
        dense_emb.row_mut(row).assign(grad);
    }
    let mut errors = vec![(
        "embedding".to_string(),
        check_table(&p, &seq, &up, dense_emb.as_slice().unwrap(), |q| {
            q.embedding.as_slice_mut().unwrap()
        }),
    )];
    for l in 0..2 {
        for dir in 0..2 {
            let gw = if dir == 0 { &g.layers[l].fwd } else { &g.layers[l].bwd };
            let w = check_table(&p, &seq, &up, gw.w.as_slice().unwrap(), |q| {
                weights_mut(q, l, dir).w.as_slice_mut().unwrap()
            });
            let u = check_table(&p, &seq, &up, gw.u.as_slice().unwrap(), |q| {
                weights_mut(q, l, dir).u.as_slice_mut().unwrap()
            });
            let b = check_table(&p, &seq, &up, gw.b.as_slice().unwrap(), |q| {
                weights_mut(q, l, dir).b.as_slice_mut().unwrap()
            });
            errors.extend([
                (format!("W[{l},{dir}]"), w),
                (format!("U[{l},{dir}]"), u),
                (format!("b[{l},{dir}]"), b),
            ]);
        }
    }
    for (name, err) in &errors {
        assert!(*err < 1e-4, "{name}: relative error {err}");
    }
    // rows of tokens that never occur get no gradient at all
    assert!(!g.embedding.contains_key(&5));
}

#[test]
fn long_titles_are_capped() {
    let words: Vec<String> = (0..300).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::build(&[words.clone()], 1000);
    let seq = vocab.encode_ids(&words);
    assert_eq!(seq.len(), MAX_TOKENS);
    assert_eq!(seq.ids()[255], vocab.id("w255"));
}
