use kgnews::complex_embedding::{
    evaluate_link_prediction, gradients, logistic_loss, train, ComplExModel, Sample, TrainConfig,
};
use kgnews::kg_store::{EntityId, RelationId, Triple, TripleStore};
use ndarray::Array2;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(n_e: usize, n_r: usize, d: usize, seed: u64) -> ComplExModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = |rows| Array2::from_shape_simple_fn((rows, d), || rng.gen_range(-1.0..1.0));
    ComplExModel {
        entity_re: table(n_e),
        entity_im: table(n_e),
        relation_re: table(n_r),
        relation_im: table(n_r),
    }
}

fn complex_score(m: &ComplExModel<f64>, h: usize, r: usize, t: usize) -> f64 {
    (0..m.dim())
        .map(|k| {
            let eh = Complex64::new(m.entity_re[[h, k]], m.entity_im[[h, k]]);
            let wr = Complex64::new(m.relation_re[[r, k]], m.relation_im[[r, k]]);
            let et = Complex64::new(m.entity_re[[t, k]], m.entity_im[[t, k]]);
            eh * wr * et.conj()
        })
        .sum::<Complex64>()
        .re
}

fn score(m: &ComplExModel<f64>, h: usize, r: usize, t: usize) -> f64 {
    m.score(EntityId(h), RelationId(r), EntityId(t)).unwrap()
}

#[test]
fn identity_case_scores_one() {
    let mut m = ComplExModel::<f64>::zeros(1, 1, 1);
    assert_eq!(score(&m, 0, 0, 0), 0.0);
    m.entity_re[[0, 0]] = 1.0;
    m.relation_re[[0, 0]] = 1.0;
    assert_eq!(score(&m, 0, 0, 0), 1.0);
}

proptest! {
    #[test]
    fn score_equals_complex_product(seed in any::<u64>(), d in 1usize..6) {
        let m = random_model(4, 2, d, seed);
        for (h, r, t) in [(0, 0, 1), (2, 1, 3), (3, 0, 3)] {
            let a = score(&m, h, r, t);
            let b = complex_score(&m, h, r, t);
            prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
        }
    }

    #[test]
    fn real_relations_are_symmetric(seed in any::<u64>()) {
        let mut m = random_model(3, 1, 5, seed);
        m.relation_im.fill(0.0);
        prop_assert!((score(&m, 0, 0, 2) - score(&m, 2, 0, 0)).abs() < 1e-12);
    }

    #[test]
    fn imaginary_relations_are_antisymmetric(seed in any::<u64>()) {
        let mut m = random_model(3, 1, 5, seed);
        m.relation_re.fill(0.0);
        prop_assert!((score(&m, 0, 0, 2) + score(&m, 2, 0, 0)).abs() < 1e-12);
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

fn table_mut(m: &mut ComplExModel<f64>, class: usize) -> &mut Array2<f64> {
    match class {
        0 => &mut m.entity_re,
        1 => &mut m.entity_im,
        2 => &mut m.relation_re,
        _ => &mut m.relation_im,
    }
}

/// Largest relative error between analytic and central-difference gradients
/// over every entry of every table.
fn max_gradient_error(n_relations: usize) -> f64 {
    let model = random_model(3, n_relations, 4, 17);
    let lambda = 0.01;
    let batch: Vec<Sample> = vec![
        Sample::positive(Triple::new(0, 0, 1)),
        Sample::negative(Triple::new(2, n_relations - 1, 0)),
        Sample::positive(Triple::new(1, n_relations - 1, 1)),
        Sample::negative(Triple::new(1, 0, 2)),
    ];
    let g = gradients(&model, &batch, lambda).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for class in 0..4 {
        let rows = table_mut(&mut model.clone(), class).nrows();
        for row in 0..rows {
            for k in 0..4 {
                let mut plus = model.clone();
                table_mut(&mut plus, class)[[row, k]] += h;
                let mut minus = model.clone();
                table_mut(&mut minus, class)[[row, k]] -= h;
                let numeric = (logistic_loss(&plus, &batch, lambda).unwrap()
                    - logistic_loss(&minus, &batch, lambda).unwrap())
                    / (2.0 * h);
                let rowgrad = if class < 2 { g.entity(row) } else { g.relation(row) };
                let analytic = rowgrad.map_or(0.0, |r| if class % 2 == 0 { r.re[k] } else { r.im[k] });
                worst = worst.max(rel_err(analytic, numeric));
            }
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    assert!(max_gradient_error(1) < 1e-4);
    assert!(max_gradient_error(2) < 1e-4);
}

/// Filtered rank by sorting every candidate, ties placed before the target.
fn sorted_rank(scores: &[(usize, f64)], target: usize, known: &dyn Fn(usize) -> bool) -> usize {
    let mut kept: Vec<(usize, f64)> = scores
        .iter()
        .copied()
        .filter(|&(e, _)| e == target || !known(e))
        .collect();
    kept.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| (a.0 == target).cmp(&(b.0 == target)))
    });
    1 + kept.iter().position(|&(e, _)| e == target).unwrap()
}

fn brute_force_metrics(m: &ComplExModel<f64>, test: &[Triple], store: &TripleStore) -> (f64, [f64; 3]) {
    let n = m.n_entities();
    let mut ranks = Vec::new();
    for t in test {
        let (h, r, tl) = (t.head.0, t.relation.0, t.tail.0);
        let tails: Vec<(usize, f64)> = (0..n).map(|e| (e, score(m, h, r, e))).collect();
        let known_tail = |e: usize| store.known_triple(&Triple::new(h, r, e)).unwrap();
        ranks.push(sorted_rank(&tails, tl, &known_tail));
        let heads: Vec<(usize, f64)> = (0..n).map(|e| (e, score(m, e, r, tl))).collect();
        let known_head = |e: usize| store.known_triple(&Triple::new(e, r, tl)).unwrap();
        ranks.push(sorted_rank(&heads, h, &known_head));
    }
    let q = ranks.len() as f64;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / q;
    let hits = [1, 3, 10].map(|k| ranks.iter().filter(|&&r| r <= k).count() as f64 / q);
    (mrr, hits)
}

fn random_store(n_e: usize, n_r: usize, n_triples: usize, seed: u64) -> TripleStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys: Vec<(String, String, String)> = (0..n_triples)
        .map(|i| {
            // the first rows pin the interning order to E0..E{n-1}
            let h = if i < n_e { i } else { rng.gen_range(0..n_e) };
            let t = rng.gen_range(0..n_e);
            (format!("E{h}"), format!("R{}", rng.gen_range(0..n_r)), format!("E{t}"))
        })
        .collect();
    TripleStore::from_keys(keys.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str()))).unwrap()
}

#[test]
fn ranking_matches_exhaustive_sort() {
    for seed in 0..5 {
        let store = random_store(7, 2, 20, seed);
        let m = random_model(store.n_entities(), store.n_relations(), 3, seed + 100);
        let test: Vec<Triple> = store.triples().iter().step_by(2).copied().collect();
        let got = evaluate_link_prediction(&m, &test, &store).unwrap();
        let (mrr, hits) = brute_force_metrics(&m, &test, &store);
        assert!((got.mrr - mrr).abs() < 1e-12);
        assert_eq!(got.hits_at[&1], hits[0]);
        assert_eq!(got.hits_at[&3], hits[1]);
        assert_eq!(got.hits_at[&10], hits[2]);
        assert_eq!(got.n_queries, 2 * test.len());
    }
}

#[test]
fn tied_scores_rank_pessimistically() {
    let store = TripleStore::from_keys([("A", "R", "B"), ("B", "R", "C")]).unwrap();
    let m = ComplExModel::<f64>::zeros(3, 1, 2);
    let got = evaluate_link_prediction(&m, &[Triple::new(0, 0, 1)], &store).unwrap();
    // every score is 0: tail B ties with A and C, head A ties with B and C
    assert!((got.mrr - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(got.hits_at[&1], 0.0);
    assert_eq!(got.hits_at[&3], 1.0);
}

#[test]
fn random_model_mrr_band() {
    let store = random_store(100, 3, 400, 9);
    let test: Vec<Triple> = store.triples()[..50].to_vec();
    for seed in 0..10 {
        let m = ComplExModel::<f64>::init(
            store.n_entities(),
            store.n_relations(),
            &TrainConfig {
                dim: 16,
                seed,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let got = evaluate_link_prediction(&m, &test, &store).unwrap();
        assert!((0.01..=0.25).contains(&got.mrr), "seed {seed}: mrr {}", got.mrr);
        assert!(got.hits_at[&1] <= got.hits_at[&3] && got.hits_at[&3] <= got.hits_at[&10]);
    }
}

#[test]
fn init_is_seeded_and_bounded() {
    let cfg = |seed| TrainConfig {
        dim: 4,
        seed,
        ..TrainConfig::default()
    };
    let a = ComplExModel::<f64>::init(10, 2, &cfg(1)).unwrap();
    assert_eq!(a, ComplExModel::<f64>::init(10, 2, &cfg(1)).unwrap());
    assert_ne!(a, ComplExModel::<f64>::init(10, 2, &cfg(2)).unwrap());
    for t in [&a.entity_re, &a.entity_im, &a.relation_re, &a.relation_im] {
        assert!(t.iter().all(|x| x.abs() <= 0.25));
    }
    assert!(ComplExModel::<f64>::init(0, 2, &cfg(1)).is_err());
}

#[test]
fn entity_vector_concatenates_rows() {
    let m = random_model(5, 1, 3, 4);
    for e in 0..5 {
        let v = m.entity_vector(EntityId(e)).unwrap();
        let manual: Vec<f64> = m.entity_re.row(e).iter().chain(m.entity_im.row(e).iter()).copied().collect();
        assert_eq!(v.to_vec(), manual);
    }
    assert!(m.entity_vector(EntityId(5)).is_err());
}

#[test]
fn single_precision_trains_too() {
    let store = TripleStore::from_keys([("A", "R", "B"), ("B", "R", "C"), ("C", "R", "D")]).unwrap();
    let cfg = TrainConfig {
        dim: 4,
        epochs: 50,
        batch_size: 2,
        learning_rate: 0.1,
        ..TrainConfig::default()
    };
    let mut m = ComplExModel::<f32>::init(4, 1, &cfg).unwrap();
    let trace = train(&mut m, &store, &cfg).unwrap();
    assert!(trace.last().unwrap() < &trace[0]);
}
