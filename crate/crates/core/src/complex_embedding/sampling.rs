use rand::Rng;

use crate::kg_store::{EntityId, Triple, TripleStore};

/// Resampling budget before a corrupted triple is accepted even if known.
pub const MAX_RESAMPLE_ATTEMPTS: usize = 100;

/// `k` corruptions of `positive`: a fair coin picks head or tail, which is
/// replaced by a uniformly random entity. Corruptions that reproduce a known
/// triple are redrawn up to [`MAX_RESAMPLE_ATTEMPTS`] times, then kept.
pub fn negative_sample<R: Rng + ?Sized>(
    store: &TripleStore,
    positive: &Triple,
    k: usize,
    rng: &mut R,
) -> Vec<Triple> {
    let n = store.n_entities();
    (0..k)
        .map(|_| {
            let corrupt_head = rng.gen_bool(0.5);
            let mut candidate = *positive;
            for _ in 0..MAX_RESAMPLE_ATTEMPTS {
                let e = EntityId(rng.gen_range(0..n));
                candidate = if corrupt_head {
                    Triple { head: e, ..*positive }
                } else {
                    Triple { tail: e, ..*positive }
                };
                if !store.contains_unchecked(&candidate) {
                    break;
                }
            }
            candidate
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_entity_store_yields_the_only_corruptions() {
        let store = TripleStore::from_keys([("Q1", "P1", "Q2")]).unwrap();
        let pos = store.triples()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let negs = negative_sample(&store, &pos, 50, &mut rng);
        assert!(negs.contains(&Triple::new(0, 0, 0)));
        assert!(negs.contains(&Triple::new(1, 0, 1)));
        assert!(negs.iter().all(|t| *t != pos));
    }

    #[test]
    fn each_negative_differs_in_exactly_one_slot() {
        let rows: Vec<(String, String, String)> =
            (0..9).map(|i| (format!("Q{i}"), "P1".into(), format!("Q{}", i + 1))).collect();
        let store = TripleStore::from_keys(rows.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str()))).unwrap();
        let pos = store.triples()[3];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let negs = negative_sample(&store, &pos, 5, &mut rng);
        assert_eq!(negs.len(), 5);
        for t in negs {
            assert_eq!(t.relation, pos.relation);
            let changed = usize::from(t.head != pos.head) + usize::from(t.tail != pos.tail);
            assert_eq!(changed, 1);
        }
    }

    #[test]
    fn replacement_entities_are_uniform() {
        // 10 entities; the positive is the only P0 fact, so each side has
        // exactly 9 admissible replacements.
        let mut rows = vec![("Q0".to_string(), "P0".to_string(), "Q1".to_string())];
        rows.extend((0..9).map(|i| (format!("Q{i}"), "P1".into(), format!("Q{}", i + 1))));
        let store = TripleStore::from_keys(rows.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str()))).unwrap();
        assert_eq!(store.n_entities(), 10);
        let pos = store.triples()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let negs = negative_sample(&store, &pos, 100_000, &mut rng);
        let mut head_counts = [0usize; 10];
        let mut tail_counts = [0usize; 10];
        for t in &negs {
            if t.head != pos.head {
                head_counts[t.head.0] += 1;
            } else {
                tail_counts[t.tail.0] += 1;
            }
        }
        for (counts, excluded) in [(head_counts, pos.head.0), (tail_counts, pos.tail.0)] {
            let total: usize = counts.iter().sum();
            let expected = total as f64 / 9.0;
            for (e, &c) in counts.iter().enumerate() {
                if e == excluded {
                    assert_eq!(c, 0);
                } else {
                    assert!(((c as f64 - expected) / expected).abs() < 0.05, "entity {e}: {c} vs {expected}");
                }
            }
        }
        let heads: usize = head_counts.iter().sum();
        assert!((heads as f64 / 100_000.0 - 0.5).abs() < 0.01);
    }
}
