use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ComplExModel;
use crate::kg_store::{EntityId, Triple, TripleStore};
use crate::{Error, Result, Scalar};

pub const HITS_AT: [usize; 3] = [1, 3, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkPredMetrics {
    pub mrr: f64,
    pub hits_at: BTreeMap<usize, f64>,
    pub n_queries: usize,
}

/// Scores of `(head, relation, e)` for every entity `e`.
fn tail_scores<T: Scalar>(model: &ComplExModel<T>, t: &Triple) -> Vec<T> {
    let (rh, ih) = model.entity_rows(t.head.0);
    let (rr, ir) = model.relation_rows(t.relation.0);
    // a = e_h * w_r; score(e) = Re(a * conj(e))
    let a_re = &rh * &rr - &ih * &ir;
    let a_im = &rh * &ir + &ih * &rr;
    (model.entity_re.dot(&a_re) + model.entity_im.dot(&a_im)).to_vec()
}

/// Scores of `(e, relation, tail)` for every entity `e`.
fn head_scores<T: Scalar>(model: &ComplExModel<T>, t: &Triple) -> Vec<T> {
    let (rt, it) = model.entity_rows(t.tail.0);
    let (rr, ir) = model.relation_rows(t.relation.0);
    // b = w_r * conj(e_t); score(e) = Re(e * b)
    let b_re = &rr * &rt + &ir * &it;
    let b_im = &ir * &rt - &rr * &it;
    (model.entity_re.dot(&b_re) - model.entity_im.dot(&b_im)).to_vec()
}

/// 1-based filtered rank of `target`; ties rank the target last.
pub(crate) fn filtered_rank<T: Scalar>(
    scores: &[T],
    target: EntityId,
    is_other_true: impl Fn(EntityId) -> bool,
) -> usize {
    let s = scores[target.0];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(e, &v)| e != target.0 && v >= s && !is_other_true(EntityId(e)))
        .count()
}

/// Filtered head and tail ranking of every test triple against all entities.
pub fn evaluate_link_prediction<T: Scalar>(
    model: &ComplExModel<T>,
    test: &[Triple],
    store: &TripleStore,
) -> Result<LinkPredMetrics> {
    if test.is_empty() {
        return Err(Error::Empty("no test triples".into()));
    }
    for t in test {
        model.check_triple(t)?;
        store.check_triple(t)?;
    }
    let ranks: Vec<(usize, usize)> = test
        .par_iter()
        .map(|t| {
            let tails = store.tails(t.head, t.relation);
            let tail_rank = filtered_rank(&tail_scores(model, t), t.tail, |e| {
                tails.is_some_and(|s| s.contains(&e))
            });
            let heads = store.heads(t.tail, t.relation);
            let head_rank = filtered_rank(&head_scores(model, t), t.head, |e| {
                heads.is_some_and(|s| s.contains(&e))
            });
            (tail_rank, head_rank)
        })
        .collect();

    let n_queries = 2 * ranks.len();
    let mut rr = 0.0;
    let mut hits = [0usize; HITS_AT.len()];
    for &(a, b) in &ranks {
        for rank in [a, b] {
            rr += 1.0 / rank as f64;
            for (slot, &k) in HITS_AT.iter().enumerate() {
                hits[slot] += usize::from(rank <= k);
            }
        }
    }
    Ok(LinkPredMetrics {
        mrr: rr / n_queries as f64,
        hits_at: HITS_AT
            .iter()
            .zip(hits)
            .map(|(&k, h)| (k, h as f64 / n_queries as f64))
            .collect(),
        n_queries,
    })
}
