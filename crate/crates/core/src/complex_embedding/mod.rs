//! ComplEx knowledge-graph embeddings.
//!
//! Entities and relations are complex vectors stored as separate real and
//! imaginary tables. A triple `(h, r, t)` scores
//! `Re(sum_k e_h[k] * w_r[k] * conj(e_t[k]))`, which is symmetric in `h, t`
//! for purely real relations and antisymmetric for purely imaginary ones.

mod io;
mod loss;
mod ranking;
mod sampling;
mod train;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kg_store::{EntityId, RelationId, Triple};
use crate::{Error, Result, Scalar};

pub use loss::{gradients, logistic_loss, RowGrad, Sample, SparseGrads};
pub use ranking::{evaluate_link_prediction, LinkPredMetrics};
pub use sampling::{negative_sample, MAX_RESAMPLE_ATTEMPTS};
pub use train::train;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub negatives_per_positive: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            learning_rate: 0.05,
            l2_lambda: 1e-4,
            negatives_per_positive: 5,
            epochs: 100,
            batch_size: 512,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("kg train config: {m}")));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad("l2_lambda must be finite and non-negative");
        }
        if self.negatives_per_positive == 0 {
            return bad("negatives_per_positive must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplExModel<T> {
    pub entity_re: Array2<T>,
    pub entity_im: Array2<T>,
    pub relation_re: Array2<T>,
    pub relation_im: Array2<T>,
}

impl<T: Scalar> ComplExModel<T> {
    /// Uniform `[-0.5/sqrt(d), 0.5/sqrt(d)]` entries from a generator seeded
    /// by `config.seed`. Tables are filled in the order entity_re, entity_im,
    /// relation_re, relation_im.
    pub fn init(n_entities: usize, n_relations: usize, config: &TrainConfig) -> Result<Self> {
        if n_entities == 0 || n_relations == 0 {
            return Err(Error::InvalidArgument(
                "ComplEx needs at least one entity and one relation".into(),
            ));
        }
        if config.dim == 0 {
            return Err(Error::InvalidArgument("embedding dim must be positive".into()));
        }
        let d = config.dim;
        let bound = 0.5 / (d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut table = |rows: usize| {
            Array2::from_shape_simple_fn((rows, d), || T::of(rng.gen_range(-bound..=bound)))
        };
        let entity_re = table(n_entities);
        let entity_im = table(n_entities);
        let relation_re = table(n_relations);
        let relation_im = table(n_relations);
        Ok(Self {
            entity_re,
            entity_im,
            relation_re,
            relation_im,
        })
    }

    pub fn zeros(n_entities: usize, n_relations: usize, dim: usize) -> Self {
        Self {
            entity_re: Array2::zeros((n_entities, dim)),
            entity_im: Array2::zeros((n_entities, dim)),
            relation_re: Array2::zeros((n_relations, dim)),
            relation_im: Array2::zeros((n_relations, dim)),
        }
    }

    pub fn dim(&self) -> usize {
        self.entity_re.ncols()
    }

    pub fn n_entities(&self) -> usize {
        self.entity_re.nrows()
    }

    pub fn n_relations(&self) -> usize {
        self.relation_re.nrows()
    }

    pub fn check_entity(&self, e: EntityId) -> Result<()> {
        if e.0 < self.n_entities() {
            Ok(())
        } else {
            Err(Error::InvalidId {
                kind: "entity",
                id: e.0,
                size: self.n_entities(),
            })
        }
    }

    pub fn check_relation(&self, r: RelationId) -> Result<()> {
        if r.0 < self.n_relations() {
            Ok(())
        } else {
            Err(Error::InvalidId {
                kind: "relation",
                id: r.0,
                size: self.n_relations(),
            })
        }
    }

    pub fn check_triple(&self, t: &Triple) -> Result<()> {
        self.check_entity(t.head)?;
        self.check_relation(t.relation)?;
        self.check_entity(t.tail)
    }

    pub fn score(&self, head: EntityId, relation: RelationId, tail: EntityId) -> Result<T> {
        let t = Triple {
            head,
            relation,
            tail,
        };
        self.check_triple(&t)?;
        Ok(self.score_unchecked(&t))
    }

    pub(crate) fn score_unchecked(&self, t: &Triple) -> T {
        let (rh, ih) = (self.entity_re.row(t.head.0), self.entity_im.row(t.head.0));
        let (rt, it) = (self.entity_re.row(t.tail.0), self.entity_im.row(t.tail.0));
        let (rr, ir) = (self.relation_re.row(t.relation.0), self.relation_im.row(t.relation.0));
        let mut s = T::zero();
        for k in 0..self.dim() {
            s = s + rr[k] * rh[k] * rt[k] + rr[k] * ih[k] * it[k] + ir[k] * rh[k] * it[k]
                - ir[k] * ih[k] * rt[k];
        }
        s
    }

    /// `[re || im]` row for one entity, length `2 * dim`.
    pub fn entity_vector(&self, e: EntityId) -> Result<Array1<T>> {
        self.check_entity(e)?;
        let mut v = Array1::zeros(2 * self.dim());
        v.slice_mut(ndarray::s![..self.dim()])
            .assign(&self.entity_re.row(e.0));
        v.slice_mut(ndarray::s![self.dim()..])
            .assign(&self.entity_im.row(e.0));
        Ok(v)
    }

    pub fn is_finite(&self) -> bool {
        [&self.entity_re, &self.entity_im, &self.relation_re, &self.relation_im]
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub(crate) fn entity_rows(&self, e: usize) -> (ArrayView1<'_, T>, ArrayView1<'_, T>) {
        (self.entity_re.row(e), self.entity_im.row(e))
    }

    pub(crate) fn relation_rows(&self, r: usize) -> (ArrayView1<'_, T>, ArrayView1<'_, T>) {
        (self.relation_re.row(r), self.relation_im.row(r))
    }
}
