use std::collections::BTreeMap;

use ndarray::Array1;

use super::ComplExModel;
use crate::kg_store::Triple;
use crate::scalar::{sigmoid, softplus};
use crate::{Error, Result, Scalar};

/// A training triple with its label: `positive` maps to y = +1, otherwise -1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub triple: Triple,
    pub positive: bool,
}

impl Sample {
    pub fn positive(triple: Triple) -> Self {
        Self {
            triple,
            positive: true,
        }
    }

    pub fn negative(triple: Triple) -> Self {
        Self {
            triple,
            positive: false,
        }
    }

    fn y<T: Scalar>(&self) -> T {
        if self.positive {
            T::one()
        } else {
            -T::one()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowGrad<T> {
    pub re: Array1<T>,
    pub im: Array1<T>,
}

impl<T: Scalar> RowGrad<T> {
    fn zeros(d: usize) -> Self {
        Self {
            re: Array1::zeros(d),
            im: Array1::zeros(d),
        }
    }
}

/// Gradients for the rows a batch touches; every other row is implicitly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrads<T> {
    pub dim: usize,
    pub entities: BTreeMap<usize, RowGrad<T>>,
    pub relations: BTreeMap<usize, RowGrad<T>>,
}

impl<T: Scalar> SparseGrads<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entities: BTreeMap::new(),
            relations: BTreeMap::new(),
        }
    }

    pub fn entity(&self, e: usize) -> Option<&RowGrad<T>> {
        self.entities.get(&e)
    }

    pub fn relation(&self, r: usize) -> Option<&RowGrad<T>> {
        self.relations.get(&r)
    }

    fn entity_mut(&mut self, e: usize) -> &mut RowGrad<T> {
        let d = self.dim;
        self.entities.entry(e).or_insert_with(|| RowGrad::zeros(d))
    }

    fn relation_mut(&mut self, r: usize) -> &mut RowGrad<T> {
        let d = self.dim;
        self.relations.entry(r).or_insert_with(|| RowGrad::zeros(d))
    }

    /// Adds `other` into `self`, row by row in id order.
    pub fn merge(&mut self, other: SparseGrads<T>) {
        for (e, g) in other.entities {
            let row = self.entity_mut(e);
            row.re += &g.re;
            row.im += &g.im;
        }
        for (r, g) in other.relations {
            let row = self.relation_mut(r);
            row.re += &g.re;
            row.im += &g.im;
        }
    }

    /// `param -= lr * grad` on every touched row.
    pub fn apply(&self, model: &mut ComplExModel<T>, lr: T) {
        for (&e, g) in &self.entities {
            model.entity_re.row_mut(e).scaled_add(-lr, &g.re);
            model.entity_im.row_mut(e).scaled_add(-lr, &g.im);
        }
        for (&r, g) in &self.relations {
            model.relation_re.row_mut(r).scaled_add(-lr, &g.re);
            model.relation_im.row_mut(r).scaled_add(-lr, &g.im);
        }
    }
}

fn check_batch<T: Scalar>(model: &ComplExModel<T>, batch: &[Sample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty("logistic loss needs a nonempty batch".into()));
    }
    batch.iter().try_for_each(|s| model.check_triple(&s.triple))
}

fn sq_norm<T: Scalar>(model: &ComplExModel<T>, t: &Triple) -> T {
    let (rh, ih) = model.entity_rows(t.head.0);
    let (rt, it) = model.entity_rows(t.tail.0);
    let (rr, ir) = model.relation_rows(t.relation.0);
    [rh, ih, rt, it, rr, ir]
        .iter()
        .map(|v| v.dot(v))
        .fold(T::zero(), |a, b| a + b)
}

/// `sum softplus(-y * score) + lambda * sum (|e_h|^2 + |w_r|^2 + |e_t|^2)`,
/// the penalty counted once per example.
pub fn logistic_loss<T: Scalar>(model: &ComplExModel<T>, batch: &[Sample], l2_lambda: T) -> Result<T> {
    check_batch(model, batch)?;
    Ok(loss_unchecked(model, batch, l2_lambda))
}

pub(crate) fn loss_unchecked<T: Scalar>(model: &ComplExModel<T>, batch: &[Sample], l2_lambda: T) -> T {
    batch.iter().fold(T::zero(), |acc, s| {
        let score = model.score_unchecked(&s.triple);
        let mut l = softplus(-s.y::<T>() * score);
        if l2_lambda != T::zero() {
            l = l + l2_lambda * sq_norm(model, &s.triple);
        }
        acc + l
    })
}

/// Analytic gradient of [`logistic_loss`] over the rows the batch touches.
pub fn gradients<T: Scalar>(model: &ComplExModel<T>, batch: &[Sample], l2_lambda: T) -> Result<SparseGrads<T>> {
    check_batch(model, batch)?;
    Ok(gradients_unchecked(model, batch, l2_lambda))
}

pub(crate) fn gradients_unchecked<T: Scalar>(
    model: &ComplExModel<T>,
    batch: &[Sample],
    l2_lambda: T,
) -> SparseGrads<T> {
    let d = model.dim();
    let two_lambda = l2_lambda + l2_lambda;
    let mut grads = SparseGrads::new(d);
    for s in batch {
        let t = &s.triple;
        let y = s.y::<T>();
        let score = model.score_unchecked(t);
        // d softplus(-y s) / ds
        let coef = -y * sigmoid(-y * score);

        let (rh, ih) = model.entity_rows(t.head.0);
        let (rt, it) = model.entity_rows(t.tail.0);
        let (rr, ir) = model.relation_rows(t.relation.0);

        let mut g_rh = Array1::zeros(d);
        let mut g_ih = Array1::zeros(d);
        let mut g_rt = Array1::zeros(d);
        let mut g_it = Array1::zeros(d);
        let mut g_rr = Array1::zeros(d);
        let mut g_ir = Array1::zeros(d);
        for k in 0..d {
            g_rh[k] = coef * (rr[k] * rt[k] + ir[k] * it[k]) + two_lambda * rh[k];
            g_ih[k] = coef * (rr[k] * it[k] - ir[k] * rt[k]) + two_lambda * ih[k];
            g_rt[k] = coef * (rr[k] * rh[k] - ir[k] * ih[k]) + two_lambda * rt[k];
            g_it[k] = coef * (rr[k] * ih[k] + ir[k] * rh[k]) + two_lambda * it[k];
            g_rr[k] = coef * (rh[k] * rt[k] + ih[k] * it[k]) + two_lambda * rr[k];
            g_ir[k] = coef * (rh[k] * it[k] - ih[k] * rt[k]) + two_lambda * ir[k];
        }

        let head = grads.entity_mut(t.head.0);
        head.re += &g_rh;
        head.im += &g_ih;
        let tail = grads.entity_mut(t.tail.0);
        tail.re += &g_rt;
        tail.im += &g_it;
        let rel = grads.relation_mut(t.relation.0);
        rel.re += &g_rr;
        rel.im += &g_ir;
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex_embedding::TrainConfig;

    fn model() -> ComplExModel<f64> {
        let cfg = TrainConfig {
            dim: 4,
            seed: 17,
            ..TrainConfig::default()
        };
        ComplExModel::init(3, 1, &cfg).unwrap()
    }

    #[test]
    fn empty_batch_is_an_error() {
        let m = model();
        assert!(matches!(logistic_loss(&m, &[], 0.0), Err(Error::Empty(_))));
        assert!(gradients(&m, &[], 0.0).is_err());
    }

    #[test]
    fn zero_score_gives_log_two() {
        let m = ComplExModel::<f64>::zeros(2, 1, 3);
        let l = logistic_loss(&m, &[Sample::positive(Triple::new(0, 0, 1))], 0.0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn large_positive_score_gives_tiny_loss() {
        // d=1, e_h = sqrt(10), w_r = 1, e_t = sqrt(10) gives score 10
        let mut m = ComplExModel::<f64>::zeros(2, 1, 1);
        m.entity_re[[0, 0]] = 10f64.sqrt();
        m.entity_re[[1, 0]] = 10f64.sqrt();
        m.relation_re[[0, 0]] = 1.0;
        let l = logistic_loss(&m, &[Sample::positive(Triple::new(0, 0, 1))], 0.0).unwrap();
        let oracle = (1.0 + (-10f64).exp()).ln();
        assert!((l - oracle).abs() < 1e-15);
        assert!((l - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn l2_term_strictly_increases_loss() {
        let m = model();
        let batch = [Sample::positive(Triple::new(0, 0, 1)), Sample::negative(Triple::new(2, 0, 1))];
        let plain = logistic_loss(&m, &batch, 0.0).unwrap();
        let reg = logistic_loss(&m, &batch, 0.1).unwrap();
        assert!(reg > plain);
        assert!(plain > 0.0);
    }

    #[test]
    fn untouched_rows_have_no_gradient() {
        let m = model();
        let g = gradients(&m, &[Sample::positive(Triple::new(0, 0, 1))], 1e-3).unwrap();
        assert!(g.entity(2).is_none());
        assert!(g.entity(0).is_some() && g.entity(1).is_some());
    }

    #[test]
    fn duplicated_batch_doubles_gradients() {
        let m = model();
        let batch = vec![Sample::positive(Triple::new(0, 0, 1)), Sample::negative(Triple::new(0, 0, 2))];
        let once = gradients(&m, &batch, 0.01).unwrap();
        let doubled: Vec<_> = batch.iter().chain(batch.iter()).copied().collect();
        let twice = gradients(&m, &doubled, 0.01).unwrap();
        for (e, g) in &once.entities {
            let g2 = twice.entity(*e).unwrap();
            for k in 0..4 {
                assert!((g2.re[k] - 2.0 * g.re[k]).abs() <= 1e-15 * g.re[k].abs().max(1.0));
                assert!((g2.im[k] - 2.0 * g.im[k]).abs() <= 1e-15 * g.im[k].abs().max(1.0));
            }
        }
    }
}
