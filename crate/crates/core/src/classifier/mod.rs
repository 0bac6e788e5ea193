//! Entity aggregation, feature fusion and the fake/true classifier.
//!
//! The title vector and the mean linked-entity vector are concatenated and
//! passed through one tanh hidden layer and a sigmoid output unit.

mod metrics;
mod training;

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::sigmoid;
use crate::{Error, Result, Scalar};

pub use metrics::{stable_mean, EvalReport};
pub use training::{
    evaluate, prepare_examples, run_trials, MeanMetrics, NewsModel, PreparedExample, SeedReport, TrainHistory, TrainProtocol,
    TrialsReport,
};

pub const FUSION_HIDDEN: usize = 256;
/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` inside the loss.
pub const PROB_EPS: f64 = 1e-12;
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub fusion_hidden: usize,
    pub learning_rate: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            fusion_hidden: FUSION_HIDDEN,
            learning_rate: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams<T> {
    /// `hidden x input`
    pub w_hidden: Array2<T>,
    pub b_hidden: Array1<T>,
    pub w_out: Array1<T>,
    pub b_out: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGrads<T> {
    pub w_hidden: Array2<T>,
    pub b_hidden: Array1<T>,
    pub w_out: Array1<T>,
    pub b_out: T,
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct FusionCache<T> {
    pub input: Array1<T>,
    pub hidden: Array1<T>,
    pub probability: T,
}

/// Elementwise mean of equally sized vectors. The result does not depend on
/// the order of `vectors` and is exact when all inputs are identical. An
/// empty list yields zeros only when `allow_empty` is set.
pub fn aggregate_entities<T: Scalar>(vectors: &[Array1<T>], d_out: usize, allow_empty: bool) -> Result<Array1<T>> {
    if let Some(v) = vectors.iter().find(|v| v.len() != d_out) {
        return Err(Error::Shape(format!("entity vector of length {} where {d_out} expected", v.len())));
    }
    if vectors.is_empty() {
        return if allow_empty {
            Ok(Array1::zeros(d_out))
        } else {
            Err(Error::Empty("no entity vectors to aggregate".into()))
        };
    }
    let n = T::of(vectors.len() as f64);
    let mut column = Vec::with_capacity(vectors.len());
    Ok(Array1::from_shape_fn(d_out, |k| {
        column.clear();
        column.extend(vectors.iter().map(|v| v[k]));
        column.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let base = column[0];
        base + column.iter().fold(T::zero(), |acc, &x| acc + (x - base)) / n
    }))
}

/// Binary cross-entropy of a probability against a 0/1 label.
pub fn bce_loss<T: Scalar>(p: T, label: u8) -> T {
    let eps = T::of(PROB_EPS);
    let p = p.max(eps).min(T::one() - eps);
    if label != 0 {
        -p.ln()
    } else {
        -(T::one() - p).ln()
    }
}

/// `d bce / d p` at the clamped probability.
pub fn bce_grad<T: Scalar>(p: T, label: u8) -> T {
    let eps = T::of(PROB_EPS);
    let p = p.max(eps).min(T::one() - eps);
    if label != 0 {
        -T::one() / p
    } else {
        T::one() / (T::one() - p)
    }
}

impl<T: Scalar> ClassifierParams<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("classifier dims must be positive".into()));
        }
        let l1 = (6.0 / (input_dim + hidden) as f64).sqrt();
        let w_hidden = Array2::from_shape_simple_fn((hidden, input_dim), || T::of(rng.gen_range(-l1..=l1)));
        let l2 = (6.0 / (hidden + 1) as f64).sqrt();
        let w_out = Array1::from_shape_simple_fn(hidden, || T::of(rng.gen_range(-l2..=l2)));
        Ok(Self {
            w_hidden,
            b_hidden: Array1::zeros(hidden),
            w_out,
            b_out: T::zero(),
        })
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w_hidden: Array2::zeros((hidden, input_dim)),
            b_hidden: Array1::zeros(hidden),
            w_out: Array1::zeros(hidden),
            b_out: T::zero(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_hidden.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.nrows()
    }

    fn concat(&self, title: ArrayView1<'_, T>, entity: Option<ArrayView1<'_, T>>) -> Result<Array1<T>> {
        let width = title.len() + entity.map_or(0, |e| e.len());
        if width != self.input_dim() {
            return Err(Error::Shape(format!(
                "fusion input has width {width}, classifier expects {}",
                self.input_dim()
            )));
        }
        let mut input = Array1::zeros(width);
        input.slice_mut(s![..title.len()]).assign(&title);
        if let Some(e) = entity {
            input.slice_mut(s![title.len()..]).assign(&e);
        }
        Ok(input)
    }

    /// Probability of the fake class. `entity` is `None` when the entity
    /// encoder is disabled.
    pub fn forward(&self, title: ArrayView1<'_, T>, entity: Option<ArrayView1<'_, T>>) -> Result<T> {
        Ok(self.forward_cached(title, entity)?.probability)
    }

    pub fn forward_cached(&self, title: ArrayView1<'_, T>, entity: Option<ArrayView1<'_, T>>) -> Result<FusionCache<T>> {
        let input = self.concat(title, entity)?;
        let hidden = (self.w_hidden.dot(&input) + &self.b_hidden).mapv(T::tanh);
        let probability = sigmoid(self.w_out.dot(&hidden) + self.b_out);
        Ok(FusionCache {
            input,
            hidden,
            probability,
        })
    }

    /// Gradients given `d loss / d logit`; also returns the gradient on the
    /// fusion input.
    pub fn backward(&self, cache: &FusionCache<T>, d_logit: T) -> (ClassifierGrads<T>, Array1<T>) {
        let d_hidden = &self.w_out * d_logit;
        let d_pre = &d_hidden * &cache.hidden.mapv(|h| T::one() - h * h);
        let d_input = self.w_hidden.t().dot(&d_pre);
        let w_hidden = d_pre
            .view()
            .insert_axis(ndarray::Axis(1))
            .dot(&cache.input.view().insert_axis(ndarray::Axis(0)));
        let grads = ClassifierGrads {
            w_hidden,
            b_hidden: d_pre,
            w_out: &cache.hidden * d_logit,
            b_out: d_logit,
        };
        (grads, d_input)
    }

    pub fn sgd_step(&mut self, g: &ClassifierGrads<T>, lr: T) {
        self.w_hidden.scaled_add(-lr, &g.w_hidden);
        self.b_hidden.scaled_add(-lr, &g.b_hidden);
        self.w_out.scaled_add(-lr, &g.w_out);
        self.b_out -= lr * g.b_out;
    }

    pub fn is_finite(&self) -> bool {
        self.w_hidden.iter().chain(&self.b_hidden).chain(&self.w_out).all(|x| x.is_finite()) && self.b_out.is_finite()
    }
}

impl<T: Scalar> ClassifierGrads<T> {
    pub fn zeros_like(p: &ClassifierParams<T>) -> Self {
        Self {
            w_hidden: Array2::zeros(p.w_hidden.raw_dim()),
            b_hidden: Array1::zeros(p.hidden()),
            w_out: Array1::zeros(p.hidden()),
            b_out: T::zero(),
        }
    }

    pub fn add_assign(&mut self, o: &Self) {
        self.w_hidden += &o.w_hidden;
        self.b_hidden += &o.b_hidden;
        self.w_out += &o.w_out;
        self.b_out += o.b_out;
    }

    pub fn scale(&mut self, k: T) {
        self.w_hidden *= k;
        self.b_hidden *= k;
        self.w_out *= k;
        self.b_out *= k;
    }
}
