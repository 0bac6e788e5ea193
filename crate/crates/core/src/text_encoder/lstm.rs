//! Two-layer stacked bidirectional LSTM with exact reverse-mode gradients.
//!
//! Gate layout inside every `4H` block is `[input; forget; cell; output]`.
//! Padded positions are skipped: the recurrence runs over the real positions
//! only, so trailing padding never changes the output.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::TokenSequence;
use crate::scalar::sigmoid;
use crate::{Error, Result, Scalar};

pub const N_LAYERS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub vocab_cap: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            hidden: 256,
            vocab_cap: super::DEFAULT_VOCAB_CAP,
        }
    }
}

/// Input weights `W` (4H x in), recurrent weights `U` (4H x H), bias `b` (4H).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights<T> {
    pub w: Array2<T>,
    pub u: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Scalar> LstmWeights<T> {
    pub fn zeros(in_dim: usize, hidden: usize) -> Self {
        Self {
            w: Array2::zeros((4 * hidden, in_dim)),
            u: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.ncols()
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    fn init<R: Rng + ?Sized>(in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut draw = || T::of(rng.gen_range(-bound..=bound));
        let w = Array2::from_shape_simple_fn((4 * hidden, in_dim), &mut draw);
        let u = Array2::from_shape_simple_fn((4 * hidden, hidden), &mut draw);
        let mut b = Array1::from_shape_simple_fn(4 * hidden, &mut draw);
        b.slice_mut(s![hidden..2 * hidden]).fill(T::one());
        Self { w, u, b }
    }

    fn check(&self) -> Result<()> {
        let h4 = self.w.nrows();
        if h4 % 4 != 0 || self.u.nrows() != h4 || self.u.ncols() * 4 != h4 || self.b.len() != h4 {
            return Err(Error::Shape(format!(
                "LSTM weights W {:?}, U {:?}, b {}",
                self.w.dim(),
                self.u.dim(),
                self.b.len()
            )));
        }
        Ok(())
    }

    fn add_assign(&mut self, other: &Self) {
        self.w += &other.w;
        self.u += &other.u;
        self.b += &other.b;
    }

    fn scale(&mut self, k: T) {
        self.w *= k;
        self.u *= k;
        self.b *= k;
    }

    fn descend(&mut self, g: &Self, lr: T) {
        self.w.scaled_add(-lr, &g.w);
        self.u.scaled_add(-lr, &g.u);
        self.b.scaled_add(-lr, &g.b);
    }

    fn all_finite(&self) -> bool {
        self.w.iter().chain(self.u.iter()).chain(self.b.iter()).all(|x| x.is_finite())
    }
}

/// One value per recurrence direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Bidirectional<W> {
    pub fwd: W,
    pub bwd: W,
}

#[derive(Debug, Clone)]
pub struct BiLstmParams<T> {
    /// Token embeddings, one row per vocabulary id.
    pub embedding: Array2<T>,
    pub layers: [Bidirectional<LstmWeights<T>>; N_LAYERS],
    revision: u64,
}

impl<T: Scalar> PartialEq for BiLstmParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.embedding == other.embedding && self.layers == other.layers
    }
}

/// Cached intermediates of one direction of one layer, rows in processing
/// order.
#[derive(Debug, Clone)]
struct DirectionCache<T> {
    x: Array2<T>,
    h_prev: Array2<T>,
    c_prev: Array2<T>,
    /// post-activation `[i; f; g; o]`
    gates: Array2<T>,
    tanh_c: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    revision: u64,
    vocab_size: usize,
    hidden: usize,
    token_ids: Vec<usize>,
    layers: Vec<Bidirectional<DirectionCache<T>>>,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput<T> {
    /// `[last forward hidden || last backward hidden]` of the top layer.
    pub title_vector: Array1<T>,
    pub cache: Option<EncoderCache<T>>,
}

/// Gradients with the shape of [`BiLstmParams`]; embedding rows are sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmGrads<T> {
    pub embedding: BTreeMap<usize, Array1<T>>,
    pub layers: [Bidirectional<LstmWeights<T>>; N_LAYERS],
}

/// Output of a single cell step.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStep<T> {
    pub h: Array1<T>,
    pub c: Array1<T>,
    pub cache: CellCache<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellCache<T> {
    /// Pre-activations `W x + U h_prev + b`.
    pub preact: Array1<T>,
    /// Post-activation `[i; f; g; o]`.
    pub gates: Array1<T>,
    pub tanh_c: Array1<T>,
}

fn activate_in_place<T: Scalar>(z: &mut Array1<T>, hidden: usize) {
    for (k, v) in z.iter_mut().enumerate() {
        *v = if (2 * hidden..3 * hidden).contains(&k) {
            v.tanh()
        } else {
            sigmoid(*v)
        };
    }
}

/// One LSTM step: `[i;f;g;o] = W x + U h_prev + b`, `c = f*c_prev + i*g`,
/// `h = o*tanh(c)`.
pub fn lstm_cell<T: Scalar>(
    x: ArrayView1<'_, T>,
    h_prev: ArrayView1<'_, T>,
    c_prev: ArrayView1<'_, T>,
    weights: &LstmWeights<T>,
) -> Result<CellStep<T>> {
    weights.check()?;
    let hd = weights.hidden();
    if x.len() != weights.in_dim() || h_prev.len() != hd || c_prev.len() != hd {
        return Err(Error::Shape(format!(
            "cell expects x:{} h:{hd} c:{hd}, got x:{} h:{} c:{}",
            weights.in_dim(),
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let preact = weights.w.dot(&x) + weights.u.dot(&h_prev) + &weights.b;
    let mut gates = preact.clone();
    activate_in_place(&mut gates, hd);
    let (i, f, g, o) = split_gates(gates.view(), hd);
    let c = &f * &c_prev + &i * &g;
    let tanh_c = c.mapv(T::tanh);
    let h = &o * &tanh_c;
    Ok(CellStep {
        h,
        c,
        cache: CellCache { preact, gates, tanh_c },
    })
}

fn split_gates<T: Scalar>(
    gates: ArrayView1<'_, T>,
    hd: usize,
) -> (ArrayView1<'_, T>, ArrayView1<'_, T>, ArrayView1<'_, T>, ArrayView1<'_, T>) {
    (
        gates.slice_move(s![..hd]),
        gates.slice_move(s![hd..2 * hd]),
        gates.slice_move(s![2 * hd..3 * hd]),
        gates.slice_move(s![3 * hd..]),
    )
}

/// Runs one direction over `x` (rows in processing order); returns the hidden
/// state after every step.
fn run_direction<T: Scalar>(w: &LstmWeights<T>, x: Array2<T>) -> (Array2<T>, DirectionCache<T>) {
    let n = x.nrows();
    let hd = w.hidden();
    let projected = x.dot(&w.w.t()) + &w.b;
    let mut hs = Array2::zeros((n, hd));
    let mut h_prev = Array2::zeros((n, hd));
    let mut c_prev = Array2::zeros((n, hd));
    let mut gates = Array2::zeros((n, 4 * hd));
    let mut tanh_c = Array2::zeros((n, hd));
    let mut h = Array1::<T>::zeros(hd);
    let mut c = Array1::<T>::zeros(hd);
    for j in 0..n {
        h_prev.row_mut(j).assign(&h);
        c_prev.row_mut(j).assign(&c);
        let mut z = &projected.row(j) + &w.u.dot(&h);
        activate_in_place(&mut z, hd);
        let (i, f, g, o) = split_gates(z.view(), hd);
        c = &f * &c + &i * &g;
        let tc = c.mapv(T::tanh);
        h = &o * &tc;
        hs.row_mut(j).assign(&h);
        tanh_c.row_mut(j).assign(&tc);
        gates.row_mut(j).assign(&z);
    }
    let cache = DirectionCache {
        x,
        h_prev,
        c_prev,
        gates,
        tanh_c,
    };
    (hs, cache)
}

/// Backpropagation through time for one direction. `dh_out` holds the
/// external gradient on every step's hidden output. Accumulates weight
/// gradients into `grads` and returns the gradient on every input row.
fn backprop_direction<T: Scalar>(
    w: &LstmWeights<T>,
    cache: &DirectionCache<T>,
    dh_out: &Array2<T>,
    grads: &mut LstmWeights<T>,
) -> Array2<T> {
    let n = cache.x.nrows();
    let hd = w.hidden();
    let one = T::one();
    let mut dz_all = Array2::<T>::zeros((n, 4 * hd));
    let mut dh_next = Array1::<T>::zeros(hd);
    let mut dc_next = Array1::<T>::zeros(hd);
    for j in (0..n).rev() {
        let gates = cache.gates.row(j);
        let (i, f, g, o) = split_gates(gates, hd);
        let tc = cache.tanh_c.row(j);
        let c_prev = cache.c_prev.row(j);
        let dh = &dh_out.row(j) + &dh_next;
        let mut dz = dz_all.row_mut(j);
        for k in 0..hd {
            let dc = dc_next[k] + dh[k] * o[k] * (one - tc[k] * tc[k]);
            let d_o = dh[k] * tc[k];
            let di = dc * g[k];
            let dg = dc * i[k];
            let df = dc * c_prev[k];
            dz[k] = di * i[k] * (one - i[k]);
            dz[hd + k] = df * f[k] * (one - f[k]);
            dz[2 * hd + k] = dg * (one - g[k] * g[k]);
            dz[3 * hd + k] = d_o * o[k] * (one - o[k]);
            dc_next[k] = dc * f[k];
        }
        dh_next = w.u.t().dot(&dz_all.row(j));
    }
    grads.w += &dz_all.t().dot(&cache.x);
    grads.u += &dz_all.t().dot(&cache.h_prev);
    grads.b += &dz_all.sum_axis(Axis(0));
    dz_all.dot(&w.w)
}

fn reversed_rows<T: Scalar>(m: &Array2<T>) -> Array2<T> {
    m.slice(s![..;-1, ..]).to_owned()
}

impl<T: Scalar> BiLstmParams<T> {
    /// Embeddings uniform in `[-0.05, 0.05]`, LSTM weights uniform in
    /// `[-1/sqrt(H), 1/sqrt(H)]`, forget-gate bias 1.
    pub fn init<R: Rng + ?Sized>(vocab_size: usize, embed_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if vocab_size == 0 || embed_dim == 0 || hidden == 0 {
            return Err(Error::InvalidArgument(format!(
                "encoder dims must be positive (vocab {vocab_size}, embed {embed_dim}, hidden {hidden})"
            )));
        }
        let embedding = Array2::from_shape_simple_fn((vocab_size, embed_dim), || T::of(rng.gen_range(-0.05..=0.05)));
        let mut layer = |in_dim| Bidirectional {
            fwd: LstmWeights::init(in_dim, hidden, rng),
            bwd: LstmWeights::init(in_dim, hidden, rng),
        };
        let l1 = layer(embed_dim);
        let l2 = layer(2 * hidden);
        Ok(Self {
            embedding,
            layers: [l1, l2],
            revision: 0,
        })
    }

    pub fn zeros(vocab_size: usize, embed_dim: usize, hidden: usize) -> Self {
        let layer = |in_dim| Bidirectional {
            fwd: LstmWeights::zeros(in_dim, hidden),
            bwd: LstmWeights::zeros(in_dim, hidden),
        };
        Self {
            embedding: Array2::zeros((vocab_size, embed_dim)),
            layers: [layer(embed_dim), layer(2 * hidden)],
            revision: 0,
        }
    }

    pub(crate) fn from_parts(embedding: Array2<T>, layers: [Bidirectional<LstmWeights<T>>; N_LAYERS]) -> Result<Self> {
        let p = Self {
            embedding,
            layers,
            revision: 0,
        };
        p.check()?;
        Ok(p)
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].fwd.hidden()
    }

    /// Length of the title vector, `2H`.
    pub fn output_dim(&self) -> usize {
        2 * self.hidden()
    }

    pub fn check(&self) -> Result<()> {
        let hd = self.hidden();
        for (l, layer) in self.layers.iter().enumerate() {
            let in_dim = if l == 0 { self.embed_dim() } else { 2 * hd };
            for w in [&layer.fwd, &layer.bwd] {
                w.check()?;
                if w.hidden() != hd || w.in_dim() != in_dim {
                    return Err(Error::Shape(format!(
                        "layer {} expects in_dim {in_dim} hidden {hd}, found {} / {}",
                        l + 1,
                        w.in_dim(),
                        w.hidden()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.embedding.iter().all(|x| x.is_finite())
            && self.layers.iter().all(|l| l.fwd.all_finite() && l.bwd.all_finite())
    }

    /// Encodes one sequence, keeping the intermediates needed by
    /// [`BiLstmParams::encode_backward`].
    pub fn encode(&self, seq: &TokenSequence) -> Result<EncoderOutput<T>> {
        self.check()?;
        let hd = self.hidden();
        let token_ids: Vec<usize> = seq.real_ids().collect();
        if let Some(&bad) = token_ids.iter().find(|&&id| id >= self.vocab_size()) {
            return Err(Error::InvalidId {
                kind: "token",
                id: bad,
                size: self.vocab_size(),
            });
        }
        let n = token_ids.len();
        if n == 0 {
            return Ok(EncoderOutput {
                title_vector: Array1::zeros(2 * hd),
                cache: Some(EncoderCache {
                    revision: self.revision,
                    vocab_size: self.vocab_size(),
                    hidden: hd,
                    token_ids,
                    layers: Vec::new(),
                }),
            });
        }

        let mut input = self.embedding.select(Axis(0), &token_ids);
        let mut caches = Vec::with_capacity(N_LAYERS);
        let mut last = (Array1::zeros(hd), Array1::zeros(hd));
        for layer in &self.layers {
            let (hf, cf) = run_direction(&layer.fwd, input.clone());
            let (hb_rev, cb) = run_direction(&layer.bwd, reversed_rows(&input));
            last = (hf.row(n - 1).to_owned(), hb_rev.row(n - 1).to_owned());
            let mut next = Array2::zeros((n, 2 * hd));
            next.slice_mut(s![.., ..hd]).assign(&hf);
            next.slice_mut(s![.., hd..]).assign(&hb_rev.slice(s![..;-1, ..]));
            caches.push(Bidirectional { fwd: cf, bwd: cb });
            input = next;
        }
        let mut title_vector = Array1::zeros(2 * hd);
        title_vector.slice_mut(s![..hd]).assign(&last.0);
        title_vector.slice_mut(s![hd..]).assign(&last.1);
        Ok(EncoderOutput {
            title_vector,
            cache: Some(EncoderCache {
                revision: self.revision,
                vocab_size: self.vocab_size(),
                hidden: hd,
                token_ids,
                layers: caches,
            }),
        })
    }

    /// Exact gradients of `upstream . title_vector` with respect to every
    /// parameter, given the cache of a matching [`BiLstmParams::encode`].
    pub fn encode_backward(&self, output: &EncoderOutput<T>, upstream: ArrayView1<'_, T>) -> Result<BiLstmGrads<T>> {
        let cache = output
            .cache
            .as_ref()
            .ok_or_else(|| Error::Cache("encoder output carries no cache".into()))?;
        if cache.revision != self.revision || cache.vocab_size != self.vocab_size() || cache.hidden != self.hidden() {
            return Err(Error::Cache("cache was produced by different parameters".into()));
        }
        let hd = self.hidden();
        if upstream.len() != 2 * hd {
            return Err(Error::Shape(format!("upstream gradient has {} entries, expected {}", upstream.len(), 2 * hd)));
        }
        let mut grads = BiLstmGrads::zeros_like(self);
        let n = cache.token_ids.len();
        if n == 0 {
            return Ok(grads);
        }

        // gradient on every position's output of the current layer, natural order
        let mut d_out_f = Array2::<T>::zeros((n, hd));
        let mut d_out_b = Array2::<T>::zeros((n, hd));
        d_out_f.row_mut(n - 1).assign(&upstream.slice(s![..hd]));
        // the backward direction's final step sits at natural position 0
        d_out_b.row_mut(0).assign(&upstream.slice(s![hd..]));

        let mut d_input = Array2::zeros((0, 0));
        for l in (0..N_LAYERS).rev() {
            let weights = &self.layers[l];
            let lc = &cache.layers[l];
            let dx_f = backprop_direction(&weights.fwd, &lc.fwd, &d_out_f, &mut grads.layers[l].fwd);
            let dx_b_rev = backprop_direction(&weights.bwd, &lc.bwd, &reversed_rows(&d_out_b), &mut grads.layers[l].bwd);
            d_input = dx_f + dx_b_rev.slice(s![..;-1, ..]);
            if l > 0 {
                d_out_f = d_input.slice(s![.., ..hd]).to_owned();
                d_out_b = d_input.slice(s![.., hd..]).to_owned();
            }
        }
        for (j, &id) in cache.token_ids.iter().enumerate() {
            let row = grads
                .embedding
                .entry(id)
                .or_insert_with(|| Array1::zeros(self.embed_dim()));
            *row += &d_input.row(j);
        }
        Ok(grads)
    }

    /// `param -= lr * grad`.
    pub fn sgd_step(&mut self, grads: &BiLstmGrads<T>, lr: T) {
        for (&id, g) in &grads.embedding {
            self.embedding.row_mut(id).scaled_add(-lr, g);
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.fwd.descend(&g.fwd, lr);
            layer.bwd.descend(&g.bwd, lr);
        }
        self.revision += 1;
    }
}

impl<T: Scalar> BiLstmGrads<T> {
    pub fn zeros_like(params: &BiLstmParams<T>) -> Self {
        let (e, hd) = (params.embed_dim(), params.hidden());
        let layer = |in_dim| Bidirectional {
            fwd: LstmWeights::zeros(in_dim, hd),
            bwd: LstmWeights::zeros(in_dim, hd),
        };
        Self {
            embedding: BTreeMap::new(),
            layers: [layer(e), layer(2 * hd)],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (&id, g) in &other.embedding {
            match self.embedding.get_mut(&id) {
                Some(row) => *row += g,
                None => {
                    self.embedding.insert(id, g.clone());
                }
            }
        }
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            mine.fwd.add_assign(&theirs.fwd);
            mine.bwd.add_assign(&theirs.bwd);
        }
    }

    pub fn scale(&mut self, k: T) {
        for g in self.embedding.values_mut() {
            *g *= k;
        }
        for layer in &mut self.layers {
            layer.fwd.scale(k);
            layer.bwd.scale(k);
        }
    }

    pub fn is_zero(&self) -> bool {
        let zero = |a: &LstmWeights<T>| a.w.iter().chain(a.u.iter()).chain(a.b.iter()).all(|x| *x == T::zero());
        self.embedding.values().all(|g| g.iter().all(|x| *x == T::zero()))
            && self.layers.iter().all(|l| zero(&l.fwd) && zero(&l.bwd))
    }
}

impl<T: Scalar> EncoderOutput<T> {
    pub fn without_cache(mut self) -> Self {
        self.cache = None;
        self
    }
}

/// `upstream . title_vector`
#[cfg(test)]
fn objective<T: Scalar>(p: &BiLstmParams<T>, seq: &TokenSequence, up: &Array1<T>) -> T {
    let out = p.encode(seq).unwrap();
    out.title_vector.dot(up)
}
