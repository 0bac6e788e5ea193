use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::loss::{gradients_unchecked, loss_unchecked, Sample, SparseGrads};
use super::{negative_sample, ComplExModel, TrainConfig};
use crate::kg_store::TripleStore;
use crate::{Error, Result, Scalar};

/// Samples per parallel gradient job. Fixed so that the reduction order does
/// not depend on the thread count.
const GRAD_CHUNK: usize = 64;

/// Minibatch SGD over shuffled positives, each with
/// `config.negatives_per_positive` corruptions. Returns the mean per-sample
/// loss of every epoch.
pub fn train<T: Scalar>(model: &mut ComplExModel<T>, store: &TripleStore, config: &TrainConfig) -> Result<Vec<f64>> {
    config.validate()?;
    if store.is_empty() {
        return Err(Error::Empty("cannot train on an empty triple store".into()));
    }
    if model.n_entities() != store.n_entities() || model.n_relations() != store.n_relations() {
        return Err(Error::Shape(format!(
            "model has {}x{} rows, store has {} entities and {} relations",
            model.n_entities(),
            model.n_relations(),
            store.n_entities(),
            store.n_relations()
        )));
    }

    let lr = T::of(config.learning_rate);
    let lambda = T::of(config.l2_lambda);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..store.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len() * (1 + config.negatives_per_positive));
            for &i in chunk {
                let pos = store.triples()[i];
                batch.push(Sample::positive(pos));
                batch.extend(
                    negative_sample(store, &pos, config.negatives_per_positive, &mut rng)
                        .into_iter()
                        .map(Sample::negative),
                );
            }
            let parts: Vec<(T, SparseGrads<T>)> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|part| {
                    (
                        loss_unchecked(model, part, lambda),
                        gradients_unchecked(model, part, lambda),
                    )
                })
                .collect();
            let mut grads = SparseGrads::new(model.dim());
            for (loss, g) in parts {
                total += loss.as_f64();
                grads.merge(g);
            }
            count += batch.len();
            grads.apply(model, lr);
        }
        let mean = total / count as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("mean loss {mean}; lower learning_rate (currently {})", config.learning_rate),
            });
        }
        trace.push(mean);
    }
    Ok(trace)
}
