use ndarray::{s, Array1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aggregate_entities, bce_loss, ClassifierConfig, ClassifierGrads, ClassifierParams, EvalReport, THRESHOLD};
use crate::complex_embedding::ComplExModel;
use crate::dataset_pipeline::NewsItem;
use crate::text_encoder::{tokenize, BiLstmGrads, BiLstmParams, EncoderConfig, TokenSequence, Vocabulary};
use crate::{Error, Result, Scalar};

/// Examples per parallel gradient job; fixed so results do not depend on the
/// number of worker threads.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainProtocol {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a training-loss improvement before stopping; `None`
    /// disables early stopping (written as `false` in config files).
    #[serde(with = "patience_repr")]
    pub patience: Option<usize>,
    pub seeds: Vec<u64>,
    pub split_ratio: f64,
    pub entity_encoder_enabled: bool,
}

impl Default for TrainProtocol {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 100,
            patience: Some(2),
            seeds: vec![1, 2, 3],
            split_ratio: 0.8,
            entity_encoder_enabled: true,
        }
    }
}

mod patience_repr {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Epochs(usize),
        Flag(bool),
    }

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(n) => Repr::Epochs(*n),
            None => Repr::Flag(false),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Epochs(n) => Ok(Some(n)),
            Repr::Flag(false) => Ok(None),
            Repr::Flag(true) => Err(serde::de::Error::custom("patience must be a number of epochs or false")),
        }
    }
}

impl TrainProtocol {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("train protocol: {m}")));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.patience == Some(0) {
            return bad("patience must be at least 1");
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad("split_ratio must lie in (0, 1)");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        Ok(())
    }
}

/// One item ready for the model: token ids, the mean entity vector (if any
/// entity was linked) and the 0/1 label.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedExample<T> {
    pub tokens: TokenSequence,
    pub entity_vector: Option<Array1<T>>,
    pub label: u8,
}

/// Tokenizes titles against `vocab` and averages the frozen KG vectors of each
/// item's linked entities.
pub fn prepare_examples<T: Scalar>(
    items: &[NewsItem],
    vocab: &Vocabulary,
    kg: &ComplExModel<T>,
) -> Result<Vec<PreparedExample<T>>> {
    let d_out = 2 * kg.dim();
    items
        .iter()
        .map(|item| {
            let vectors = item
                .linked_entities
                .iter()
                .map(|&e| kg.entity_vector(e))
                .collect::<Result<Vec<_>>>()?;
            let entity_vector = if vectors.is_empty() {
                None
            } else {
                Some(aggregate_entities(&vectors, d_out, false)?)
            };
            Ok(PreparedExample {
                tokens: vocab.encode_ids(&tokenize(&item.title)),
                entity_vector,
                label: item.label.as_u8(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct NewsModel<T> {
    pub encoder: BiLstmParams<T>,
    pub classifier: ClassifierParams<T>,
    pub entity_encoder_enabled: bool,
    pub entity_dim: usize,
}

impl<T: Scalar> PartialEq for NewsModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.encoder == other.encoder
            && self.classifier == other.classifier
            && self.entity_encoder_enabled == other.entity_encoder_enabled
            && self.entity_dim == other.entity_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training loss after every epoch.
    pub epoch_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

struct Step<T> {
    loss: T,
    encoder: BiLstmGrads<T>,
    classifier: ClassifierGrads<T>,
}

impl<T: Scalar> NewsModel<T> {
    /// The encoder and classifier draw from separate generator streams of
    /// `seed`, so the title path initializes identically whether or not the
    /// entity encoder is enabled.
    pub fn init(
        vocab_size: usize,
        entity_dim: usize,
        encoder: &EncoderConfig,
        classifier: &ClassifierConfig,
        entity_encoder_enabled: bool,
        seed: u64,
    ) -> Result<Self> {
        let mut enc_rng = ChaCha8Rng::seed_from_u64(seed);
        enc_rng.set_stream(0);
        let encoder = BiLstmParams::init(vocab_size, encoder.embed_dim, encoder.hidden, &mut enc_rng)?;
        let mut clf_rng = ChaCha8Rng::seed_from_u64(seed);
        clf_rng.set_stream(1);
        let input = encoder.output_dim() + if entity_encoder_enabled { entity_dim } else { 0 };
        let classifier = ClassifierParams::init(input, classifier.fusion_hidden, &mut clf_rng)?;
        Ok(Self {
            encoder,
            classifier,
            entity_encoder_enabled,
            entity_dim,
        })
    }

    fn entity_input<'a>(&self, ex: &'a PreparedExample<T>) -> Result<Option<ndarray::ArrayView1<'a, T>>> {
        if !self.entity_encoder_enabled {
            return Ok(None);
        }
        match &ex.entity_vector {
            Some(v) if v.len() == self.entity_dim => Ok(Some(v.view())),
            Some(v) => Err(Error::Shape(format!("entity vector length {} != {}", v.len(), self.entity_dim))),
            None => Err(Error::InvalidArgument(
                "entity encoder enabled but the item has no linked entity".into(),
            )),
        }
    }

    /// Probability that the item is fake.
    pub fn predict(&self, ex: &PreparedExample<T>) -> Result<T> {
        let title = self.encoder.encode(&ex.tokens)?.title_vector;
        self.classifier.forward(title.view(), self.entity_input(ex)?)
    }

    fn step(&self, ex: &PreparedExample<T>) -> Result<Step<T>> {
        let out = self.encoder.encode(&ex.tokens)?;
        let cache = self.classifier.forward_cached(out.title_vector.view(), self.entity_input(ex)?)?;
        let p = cache.probability;
        let y = if ex.label != 0 { T::one() } else { T::zero() };
        let (classifier, d_input) = self.classifier.backward(&cache, p - y);
        let encoder = self
            .encoder
            .encode_backward(&out, d_input.slice(s![..self.encoder.output_dim()]))?;
        Ok(Step {
            loss: bce_loss(p, ex.label),
            encoder,
            classifier,
        })
    }

    /// Mean loss and summed gradients over a batch, reduced in a fixed order.
    fn batch_gradients(&self, batch: &[&PreparedExample<T>]) -> Result<Step<T>> {
        let parts: Vec<Step<T>> = batch
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut acc: Option<Step<T>> = None;
                for ex in chunk {
                    let s = self.step(ex)?;
                    acc = Some(match acc {
                        None => s,
                        Some(mut a) => {
                            a.loss += s.loss;
                            a.encoder.add_assign(&s.encoder);
                            a.classifier.add_assign(&s.classifier);
                            a
                        }
                    });
                }
                acc.ok_or_else(|| Error::Empty("empty gradient chunk".into()))
            })
            .collect::<Result<_>>()?;
        let mut iter = parts.into_iter();
        let mut total = iter.next().ok_or_else(|| Error::Empty("empty batch".into()))?;
        for s in iter {
            total.loss += s.loss;
            total.encoder.add_assign(&s.encoder);
            total.classifier.add_assign(&s.classifier);
        }
        let inv = T::one() / T::of(batch.len() as f64);
        total.loss *= inv;
        total.encoder.scale(inv);
        total.classifier.scale(inv);
        Ok(total)
    }

    /// Mean loss and accuracy over `examples`.
    pub fn loss_and_accuracy(&self, examples: &[PreparedExample<T>]) -> Result<(f64, f64)> {
        let probs: Vec<T> = examples.par_iter().map(|ex| self.predict(ex)).collect::<Result<_>>()?;
        let mut loss = 0.0;
        let mut correct = 0usize;
        for (p, ex) in probs.iter().zip(examples) {
            loss += bce_loss(*p, ex.label).as_f64();
            correct += usize::from(u8::from(p.as_f64() >= THRESHOLD) == ex.label);
        }
        let n = examples.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }

    /// Minibatch SGD over encoder and classifier (the KG vectors inside the
    /// examples stay fixed). Epoch order is shuffled by `seed`. Stops once the
    /// end-of-epoch training loss fails to improve for `protocol.patience`
    /// consecutive epochs and restores the best epoch's parameters.
    pub fn train(
        &mut self,
        examples: &[PreparedExample<T>],
        protocol: &TrainProtocol,
        learning_rate: f64,
        seed: u64,
    ) -> Result<TrainHistory> {
        protocol.validate()?;
        if examples.is_empty() {
            return Err(Error::Empty("training split is empty".into()));
        }
        for ex in examples {
            self.entity_input(ex)?;
        }
        let lr = T::of(learning_rate);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut history = TrainHistory {
            epoch_loss: Vec::new(),
            train_accuracy: Vec::new(),
            best_epoch: 0,
            stopped_early: false,
        };
        let mut best: Option<(f64, Self)> = None;
        let mut stale = 0;

        for epoch in 1..=protocol.max_epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(protocol.batch_size) {
                let batch: Vec<&PreparedExample<T>> = chunk.iter().map(|&i| &examples[i]).collect();
                let g = self.batch_gradients(&batch)?;
                if !g.loss.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        detail: format!("batch loss {}", g.loss),
                    });
                }
                self.encoder.sgd_step(&g.encoder, lr);
                self.classifier.sgd_step(&g.classifier, lr);
            }
            let (loss, acc) = self.loss_and_accuracy(examples)?;
            if !loss.is_finite() || !self.encoder.is_finite() || !self.classifier.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("epoch loss {loss}"),
                });
            }
            history.epoch_loss.push(loss);
            history.train_accuracy.push(acc);
            if best.as_ref().is_none_or(|(b, _)| loss < *b) {
                best = Some((loss, self.clone()));
                history.best_epoch = epoch;
                stale = 0;
            } else {
                stale += 1;
                if protocol.patience.is_some_and(|p| stale >= p) {
                    history.stopped_early = true;
                    break;
                }
            }
        }
        if let Some((_, params)) = best {
            *self = params;
        }
        Ok(history)
    }
}

/// Thresholded predictions scored against the labels.
pub fn evaluate<T: Scalar>(model: &NewsModel<T>, test: &[PreparedExample<T>]) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Empty("test split is empty".into()));
    }
    let probs: Vec<T> = test.par_iter().map(|ex| model.predict(ex)).collect::<Result<_>>()?;
    let predicted: Vec<u8> = probs.iter().map(|p| u8::from(p.as_f64() >= THRESHOLD)).collect();
    let labels: Vec<u8> = test.iter().map(|ex| ex.label).collect();
    Ok(EvalReport::from_predictions(&predicted, &labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub f1_macro: f64,
    pub accuracy: f64,
    /// `[[tn, fp], [fn, tp]]`
    pub confusion: [[u64; 2]; 2],
    pub epochs_run: usize,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub f1_macro: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialsReport {
    pub dataset: String,
    pub entity_encoder: bool,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedReport>,
    pub mean: MeanMetrics,
}

/// Trains and evaluates once per protocol seed and averages the metrics.
#[allow(clippy::too_many_arguments)]
pub fn run_trials<T: Scalar>(
    dataset: &str,
    train: &[PreparedExample<T>],
    test: &[PreparedExample<T>],
    vocab_size: usize,
    entity_dim: usize,
    encoder: &EncoderConfig,
    classifier: &ClassifierConfig,
    protocol: &TrainProtocol,
) -> Result<TrialsReport> {
    protocol.validate()?;
    let per_seed = protocol
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut model = NewsModel::init(
                vocab_size,
                entity_dim,
                encoder,
                classifier,
                protocol.entity_encoder_enabled,
                seed,
            )?;
            let history = model.train(train, protocol, classifier.learning_rate, seed)?;
            let report = evaluate(&model, test)?;
            Ok(SeedReport {
                seed,
                f1_macro: report.f1_macro,
                accuracy: report.accuracy,
                confusion: report.confusion,
                epochs_run: history.epoch_loss.len(),
                best_epoch: history.best_epoch,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let f1: Vec<f64> = per_seed.iter().map(|r| r.f1_macro).collect();
    let acc: Vec<f64> = per_seed.iter().map(|r| r.accuracy).collect();
    Ok(TrialsReport {
        dataset: dataset.to_owned(),
        entity_encoder: protocol.entity_encoder_enabled,
        seeds: protocol.seeds.clone(),
        per_seed,
        mean: MeanMetrics {
            f1_macro: super::stable_mean(&f1),
            accuracy: super::stable_mean(&acc),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> (EncoderConfig, ClassifierConfig) {
        (
            EncoderConfig {
                embed_dim: 4,
                hidden: 3,
                vocab_cap: 100,
            },
            ClassifierConfig {
                fusion_hidden: 5,
                learning_rate: 0.05,
            },
        )
    }

    fn examples(n: usize) -> Vec<PreparedExample<f64>> {
        (0..n)
            .map(|i| PreparedExample {
                tokens: TokenSequence::from_ids(vec![2 + i % 3, 5, 2 + (i * 7) % 6]),
                entity_vector: Some(Array1::from_shape_fn(2, |k| if i % 2 == 0 { 0.5 } else { -0.5 } + k as f64 * 0.1)),
                label: (i % 2) as u8,
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_stops_after_patience_plus_one() {
        let (enc, clf) = tiny_config();
        let data = examples(8);
        let mut model = NewsModel::<f64>::init(10, 2, &enc, &clf, true, 3).unwrap();
        let before = model.clone();
        let protocol = TrainProtocol {
            batch_size: 4,
            ..TrainProtocol::default()
        };
        let h = model.train(&data, &protocol, 0.0, 3).unwrap();
        assert_eq!(h.epoch_loss.len(), 3);
        assert!(h.stopped_early);
        assert_eq!(model, before);
    }

    #[test]
    fn restored_parameters_have_the_best_loss() {
        let (enc, clf) = tiny_config();
        let data = examples(12);
        let mut model = NewsModel::<f64>::init(10, 2, &enc, &clf, true, 5).unwrap();
        let protocol = TrainProtocol {
            batch_size: 4,
            max_epochs: 30,
            ..TrainProtocol::default()
        };
        // a large step makes the loss bounce so early stopping has work to do
        let h = model.train(&data, &protocol, 2.0, 5).unwrap();
        let best = h.epoch_loss.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(h.epoch_loss[h.best_epoch - 1], best);
        let (loss, _) = model.loss_and_accuracy(&data).unwrap();
        assert_eq!(loss, best);
    }

    #[test]
    fn same_seed_same_history() {
        let (enc, clf) = tiny_config();
        let data = examples(10);
        let protocol = TrainProtocol {
            batch_size: 3,
            max_epochs: 6,
            patience: None,
            ..TrainProtocol::default()
        };
        let run = || {
            let mut m = NewsModel::<f64>::init(10, 2, &enc, &clf, true, 11).unwrap();
            let h = m.train(&data, &protocol, 0.1, 11).unwrap();
            (h, m)
        };
        let (ha, ma) = run();
        let (hb, mb) = run();
        assert_eq!(ha, hb);
        assert_eq!(ma, mb);
        assert_eq!(ha.epoch_loss.len(), 6);
    }

    #[test]
    fn title_path_is_identical_with_and_without_entities() {
        let (enc, clf) = tiny_config();
        let on = NewsModel::<f64>::init(10, 2, &enc, &clf, true, 21).unwrap();
        let off = NewsModel::<f64>::init(10, 2, &enc, &clf, false, 21).unwrap();
        assert_eq!(on.encoder, off.encoder);
        assert_eq!(on.classifier.input_dim(), 6 + 2);
        assert_eq!(off.classifier.input_dim(), 6);
    }

    #[test]
    fn missing_entities_rejected_when_enabled() {
        let (enc, clf) = tiny_config();
        let mut data = examples(4);
        data[1].entity_vector = None;
        let mut on = NewsModel::<f64>::init(10, 2, &enc, &clf, true, 1).unwrap();
        assert!(on.train(&data, &TrainProtocol::default(), 0.05, 1).is_err());
        let mut off = NewsModel::<f64>::init(10, 2, &enc, &clf, false, 1).unwrap();
        assert!(off.train(&data, &TrainProtocol::default(), 0.05, 1).is_ok());
    }

    #[test]
    fn identical_seeds_average_to_the_single_trial() {
        let (enc, clf) = tiny_config();
        let data = examples(12);
        let protocol = TrainProtocol {
            batch_size: 4,
            max_epochs: 4,
            seeds: vec![7, 7, 7],
            ..TrainProtocol::default()
        };
        let r = run_trials("toy", &data, &data, 10, 2, &enc, &clf, &protocol).unwrap();
        let single = TrainProtocol {
            seeds: vec![7],
            ..protocol.clone()
        };
        let s = run_trials("toy", &data, &data, 10, 2, &enc, &clf, &single).unwrap();
        assert_eq!(r.mean, s.mean);
        assert_eq!(r.per_seed.len(), 3);
    }

    #[test]
    fn disabled_patience_serializes_as_false() {
        let p = TrainProtocol {
            patience: None,
            ..TrainProtocol::default()
        };
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains("\"patience\":false"), "{json}");
        assert_eq!(serde_json::from_str::<TrainProtocol>(&json).unwrap(), p);
        assert!(serde_json::from_str::<TrainProtocol>(r#"{"patience":true}"#).is_err());
    }

    #[test]
    fn protocol_validation() {
        assert!(TrainProtocol::default().validate().is_ok());
        for p in [
            TrainProtocol {
                patience: Some(0),
                ..TrainProtocol::default()
            },
            TrainProtocol {
                split_ratio: 1.0,
                ..TrainProtocol::default()
            },
            TrainProtocol {
                batch_size: 0,
                ..TrainProtocol::default()
            },
        ] {
            assert!(p.validate().is_err());
        }
    }
}
