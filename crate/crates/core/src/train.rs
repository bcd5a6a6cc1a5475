//! Negative-sampled logistic-loss training with sparse row updates.
//!
//! Training runs over the directed (augmented) triples, scoring each with a
//! single trilinear term. For every positive `(h, t, r)` the sampler draws
//! `n_neg` corrupted tails `(h, t', r)` and `n_neg` corrupted heads
//! `(h', t, r)`, uniformly over all entities. The batch loss is
//!
//! ```text
//! L = mean_samples( softplus(-y·s) ) + l2 · Σ_{touched rows} ‖row‖²
//! ```
//!
//! with `y = +1` for positives and `-1` for negatives.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{EntityId, KnowledgeGraph, Triple};
use crate::matrix::Matrix;
use crate::model::{
    init_model, neg_log_sigmoid, sigmoid, EmbeddingModel, ModelConfig, ModelError, Optimizer,
};
use crate::scalar::Scalar;

const ADAGRAD_EPS: f64 = 1e-10;

/// Stream id separating the training sampler from the initialization stream.
const SAMPLER_STREAM: u64 = 1;

/// A scored example: a directed triple and whether it is a positive fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub triple: Triple,
    pub positive: bool,
}

/// Gradients for the rows a batch touched, keyed by row index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseGrads<F> {
    pub head: BTreeMap<usize, Vec<F>>,
    pub tail: BTreeMap<usize, Vec<F>>,
    pub relation: BTreeMap<usize, Vec<F>>,
}

impl<F: Scalar> SparseGrads<F> {
    fn slot(map: &mut BTreeMap<usize, Vec<F>>, row: usize, dim: usize) -> &mut Vec<F> {
        map.entry(row).or_insert_with(|| vec![F::zero(); dim])
    }

    pub fn touched_rows(&self) -> usize {
        self.head.len() + self.tail.len() + self.relation.len()
    }
}

/// Expands positives into positives plus uniformly corrupted negatives.
/// Output order: each positive, then its corrupted tails, then its corrupted
/// heads.
pub fn sample_negatives<R: Rng + ?Sized>(
    positives: &[Triple],
    n_entities: usize,
    n_neg: usize,
    rng: &mut R,
) -> Vec<Sample> {
    let mut out = Vec::with_capacity(positives.len() * (1 + 2 * n_neg));
    for &t in positives {
        out.push(Sample {
            triple: t,
            positive: true,
        });
        for _ in 0..n_neg {
            let tail = EntityId(rng.random_range(0..n_entities));
            out.push(Sample {
                triple: Triple { tail, ..t },
                positive: false,
            });
        }
        for _ in 0..n_neg {
            let head = EntityId(rng.random_range(0..n_entities));
            out.push(Sample {
                triple: Triple { head, ..t },
                positive: false,
            });
        }
    }
    out
}

/// Loss and gradients over a fixed sample list.
pub fn sample_loss_and_grads<F: Scalar>(
    model: &EmbeddingModel<F>,
    samples: &[Sample],
    l2: f64,
) -> Result<(F, SparseGrads<F>), ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    for s in samples {
        model.check_triple(&s.triple)?;
    }
    let d = model.dim();
    let scale = F::one() / F::from_usize(samples.len()).unwrap();
    let mut loss = F::zero();
    let mut grads = SparseGrads::default();

    for s in samples {
        let t = s.triple;
        let h = model.head_vectors.row(t.head.0);
        let tl = model.tail_vectors.row(t.tail.0);
        let r = model.relation_vectors.row(t.relation.0);
        let score = crate::model::trilinear_unchecked(h, tl, r);
        // dL/ds: σ(s) - 1 for positives, σ(s) for negatives
        let (term, dscore) = if s.positive {
            (neg_log_sigmoid(score), sigmoid(score) - F::one())
        } else {
            (neg_log_sigmoid(-score), sigmoid(score))
        };
        loss = loss + term;
        let g = dscore * scale;

        let gh = SparseGrads::slot(&mut grads.head, t.head.0, d);
        for k in 0..d {
            gh[k] = gh[k] + g * tl[k] * r[k];
        }
        let gt = SparseGrads::slot(&mut grads.tail, t.tail.0, d);
        for k in 0..d {
            gt[k] = gt[k] + g * h[k] * r[k];
        }
        let gr = SparseGrads::slot(&mut grads.relation, t.relation.0, d);
        for k in 0..d {
            gr[k] = gr[k] + g * h[k] * tl[k];
        }
    }
    loss = loss * scale;

    if l2 > 0.0 {
        let l2 = F::from_f64_lossy(l2);
        let two_l2 = l2 + l2;
        let mut penalty = F::zero();
        let parts = [
            (&mut grads.head, &model.head_vectors),
            (&mut grads.tail, &model.tail_vectors),
            (&mut grads.relation, &model.relation_vectors),
        ];
        for (map, matrix) in parts {
            for (&row, g) in map.iter_mut() {
                let w = matrix.row(row);
                for k in 0..d {
                    penalty = penalty + w[k] * w[k];
                    g[k] = g[k] + two_l2 * w[k];
                }
            }
        }
        loss = loss + l2 * penalty;
    }
    Ok((loss, grads))
}

/// Samples negatives for `positives` and returns the batch loss with sparse
/// gradients. Deterministic for a given sampler state.
pub fn loss_and_grads<F: Scalar, R: Rng + ?Sized>(
    model: &EmbeddingModel<F>,
    positives: &[Triple],
    sampler: &mut R,
) -> Result<(F, SparseGrads<F>), ModelError> {
    if positives.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let samples = sample_negatives(positives, model.num_entities(), model.config.n_neg, sampler);
    sample_loss_and_grads(model, &samples, model.config.l2)
}

/// Applies sparse gradients with plain SGD or AdaGrad.
#[derive(Debug, Clone)]
pub struct RowOptimizer<F> {
    kind: Optimizer,
    lr: F,
    eps: F,
    // AdaGrad squared-gradient accumulators, same shapes as the model
    acc: Option<[Matrix<F>; 3]>,
}

impl<F: Scalar> RowOptimizer<F> {
    pub fn new(model: &EmbeddingModel<F>) -> Self {
        let acc = match model.config.optimizer {
            Optimizer::Sgd => None,
            Optimizer::Adagrad => Some([
                Matrix::zeros(model.head_vectors.rows(), model.dim()),
                Matrix::zeros(model.tail_vectors.rows(), model.dim()),
                Matrix::zeros(model.relation_vectors.rows(), model.dim()),
            ]),
        };
        Self {
            kind: model.config.optimizer,
            lr: F::from_f64_lossy(model.config.lr),
            eps: F::from_f64_lossy(ADAGRAD_EPS),
            acc,
        }
    }

    pub fn step(&mut self, model: &mut EmbeddingModel<F>, grads: &SparseGrads<F>) {
        let targets = [
            (&grads.head, &mut model.head_vectors),
            (&grads.tail, &mut model.tail_vectors),
            (&grads.relation, &mut model.relation_vectors),
        ];
        for (i, (map, matrix)) in targets.into_iter().enumerate() {
            for (&row, g) in map {
                let w = matrix.row_mut(row);
                match (self.kind, self.acc.as_mut()) {
                    (Optimizer::Adagrad, Some(acc)) => {
                        let a = acc[i].row_mut(row);
                        for k in 0..w.len() {
                            a[k] = a[k] + g[k] * g[k];
                            w[k] = w[k] - self.lr * g[k] / (a[k].sqrt() + self.eps);
                        }
                    }
                    _ => {
                        for k in 0..w.len() {
                            w[k] = w[k] - self.lr * g[k];
                        }
                    }
                }
            }
        }
    }
}

/// Trains from a seeded initialization. `progress` receives
/// `(epoch, mean_loss)` after each epoch, epochs numbered from 1.
pub fn train<F: Scalar>(
    graph: &KnowledgeGraph,
    config: &ModelConfig,
    progress: impl FnMut(usize, F),
) -> Result<EmbeddingModel<F>, ModelError> {
    let model = init_model(graph, config)?;
    train_from(model, graph, progress)
}

/// Continues training an existing model on `graph` using `model.config`.
pub fn train_from<F: Scalar>(
    mut model: EmbeddingModel<F>,
    graph: &KnowledgeGraph,
    mut progress: impl FnMut(usize, F),
) -> Result<EmbeddingModel<F>, ModelError> {
    if !graph.is_augmented() {
        return Err(ModelError::NotAugmented);
    }
    model.config.validate()?;
    let config = model.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SAMPLER_STREAM);
    let mut optimizer = RowOptimizer::new(&model);
    let mut order: Vec<Triple> = graph.triples().to_vec();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = F::zero();
        let mut weight = 0usize;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let (loss, grads) = loss_and_grads(&model, batch, &mut rng)?;
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch, batch: b });
            }
            optimizer.step(&mut model, &grads);
            total = total + loss * F::from_usize(batch.len()).unwrap();
            weight += batch.len();
        }
        let mean = total / F::from_usize(weight.max(1)).unwrap();
        if !model.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                epoch,
                batch: order.len().div_ceil(config.batch_size),
            });
        }
        progress(epoch, mean);
    }
    Ok(model)
}
