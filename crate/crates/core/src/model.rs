//! CP_h embedding model: per-entity head-role and tail-role vectors plus one
//! vector per relation, inverse relations included.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::graph::{EntityId, KnowledgeGraph, RelationId, Triple, Vocabulary};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("graph must be augmented before building a model")]
    NotAugmented,
    #[error("vector lengths differ: {0:?}")]
    LengthMismatch(Vec<usize>),
    #[error("entity id {0} out of range (N = {1})")]
    EntityOutOfRange(usize, usize),
    #[error("relation id {0} out of range ({1} relation rows)")]
    RelationOutOfRange(usize, usize),
    #[error("score_full expects an original relation id < {m}, got {id}")]
    AugmentedRelation { id: usize, m: usize },
    #[error("score is NaN")]
    NaN,
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("model shapes do not match vocabulary: {0}")]
    Shape(String),
    #[error("empty test set")]
    EmptyTestSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    #[default]
    Sgd,
    Adagrad,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adagrad => "adagrad",
        })
    }
}

impl FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adagrad" => Ok(Optimizer::Adagrad),
            other => Err(format!("unknown optimizer {other:?} (expected sgd or adagrad)")),
        }
    }
}

/// Training hyper-parameters. Real-valued settings are kept in `f64`
/// regardless of the model's scalar type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    /// Standard deviation of the Gaussian initialization.
    pub init_scale: f64,
    pub lr: f64,
    /// Negative samples per positive on each side (head and tail).
    pub n_neg: usize,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub batch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            init_scale: 0.1,
            lr: 0.1,
            n_neg: 4,
            epochs: 50,
            l2: 0.0,
            seed: 0,
            optimizer: Optimizer::Sgd,
            batch_size: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.dim == 0 {
            return Err(ModelError::Config("dim must be >= 1".into()));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(ModelError::Config("init_scale must be > 0".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ModelError::Config("lr must be > 0".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(ModelError::Config("l2 must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel<F> {
    /// `e` per entity (head role); the only vectors semantic queries read.
    pub head_vectors: Matrix<F>,
    /// `e⁽²⁾` per entity (tail role).
    pub tail_vectors: Matrix<F>,
    /// `2M` rows: original relations first, augmented inverses after.
    pub relation_vectors: Matrix<F>,
    pub config: ModelConfig,
    pub vocabulary: Vocabulary,
}

impl<F: Scalar> EmbeddingModel<F> {
    /// Assembles a model from parts, checking shapes against the vocabulary.
    pub fn from_parts(
        vocabulary: Vocabulary,
        config: ModelConfig,
        head_vectors: Matrix<F>,
        tail_vectors: Matrix<F>,
        relation_vectors: Matrix<F>,
    ) -> Result<Self, ModelError> {
        let model = Self {
            head_vectors,
            tail_vectors,
            relation_vectors,
            config,
            vocabulary,
        };
        model.check_shapes()?;
        Ok(model)
    }

    pub fn check_shapes(&self) -> Result<(), ModelError> {
        let n = self.vocabulary.num_entities();
        let r = 2 * self.vocabulary.num_relations();
        let d = self.config.dim;
        let expect = [
            ("head_vectors", &self.head_vectors, n),
            ("tail_vectors", &self.tail_vectors, n),
            ("relation_vectors", &self.relation_vectors, r),
        ];
        for (name, m, rows) in expect {
            if m.rows() != rows || m.cols() != d {
                return Err(ModelError::Shape(format!(
                    "{name} is {}x{}, expected {rows}x{d}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn num_entities(&self) -> usize {
        self.head_vectors.rows()
    }

    /// `M`, the number of original relations.
    pub fn num_relations(&self) -> usize {
        self.relation_vectors.rows() / 2
    }

    pub fn is_finite(&self) -> bool {
        self.head_vectors.is_finite()
            && self.tail_vectors.is_finite()
            && self.relation_vectors.is_finite()
    }

    /// Head-role vector of an entity.
    pub fn entity_vector(&self, id: EntityId) -> Result<&[F], ModelError> {
        self.check_entity(id)?;
        Ok(self.head_vectors.row(id.0))
    }

    pub(crate) fn check_entity(&self, id: EntityId) -> Result<(), ModelError> {
        if id.0 >= self.num_entities() {
            return Err(ModelError::EntityOutOfRange(id.0, self.num_entities()));
        }
        Ok(())
    }

    pub(crate) fn check_triple(&self, t: &Triple) -> Result<(), ModelError> {
        self.check_entity(t.head)?;
        self.check_entity(t.tail)?;
        if t.relation.0 >= self.relation_vectors.rows() {
            return Err(ModelError::RelationOutOfRange(
                t.relation.0,
                self.relation_vectors.rows(),
            ));
        }
        Ok(())
    }

    /// Converts every entry to another scalar type.
    pub fn cast<G: Scalar>(&self) -> EmbeddingModel<G> {
        let conv = |v: F| G::from_f64_lossy(v.to_f64_lossy());
        EmbeddingModel {
            head_vectors: self.head_vectors.map(conv),
            tail_vectors: self.tail_vectors.map(conv),
            relation_vectors: self.relation_vectors.map(conv),
            config: self.config.clone(),
            vocabulary: self.vocabulary.clone(),
        }
    }

    /// Rounds every entry to nearest-even `f32`, the on-disk precision.
    pub fn to_f32(&self) -> EmbeddingModel<f32> {
        EmbeddingModel {
            head_vectors: self.head_vectors.map(Scalar::to_f32_lossy),
            tail_vectors: self.tail_vectors.map(Scalar::to_f32_lossy),
            relation_vectors: self.relation_vectors.map(Scalar::to_f32_lossy),
            config: self.config.clone(),
            vocabulary: self.vocabulary.clone(),
        }
    }
}

/// Draws every entry i.i.d. from N(0, init_scale²) using a ChaCha8 stream
/// seeded with `config.seed`. Fill order: head, tail, relation matrices.
pub fn init_model<F: Scalar>(
    graph: &KnowledgeGraph,
    config: &ModelConfig,
) -> Result<EmbeddingModel<F>, ModelError> {
    config.validate()?;
    if !graph.is_augmented() {
        return Err(ModelError::NotAugmented);
    }
    let n = graph.num_entities();
    if n == 0 {
        return Err(ModelError::Config("empty vocabulary".into()));
    }
    let d = config.dim;
    let r = graph.num_relations_total();
    let normal = Normal::new(0.0, config.init_scale)
        .map_err(|e| ModelError::Config(format!("init_scale: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut draw = |rows: usize| {
        let data = (0..rows * d)
            .map(|_| F::from_f64_lossy(normal.sample(&mut rng)))
            .collect();
        Matrix::from_vec(rows, d, data)
    };
    let head_vectors = draw(n);
    let tail_vectors = draw(n);
    let relation_vectors = draw(r);
    Ok(EmbeddingModel {
        head_vectors,
        tail_vectors,
        relation_vectors,
        config: config.clone(),
        vocabulary: graph.vocabulary().clone(),
    })
}

/// `⟨a, b, c⟩ = Σ_d a_d b_d c_d`.
pub fn trilinear<F: Scalar>(a: &[F], b: &[F], c: &[F]) -> Result<F, ModelError> {
    if a.len() != b.len() || a.len() != c.len() {
        return Err(ModelError::LengthMismatch(vec![a.len(), b.len(), c.len()]));
    }
    Ok(trilinear_unchecked(a, b, c))
}

#[inline]
pub(crate) fn trilinear_unchecked<F: Scalar>(a: &[F], b: &[F], c: &[F]) -> F {
    a.iter()
        .zip(b)
        .zip(c)
        .fold(F::zero(), |acc, ((&x, &y), &z)| acc + x * y * z)
}

/// One directed term `⟨h, t⁽²⁾, r⟩`; the relation may be augmented.
pub fn score_directed<F: Scalar>(model: &EmbeddingModel<F>, t: &Triple) -> Result<F, ModelError> {
    model.check_triple(t)?;
    Ok(score_directed_unchecked(model, t))
}

#[inline]
pub(crate) fn score_directed_unchecked<F: Scalar>(model: &EmbeddingModel<F>, t: &Triple) -> F {
    trilinear_unchecked(
        model.head_vectors.row(t.head.0),
        model.tail_vectors.row(t.tail.0),
        model.relation_vectors.row(t.relation.0),
    )
}

/// Full CP_h score `⟨h, t⁽²⁾, r⟩ + ⟨t, h⁽²⁾, r⁽ᵃ⁾⟩` of an original triple.
pub fn score_full<F: Scalar>(model: &EmbeddingModel<F>, t: &Triple) -> Result<F, ModelError> {
    let m = model.num_relations();
    if t.relation.0 >= m {
        return Err(ModelError::AugmentedRelation { id: t.relation.0, m });
    }
    model.check_triple(t)?;
    Ok(score_full_unchecked(model, t))
}

#[inline]
pub(crate) fn score_full_unchecked<F: Scalar>(model: &EmbeddingModel<F>, t: &Triple) -> F {
    let inverse = Triple {
        head: t.tail,
        tail: t.head,
        relation: RelationId(t.relation.0 + model.num_relations()),
    };
    score_directed_unchecked(model, t) + score_directed_unchecked(model, &inverse)
}

/// Logistic validity probability σ(s), evaluated so that neither branch
/// exponentiates a positive argument.
pub fn prob_valid<F: Scalar>(score: F) -> Result<F, ModelError> {
    if score.is_nan() {
        return Err(ModelError::NaN);
    }
    Ok(sigmoid(score))
}

#[inline]
pub(crate) fn sigmoid<F: Scalar>(s: F) -> F {
    if s >= F::zero() {
        F::one() / (F::one() + (-s).exp())
    } else {
        let e = s.exp();
        e / (F::one() + e)
    }
}

/// `-log σ(s)`, i.e. softplus(-s), without overflow for large |s|.
#[inline]
pub(crate) fn neg_log_sigmoid<F: Scalar>(s: F) -> F {
    (-s).max(F::zero()) + (-s.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{augment, ingest_triples};

    fn toy_graph() -> KnowledgeGraph {
        let g = ingest_triples("A\twrite\tP1\nP1\tcite\tP2\n".as_bytes())
            .unwrap()
            .graph;
        augment(g).unwrap()
    }

    fn cfg(dim: usize) -> ModelConfig {
        ModelConfig {
            dim,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn init_shapes_and_determinism() {
        let g = toy_graph();
        let m: EmbeddingModel<f64> = init_model(&g, &cfg(4)).unwrap();
        assert_eq!((m.head_vectors.rows(), m.head_vectors.cols()), (3, 4));
        assert_eq!((m.tail_vectors.rows(), m.tail_vectors.cols()), (3, 4));
        assert_eq!((m.relation_vectors.rows(), m.relation_vectors.cols()), (4, 4));
        let again: EmbeddingModel<f64> = init_model(&g, &cfg(4)).unwrap();
        assert_eq!(m, again);
        let other: EmbeddingModel<f64> = init_model(
            &g,
            &ModelConfig {
                seed: 99,
                ..cfg(4)
            },
        )
        .unwrap();
        assert_ne!(m, other);
    }

    #[test]
    fn init_rejects_bad_input() {
        let g = toy_graph();
        let bad = ModelConfig {
            init_scale: 0.0,
            ..cfg(4)
        };
        assert!(matches!(init_model::<f64>(&g, &bad), Err(ModelError::Config(_))));
        assert!(matches!(init_model::<f64>(&g, &cfg(0)), Err(ModelError::Config(_))));
        let raw = ingest_triples("A\tr\tB\n".as_bytes()).unwrap().graph;
        assert_eq!(init_model::<f64>(&raw, &cfg(4)), Err(ModelError::NotAugmented));
    }

    #[test]
    fn trilinear_values() {
        assert_eq!(trilinear(&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]).unwrap(), 63.0);
        assert_eq!(trilinear(&[1.5, -2.0], &[3.0, 4.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(
            trilinear(&[1.0], &[1.0, 2.0], &[1.0]),
            Err(ModelError::LengthMismatch(_))
        ));
        let (a, b, c) = ([0.3, -1.25, 2.0], [1.5, 0.5, -0.75], [2.0, 4.0, 0.5]);
        let abc = trilinear(&a, &b, &c).unwrap();
        for perm in [(&b, &a, &c), (&c, &b, &a), (&a, &c, &b), (&b, &c, &a), (&c, &a, &b)] {
            assert_eq!(trilinear(perm.0, perm.1, perm.2).unwrap(), abc);
        }
    }

    fn hand_model() -> EmbeddingModel<f64> {
        let vocab = Vocabulary::from_names(vec!["h".into(), "t".into()], vec!["r".into()]).unwrap();
        EmbeddingModel::from_parts(
            vocab,
            cfg(2),
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.5, 2.0]]),
            Matrix::from_rows(&[vec![-1.0, 1.0], vec![2.0, 3.0]]),
            Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]),
        )
        .unwrap()
    }

    #[test]
    fn directed_and_full_scores() {
        let m = hand_model();
        let t = Triple::new(0, 1, 0);
        assert_eq!(score_directed(&m, &t).unwrap(), 2.0);
        // zero augmented row: full == directed
        assert_eq!(score_full(&m, &t).unwrap(), score_directed(&m, &t).unwrap());
        assert_eq!(score_directed(&m, &Triple::new(0, 1, 1)).unwrap(), 0.0);
        assert_eq!(
            score_full(&m, &Triple::new(0, 1, 1)),
            Err(ModelError::AugmentedRelation { id: 1, m: 1 })
        );
        assert!(matches!(
            score_directed(&m, &Triple::new(2, 1, 0)),
            Err(ModelError::EntityOutOfRange(2, 2))
        ));
        assert!(matches!(
            score_directed(&m, &Triple::new(0, 1, 2)),
            Err(ModelError::RelationOutOfRange(2, 2))
        ));
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(prob_valid(0.0f64).unwrap(), 0.5);
        for s in [1.0f64, 5.0, 50.0] {
            let d = prob_valid(-s).unwrap() - (1.0 - prob_valid(s).unwrap());
            assert!(d.abs() <= 1e-15, "{s}: {d}");
        }
        assert_eq!(prob_valid(f64::NAN), Err(ModelError::NaN));
        assert_eq!(prob_valid(700.0f64).unwrap(), 1.0);
        let tiny = prob_valid(-700.0f64).unwrap();
        assert!(tiny > 0.0 && tiny.is_finite());
        assert_eq!(prob_valid(0.0f32).unwrap(), 0.5);
    }

    #[test]
    fn sigmoid_far_tail_matches_high_precision_value() {
        // σ(-745) ≈ 2.82e-324 (mpmath, 50 digits), which rounds to the
        // smallest positive subnormal f64.
        let v = prob_valid(-745.0f64).unwrap();
        assert!(v > 0.0 && v <= 1e-300, "{v:e}");
        assert_eq!(v, f64::from_bits(1));
        // σ(-700) = 9.85967654375977e-305 (computed with mpmath at 50 digits)
        let v = prob_valid(-700.0f64).unwrap();
        assert!(((v - 9.85967654375977e-305) / v).abs() < 1e-13, "{v:e}");
    }

    #[test]
    fn softplus_is_stable() {
        assert!((neg_log_sigmoid(0.0f64) - std::f64::consts::LN_2).abs() < 1e-16);
        assert_eq!(neg_log_sigmoid(800.0f64), 0.0);
        assert_eq!(neg_log_sigmoid(-800.0f64), 800.0);
    }

    #[test]
    fn optimizer_parse() {
        assert_eq!("SGD".parse::<Optimizer>().unwrap(), Optimizer::Sgd);
        assert_eq!("adagrad".parse::<Optimizer>().unwrap(), Optimizer::Adagrad);
        assert!("adam".parse::<Optimizer>().is_err());
    }
}
