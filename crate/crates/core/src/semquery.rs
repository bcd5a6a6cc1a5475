//! Semantic queries over head-role entity vectors.
//!
//! Every query reduces to ranking entities by `sim(e_i, q)` for a query point
//! `q` built from vector arithmetic:
//!
//! | task                  | query point        |
//! |-----------------------|--------------------|
//! | similar entities      | `e`                |
//! | similar with bias `A` | `mean(A) + e`      |
//! | analogy `A` over `B`  | `mean(A) - mean(B) + e` |
//!
//! Tail-role vectors are never read here.

use std::cmp::Ordering;
use std::collections::HashSet;

use thiserror::Error;

use crate::graph::EntityId;
use crate::model::{EmbeddingModel, ModelError};
use crate::scalar::{dot, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("entity id {0} out of range (N = {1})")]
    InvalidEntity(usize, usize),
    #[error("k must be >= 1")]
    ZeroK,
    #[error("{0} must be empty for this query")]
    UnexpectedBias(&'static str),
    #[error("at session start")]
    AtSessionStart,
    #[error(transparent)]
    Model(ModelError),
}

impl From<ModelError> for QueryError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::EntityOutOfRange(id, n) => QueryError::InvalidEntity(id, n),
            other => QueryError::Model(other),
        }
    }
}

/// Similarity measure used for ranking. Dot product is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Similarity {
    #[default]
    Dot,
    Cosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySpec {
    pub anchor: EntityId,
    pub positives: Vec<EntityId>,
    pub negatives: Vec<EntityId>,
    pub k: usize,
    pub type_filter: Option<String>,
    /// Drop the anchor and all bias entities from results.
    pub exclude: bool,
    pub similarity: Similarity,
}

impl QuerySpec {
    pub fn new(anchor: EntityId, k: usize) -> Self {
        Self {
            anchor,
            positives: Vec::new(),
            negatives: Vec::new(),
            k,
            type_filter: None,
            exclude: true,
            similarity: Similarity::Dot,
        }
    }

    pub fn positives(mut self, ids: impl IntoIterator<Item = EntityId>) -> Self {
        self.positives = ids.into_iter().collect();
        self
    }

    pub fn negatives(mut self, ids: impl IntoIterator<Item = EntityId>) -> Self {
        self.negatives = ids.into_iter().collect();
        self
    }

    pub fn type_filter(mut self, ty: Option<impl Into<String>>) -> Self {
        self.type_filter = ty.map(Into::into);
        self
    }

    pub fn exclude(mut self, on: bool) -> Self {
        self.exclude = on;
        self
    }

    pub fn similarity(mut self, s: Similarity) -> Self {
        self.similarity = s;
        self
    }

    fn excluded(&self) -> HashSet<EntityId> {
        if !self.exclude {
            return HashSet::new();
        }
        std::iter::once(self.anchor)
            .chain(self.positives.iter().copied())
            .chain(self.negatives.iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ranked<F> {
    pub entity: EntityId,
    pub score: F,
}

/// Top-k results: scores non-increasing, ties by ascending entity id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedList<F> {
    pub entries: Vec<Ranked<F>>,
}

impl<F: Scalar> RankedList<F> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entities(&self) -> Vec<EntityId> {
        self.entries.iter().map(|r| r.entity).collect()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Ranked<F>> {
        self.entries.iter()
    }
}

/// Ranking options shared by every query.
#[derive(Debug, Clone, Copy)]
pub struct RankOptions<'a> {
    pub k: usize,
    pub type_filter: Option<&'a str>,
    pub excluded: &'a HashSet<EntityId>,
    pub similarity: Similarity,
}

/// `e1ᵀ e2`.
pub fn sim<F: Scalar>(a: &[F], b: &[F]) -> Result<F, QueryError> {
    if a.len() != b.len() {
        return Err(QueryError::LengthMismatch(a.len(), b.len()));
    }
    Ok(dot(a, b))
}

/// Semantic direction `e1 - e2`.
pub fn dir<F: Scalar>(a: &[F], b: &[F]) -> Result<Vec<F>, QueryError> {
    if a.len() != b.len() {
        return Err(QueryError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| x - y).collect())
}

/// Component-wise mean of head-role vectors; the zero vector for no ids.
pub fn mean_vector<F: Scalar>(
    ids: &[EntityId],
    model: &EmbeddingModel<F>,
) -> Result<Vec<F>, QueryError> {
    let mut acc = vec![F::zero(); model.dim()];
    if ids.is_empty() {
        return Ok(acc);
    }
    for &id in ids {
        let row = model.entity_vector(id)?;
        for (a, &v) in acc.iter_mut().zip(row) {
            *a = *a + v;
        }
    }
    let n = F::from_usize(ids.len()).unwrap();
    for a in &mut acc {
        *a = *a / n;
    }
    Ok(acc)
}

/// `(mean(A) - mean(B)) + base`.
pub fn query_point<F: Scalar>(
    model: &EmbeddingModel<F>,
    base: &[F],
    positives: &[EntityId],
    negatives: &[EntityId],
) -> Result<Vec<F>, QueryError> {
    let a = mean_vector(positives, model)?;
    let b = mean_vector(negatives, model)?;
    let direction = dir(&a, &b)?;
    if base.len() != direction.len() {
        return Err(QueryError::LengthMismatch(base.len(), direction.len()));
    }
    Ok(direction.iter().zip(base).map(|(&d, &e)| d + e).collect())
}

#[inline]
fn by_score_then_id<F: Scalar>(a: &Ranked<F>, b: &Ranked<F>) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.entity.cmp(&b.entity))
}

fn norm<F: Scalar>(v: &[F]) -> F {
    dot(v, v).sqrt()
}

/// Scores the given candidates against `point` and keeps the top k.
/// Output does not depend on candidate order.
pub fn rank_candidates<F: Scalar>(
    model: &EmbeddingModel<F>,
    point: &[F],
    candidates: impl IntoIterator<Item = EntityId>,
    opts: RankOptions<'_>,
) -> Result<RankedList<F>, QueryError> {
    if opts.k == 0 {
        return Err(QueryError::ZeroK);
    }
    if point.len() != model.dim() {
        return Err(QueryError::LengthMismatch(point.len(), model.dim()));
    }
    let point_norm = norm(point);
    let vocab = &model.vocabulary;
    let mut scored: Vec<Ranked<F>> = Vec::new();
    for id in candidates {
        model.check_entity(id)?;
        if opts.excluded.contains(&id) || !vocab.matches_type(id, opts.type_filter) {
            continue;
        }
        let row = model.head_vectors.row(id.0);
        let score = match opts.similarity {
            Similarity::Dot => dot(row, point),
            Similarity::Cosine => {
                let denom = norm(row) * point_norm;
                if denom > F::zero() {
                    dot(row, point) / denom
                } else {
                    F::zero()
                }
            }
        };
        scored.push(Ranked { entity: id, score });
    }
    if scored.len() > opts.k {
        scored.select_nth_unstable_by(opts.k - 1, by_score_then_id);
        scored.truncate(opts.k);
    }
    scored.sort_unstable_by(by_score_then_id);
    Ok(RankedList { entries: scored })
}

/// Ranks all entities against an arbitrary query point.
pub fn rank_by_point<F: Scalar>(
    model: &EmbeddingModel<F>,
    point: &[F],
    opts: RankOptions<'_>,
) -> Result<RankedList<F>, QueryError> {
    rank_candidates(model, point, (0..model.num_entities()).map(EntityId), opts)
}

fn check_ids<F: Scalar>(model: &EmbeddingModel<F>, spec: &QuerySpec) -> Result<(), QueryError> {
    for &id in std::iter::once(&spec.anchor)
        .chain(&spec.positives)
        .chain(&spec.negatives)
    {
        model.check_entity(id)?;
    }
    if spec.k == 0 {
        return Err(QueryError::ZeroK);
    }
    Ok(())
}

/// Entities most similar to the anchor.
pub fn similar_entities<F: Scalar>(
    spec: &QuerySpec,
    model: &EmbeddingModel<F>,
) -> Result<RankedList<F>, QueryError> {
    if !spec.positives.is_empty() {
        return Err(QueryError::UnexpectedBias("positives"));
    }
    if !spec.negatives.is_empty() {
        return Err(QueryError::UnexpectedBias("negatives"));
    }
    analogy_query(spec, model)
}

/// Entities most similar to `mean(A) + e`.
pub fn similar_with_bias<F: Scalar>(
    spec: &QuerySpec,
    model: &EmbeddingModel<F>,
) -> Result<RankedList<F>, QueryError> {
    if !spec.negatives.is_empty() {
        return Err(QueryError::UnexpectedBias("negatives"));
    }
    analogy_query(spec, model)
}

/// Entities most similar to `mean(A) - mean(B) + e`.
pub fn analogy_query<F: Scalar>(
    spec: &QuerySpec,
    model: &EmbeddingModel<F>,
) -> Result<RankedList<F>, QueryError> {
    check_ids(model, spec)?;
    let anchor = model.head_vectors.row(spec.anchor.0);
    let point = query_point(model, anchor, &spec.positives, &spec.negatives)?;
    let excluded = spec.excluded();
    rank_by_point(
        model,
        &point,
        RankOptions {
            k: spec.k,
            type_filter: spec.type_filter.as_deref(),
            excluded: &excluded,
            similarity: spec.similarity,
        },
    )
}

/// One analogy step taken in a browse session.
#[derive(Debug, Clone, PartialEq)]
pub struct BrowseStep<F> {
    pub positives: Vec<EntityId>,
    pub negatives: Vec<EntityId>,
    pub k: usize,
    pub type_filter: Option<String>,
    pub results: RankedList<F>,
    /// Anchor vector before this step, restored verbatim by `back`.
    pub previous_anchor: Vec<F>,
}

/// Interactive analogy browsing: each step moves the query point along
/// `mean(A) - mean(B)` and ranks entities around the new point.
#[derive(Debug, Clone, PartialEq)]
pub struct BrowseSession<F> {
    origin: EntityId,
    anchor_vector: Vec<F>,
    trail: Vec<BrowseStep<F>>,
    similarity: Similarity,
}

impl<F: Scalar> BrowseSession<F> {
    pub fn start(model: &EmbeddingModel<F>, anchor: EntityId) -> Result<Self, QueryError> {
        let row = model.entity_vector(anchor)?;
        Ok(Self {
            origin: anchor,
            anchor_vector: row.to_vec(),
            trail: Vec::new(),
            similarity: Similarity::Dot,
        })
    }

    pub fn with_similarity(mut self, similarity: Similarity) -> Self {
        self.similarity = similarity;
        self
    }

    pub fn origin(&self) -> EntityId {
        self.origin
    }

    pub fn anchor_vector(&self) -> &[F] {
        &self.anchor_vector
    }

    pub fn trail(&self) -> &[BrowseStep<F>] {
        &self.trail
    }

    /// Origin plus every bias entity used so far.
    pub fn excluded(&self) -> HashSet<EntityId> {
        let mut set = HashSet::new();
        set.insert(self.origin);
        for s in &self.trail {
            set.extend(s.positives.iter().copied());
            set.extend(s.negatives.iter().copied());
        }
        set
    }

    /// Moves the anchor by `mean(A) - mean(B)` and ranks around the new
    /// point. On error the session is left untouched.
    pub fn step(
        &mut self,
        model: &EmbeddingModel<F>,
        positives: &[EntityId],
        negatives: &[EntityId],
        k: usize,
        type_filter: Option<&str>,
    ) -> Result<&RankedList<F>, QueryError> {
        if k == 0 {
            return Err(QueryError::ZeroK);
        }
        let point = query_point(model, &self.anchor_vector, positives, negatives)?;
        let mut excluded = self.excluded();
        excluded.extend(positives.iter().copied());
        excluded.extend(negatives.iter().copied());
        let results = rank_by_point(
            model,
            &point,
            RankOptions {
                k,
                type_filter,
                excluded: &excluded,
                similarity: self.similarity,
            },
        )?;
        let previous_anchor = std::mem::replace(&mut self.anchor_vector, point);
        self.trail.push(BrowseStep {
            positives: positives.to_vec(),
            negatives: negatives.to_vec(),
            k,
            type_filter: type_filter.map(str::to_owned),
            results,
            previous_anchor,
        });
        Ok(&self.trail.last().unwrap().results)
    }

    /// Undoes the last step.
    pub fn back(&mut self) -> Result<(), QueryError> {
        let step = self.trail.pop().ok_or(QueryError::AtSessionStart)?;
        self.anchor_vector = step.previous_anchor;
        Ok(())
    }
}
