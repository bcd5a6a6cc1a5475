//! Filtered link-prediction ranking (MRR and hits@k).

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;

use crate::graph::{EntityId, Triple};
use crate::model::{score_full_unchecked, EmbeddingModel, ModelError};
use crate::scalar::Scalar;

pub const HITS_AT: [usize; 3] = [1, 3, 10];

#[derive(Debug, Clone, PartialEq)]
pub struct LinkMetrics {
    pub mrr: f64,
    pub hits_at: BTreeMap<usize, f64>,
    /// Number of rankings averaged (two per test triple).
    pub rankings: usize,
}

/// Filtered rank of the true tail and of the true head of `t`.
///
/// Candidates forming a triple in `known` (other than `t` itself) are skipped.
/// Ties count against the true entity: rank = 1 + #{score > true} +
/// #{score == true, candidate != true}.
pub fn filtered_ranks<F: Scalar>(
    model: &EmbeddingModel<F>,
    t: &Triple,
    known: &HashSet<Triple>,
) -> (usize, usize) {
    let n = model.num_entities();
    let truth = score_full_unchecked(model, t);

    let mut tail_rank = 1;
    let mut head_rank = 1;
    for e in (0..n).map(EntityId) {
        if e != t.tail {
            let cand = Triple { tail: e, ..*t };
            if !known.contains(&cand) && score_full_unchecked(model, &cand) >= truth {
                tail_rank += 1;
            }
        }
        if e != t.head {
            let cand = Triple { head: e, ..*t };
            if !known.contains(&cand) && score_full_unchecked(model, &cand) >= truth {
                head_rank += 1;
            }
        }
    }
    (tail_rank, head_rank)
}

/// Ranks each test triple's tail (head and relation fixed) and head (tail and
/// relation fixed) against all entities by the full CP_h score.
pub fn evaluate_link_prediction<F: Scalar>(
    model: &EmbeddingModel<F>,
    test: &[Triple],
    known: &HashSet<Triple>,
) -> Result<LinkMetrics, ModelError> {
    if test.is_empty() {
        return Err(ModelError::EmptyTestSet);
    }
    let m = model.num_relations();
    for t in test {
        if t.relation.0 >= m {
            return Err(ModelError::AugmentedRelation { id: t.relation.0, m });
        }
        model.check_triple(t)?;
    }

    // collected in test order so the reduction below is deterministic
    let ranks: Vec<(usize, usize)> = test
        .par_iter()
        .map(|t| filtered_ranks(model, t, known))
        .collect();

    let mut rr = 0.0;
    let mut hits = [0usize; HITS_AT.len()];
    for &(a, b) in &ranks {
        for rank in [a, b] {
            rr += 1.0 / rank as f64;
            for (slot, &k) in hits.iter_mut().zip(HITS_AT.iter()) {
                if rank <= k {
                    *slot += 1;
                }
            }
        }
    }
    let count = 2 * ranks.len();
    Ok(LinkMetrics {
        mrr: rr / count as f64,
        hits_at: HITS_AT
            .iter()
            .zip(hits)
            .map(|(&k, h)| (k, h as f64 / count as f64))
            .collect(),
        rankings: count,
    })
}
