//! Independent brute-force oracles shared by the integration tests.
//!
//! Nothing here calls into the scoring, ranking or loss code of the library;
//! it only reads the model's matrices and vocabulary.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::HashSet;

use kgsq_core::graph::{EntityId, Triple, Vocabulary};
use kgsq_core::model::{EmbeddingModel, ModelConfig};
use kgsq_core::train::Sample;
use kgsq_core::Matrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub const TYPES: [&str; 3] = ["author", "paper", "venue"];

/// Random model with Gaussian entries; roughly two thirds of entities get a
/// type label when `typed` is set.
pub fn random_model<R: Rng>(rng: &mut R, n: usize, m: usize, d: usize, typed: bool) -> EmbeddingModel<f64> {
    let mut gauss = |rows: usize| {
        let data = (0..rows * d).map(|_| StandardNormal.sample(&mut *rng)).collect();
        Matrix::from_vec(rows, d, data)
    };
    let head = gauss(n);
    let tail = gauss(n);
    let rel = gauss(2 * m);
    let names = |p: &str, k: usize| (0..k).map(|i| format!("{p}{i}")).collect();
    let mut vocab = Vocabulary::from_names(names("e", n), names("r", m)).unwrap();
    if typed {
        for i in 0..n {
            let pick = rng.random_range(0..4);
            if pick < 3 {
                vocab.set_entity_type(EntityId(i), TYPES[pick]);
            }
        }
    }
    let config = ModelConfig {
        dim: d,
        ..ModelConfig::default()
    };
    EmbeddingModel::from_parts(vocab, config, head, tail, rel).unwrap()
}

pub fn row(model: &EmbeddingModel<f64>, which: u8, i: usize) -> Vec<f64> {
    let m = match which {
        b'h' => &model.head_vectors,
        b't' => &model.tail_vectors,
        _ => &model.relation_vectors,
    };
    (0..m.cols()).map(|k| m.as_slice()[i * m.cols() + k]).collect()
}

/// Σ_d h_d t⁽²⁾_d r_d by index loop.
pub fn directed_score(model: &EmbeddingModel<f64>, h: usize, t: usize, r: usize) -> f64 {
    let (hv, tv, rv) = (row(model, b'h', h), row(model, b't', t), row(model, b'r', r));
    let mut s = 0.0;
    for d in 0..hv.len() {
        s += hv[d] * tv[d] * rv[d];
    }
    s
}

/// exp of the expanded double sum Σ h t⁽²⁾ r + Σ t h⁽²⁾ r⁽ᵃ⁾.
pub fn expanded_exp(model: &EmbeddingModel<f64>, h: usize, t: usize, r: usize) -> f64 {
    let m = model.relation_vectors.rows() / 2;
    let (hv, h2) = (row(model, b'h', h), row(model, b't', h));
    let (tv, t2) = (row(model, b'h', t), row(model, b't', t));
    let (rv, ra) = (row(model, b'r', r), row(model, b'r', r + m));
    let mut first = 0.0;
    let mut second = 0.0;
    for d in 0..hv.len() {
        first += hv[d] * t2[d] * rv[d];
        second += tv[d] * h2[d] * ra[d];
    }
    (first + second).exp()
}

fn softplus(x: f64) -> f64 {
    // ln(1 + e^x)
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Negative-sampled logistic loss written out term by term.
pub fn loss_oracle(model: &EmbeddingModel<f64>, samples: &[Sample], l2: f64) -> f64 {
    let mut total = 0.0;
    for s in samples {
        let score = directed_score(model, s.triple.head.0, s.triple.tail.0, s.triple.relation.0);
        total += if s.positive { softplus(-score) } else { softplus(score) };
    }
    let mut loss = total / samples.len() as f64;
    if l2 > 0.0 {
        let mut rows: HashSet<(u8, usize)> = HashSet::new();
        for s in samples {
            rows.insert((b'h', s.triple.head.0));
            rows.insert((b't', s.triple.tail.0));
            rows.insert((b'r', s.triple.relation.0));
        }
        let mut pen = 0.0;
        for (w, i) in rows {
            pen += row(model, w, i).iter().map(|x| x * x).sum::<f64>();
        }
        loss += l2 * pen;
    }
    loss
}

/// Head-role mean of `ids` by index loops, zero vector when empty.
pub fn mean_oracle(model: &EmbeddingModel<f64>, ids: &[usize]) -> Vec<f64> {
    let d = model.dim();
    let mut acc = vec![0.0; d];
    for &i in ids {
        let r = row(model, b'h', i);
        for k in 0..d {
            acc[k] += r[k];
        }
    }
    if !ids.is_empty() {
        for k in 0..d {
            acc[k] /= ids.len() as f64;
        }
    }
    acc
}

/// `(mean(A) - mean(B)) + base`.
pub fn point_oracle(model: &EmbeddingModel<f64>, base: &[f64], pos: &[usize], neg: &[usize]) -> Vec<f64> {
    let a = mean_oracle(model, pos);
    let b = mean_oracle(model, neg);
    (0..base.len()).map(|k| (a[k] - b[k]) + base[k]).collect()
}

/// Exhaustive scoring of every eligible entity followed by a stable sort on
/// descending score; ids are visited in ascending order so ties stay by id.
pub fn rank_oracle(
    model: &EmbeddingModel<f64>,
    point: &[f64],
    excluded: &HashSet<usize>,
    type_filter: Option<&str>,
    k: usize,
) -> Vec<(usize, f64)> {
    let mut all = Vec::new();
    for i in 0..model.num_entities() {
        if excluded.contains(&i) {
            continue;
        }
        if let Some(ty) = type_filter {
            if model.vocabulary.entity_type(EntityId(i)) != Some(ty) {
                continue;
            }
        }
        let r = row(model, b'h', i);
        let mut s = 0.0;
        for d in 0..r.len() {
            s += r[d] * point[d];
        }
        all.push((i, s));
    }
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    all.truncate(k);
    all
}

/// Pessimistic filtered rank by building and sorting the full candidate list.
pub fn filtered_rank_oracle(
    model: &EmbeddingModel<f64>,
    test: &Triple,
    known: &HashSet<Triple>,
    replace_tail: bool,
) -> usize {
    let m = model.relation_vectors.rows() / 2;
    let full = |h: usize, t: usize| {
        directed_score(model, h, t, test.relation.0) + directed_score(model, t, h, test.relation.0 + m)
    };
    let truth = full(test.head.0, test.tail.0);
    let mut rank = 1;
    for e in 0..model.num_entities() {
        let cand = if replace_tail {
            Triple::new(test.head.0, e, test.relation.0)
        } else {
            Triple::new(e, test.tail.0, test.relation.0)
        };
        if cand == *test || known.contains(&cand) {
            continue;
        }
        if full(cand.head.0, cand.tail.0) >= truth {
            rank += 1;
        }
    }
    rank
}

/// MRR and hits@{1,3,10} from the rank oracle.
pub fn metrics_oracle(
    model: &EmbeddingModel<f64>,
    test: &[Triple],
    known: &HashSet<Triple>,
) -> (f64, [f64; 3]) {
    let mut ranks = Vec::new();
    for t in test {
        ranks.push(filtered_rank_oracle(model, t, known, true));
        ranks.push(filtered_rank_oracle(model, t, known, false));
    }
    let n = ranks.len() as f64;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    let hits = [1, 3, 10].map(|k| ranks.iter().filter(|&&r| r <= k).count() as f64 / n);
    (mrr, hits)
}
