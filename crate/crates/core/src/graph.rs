//! Triple-file ingestion, integer-coded vocabularies and inverse-relation
//! augmentation.
//!
//! Triple files are UTF-8 with one `head<TAB>relation<TAB>tail` fact per line.
//! Lines starting with `#` and blank lines are skipped. Entity-type files use
//! `entity<TAB>type` with the same conventions.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{self, BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub usize);

/// Ids `0..M` are original relations, `M..2M` their augmented inverses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub usize);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub tail: EntityId,
    pub relation: RelationId,
}

impl Triple {
    pub fn new(head: usize, tail: usize, relation: usize) -> Self {
        Self {
            head: EntityId(head),
            tail: EntityId(tail),
            relation: RelationId(relation),
        }
    }
}

/// A triple still expressed in names, as read from a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub line: usize,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: unknown entity {name:?}")]
    UnknownEntity { line: usize, name: String },
    #[error("line {line}: unknown relation {name:?}")]
    UnknownRelation { line: usize, name: String },
    #[error("no triples")]
    NoTriples,
    #[error("graph is already augmented")]
    AlreadyAugmented,
    #[error("graph must not be augmented")]
    Augmented,
    #[error("holdout fraction {0} is outside (0, 1)")]
    BadFraction(f64),
    #[error("holdout of {requested} triples impossible: only {available} can be held out without orphaning entities or relations")]
    HoldoutTooLarge { requested: usize, available: usize },
    #[error("holdout fraction {fraction} of {total} triples selects no test triple")]
    EmptyHoldout { fraction: f64, total: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Entity and relation names with their integer ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    entity_names: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relation_names: Vec<String>,
    relation_index: HashMap<String, RelationId>,
    entity_types: BTreeMap<EntityId, String>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vocabulary from explicit name lists. Duplicate names are
    /// rejected since they would break the name/id bijection.
    pub fn from_names(
        entities: Vec<String>,
        relations: Vec<String>,
    ) -> Result<Self, String> {
        let mut vocab = Self::new();
        for name in entities {
            if vocab.entity_index.contains_key(&name) {
                return Err(format!("duplicate entity name {name:?}"));
            }
            vocab.intern_entity(&name);
        }
        for name in relations {
            if vocab.relation_index.contains_key(&name) {
                return Err(format!("duplicate relation name {name:?}"));
            }
            vocab.intern_relation(&name);
        }
        Ok(vocab)
    }

    fn intern_entity(&mut self, name: &str) -> EntityId {
        if let Some(&id) = self.entity_index.get(name) {
            return id;
        }
        let id = EntityId(self.entity_names.len());
        self.entity_names.push(name.to_owned());
        self.entity_index.insert(name.to_owned(), id);
        id
    }

    fn intern_relation(&mut self, name: &str) -> RelationId {
        if let Some(&id) = self.relation_index.get(name) {
            return id;
        }
        let id = RelationId(self.relation_names.len());
        self.relation_names.push(name.to_owned());
        self.relation_index.insert(name.to_owned(), id);
        id
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    /// Number of original (non-augmented) relations, `M`.
    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_index.get(name).copied()
    }

    pub fn entity_name(&self, id: EntityId) -> Option<&str> {
        self.entity_names.get(id.0).map(String::as_str)
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_index.get(name).copied()
    }

    /// Name of an original relation. Augmented ids resolve to `None`.
    pub fn relation_name(&self, id: RelationId) -> Option<&str> {
        self.relation_names.get(id.0).map(String::as_str)
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn entity_type(&self, id: EntityId) -> Option<&str> {
        self.entity_types.get(&id).map(String::as_str)
    }

    pub fn entity_types(&self) -> &BTreeMap<EntityId, String> {
        &self.entity_types
    }

    /// Panics if `id` is not in the vocabulary.
    pub fn set_entity_type(&mut self, id: EntityId, ty: impl Into<String>) {
        assert!(id.0 < self.entity_names.len(), "entity id {id} out of range");
        self.entity_types.insert(id, ty.into());
    }

    /// True when `id` passes an optional type filter. Untyped entities only
    /// pass the empty filter.
    pub fn matches_type(&self, id: EntityId, filter: Option<&str>) -> bool {
        match filter {
            None => true,
            Some(ty) => self.entity_type(id) == Some(ty),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    vocabulary: Vocabulary,
    triples: Vec<Triple>,
    augmented: bool,
}

/// Result of [`ingest_triples`]: the graph plus the number of dropped
/// duplicate lines.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub graph: KnowledgeGraph,
    pub duplicates: usize,
}

impl KnowledgeGraph {
    /// Builds an un-augmented graph from already-coded triples. Duplicates are
    /// removed, keeping first occurrences.
    pub fn from_triples(vocabulary: Vocabulary, triples: Vec<Triple>) -> Result<Self, GraphError> {
        let n = vocabulary.num_entities();
        let m = vocabulary.num_relations();
        let mut seen = HashSet::with_capacity(triples.len());
        let mut kept = Vec::with_capacity(triples.len());
        for t in triples {
            if t.head.0 >= n || t.tail.0 >= n || t.relation.0 >= m {
                return Err(GraphError::Parse {
                    line: 0,
                    reason: format!("triple {t:?} references ids outside the vocabulary"),
                });
            }
            if seen.insert(t) {
                kept.push(t);
            }
        }
        if kept.is_empty() {
            return Err(GraphError::NoTriples);
        }
        Ok(Self {
            vocabulary,
            triples: kept,
            augmented: false,
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn vocabulary_mut(&mut self) -> &mut Vocabulary {
        &mut self.vocabulary
    }

    /// All triples; after augmentation the inverses follow the originals.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn original_triples(&self) -> &[Triple] {
        if self.augmented {
            &self.triples[..self.triples.len() / 2]
        } else {
            &self.triples
        }
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    pub fn num_entities(&self) -> usize {
        self.vocabulary.num_entities()
    }

    /// Size of the relation id space: `M` before augmentation, `2M` after.
    pub fn num_relations_total(&self) -> usize {
        let m = self.vocabulary.num_relations();
        if self.augmented {
            2 * m
        } else {
            m
        }
    }

    /// Writes the original triples back out in triple-file format.
    pub fn write_triples<W: Write>(&self, mut out: W) -> io::Result<()> {
        let v = &self.vocabulary;
        for t in self.original_triples() {
            writeln!(
                out,
                "{}\t{}\t{}",
                v.entity_names[t.head.0], v.relation_names[t.relation.0], v.entity_names[t.tail.0]
            )?;
        }
        Ok(())
    }

    /// Writes the entity-type map in entity-type file format, ordered by id.
    pub fn write_entity_types<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (id, ty) in &self.vocabulary.entity_types {
            writeln!(out, "{}\t{}", self.vocabulary.entity_names[id.0], ty)?;
        }
        Ok(())
    }
}

fn is_skipped(line: &str) -> bool {
    line.is_empty() || line.starts_with('#')
}

fn split_fields(line: &str, lineno: usize, expected: usize) -> Result<Vec<&str>, GraphError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != expected {
        return Err(GraphError::Parse {
            line: lineno,
            reason: format!("expected {expected} tab-separated fields, found {}", fields.len()),
        });
    }
    if let Some(pos) = fields.iter().position(|f| f.is_empty()) {
        return Err(GraphError::Parse {
            line: lineno,
            reason: format!("field {} is empty", pos + 1),
        });
    }
    Ok(fields)
}

/// Parses triple lines without assigning ids. Line numbers are 1-based.
pub fn read_named_triples<R: BufRead>(source: R) -> Result<Vec<NamedTriple>, GraphError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if is_skipped(&line) {
            continue;
        }
        let f = split_fields(&line, lineno, 3)?;
        out.push(NamedTriple {
            head: f[0].to_owned(),
            relation: f[1].to_owned(),
            tail: f[2].to_owned(),
            line: lineno,
        });
    }
    Ok(out)
}

/// Reads a triple file into an un-augmented graph. Ids follow first
/// appearance; duplicate facts are dropped and counted.
pub fn ingest_triples<R: BufRead>(source: R) -> Result<Ingested, GraphError> {
    let named = read_named_triples(source)?;
    let mut vocabulary = Vocabulary::new();
    let mut seen = HashSet::with_capacity(named.len());
    let mut triples = Vec::with_capacity(named.len());
    let mut duplicates = 0;
    for nt in &named {
        let head = vocabulary.intern_entity(&nt.head);
        let relation = vocabulary.intern_relation(&nt.relation);
        let tail = vocabulary.intern_entity(&nt.tail);
        let t = Triple { head, tail, relation };
        if seen.insert(t) {
            triples.push(t);
        } else {
            duplicates += 1;
        }
    }
    if triples.is_empty() {
        return Err(GraphError::NoTriples);
    }
    Ok(Ingested {
        graph: KnowledgeGraph {
            vocabulary,
            triples,
            augmented: false,
        },
        duplicates,
    })
}

/// Tags entities with type labels. A later line for the same entity replaces
/// the earlier label.
pub fn ingest_entity_types<R: BufRead>(
    source: R,
    mut graph: KnowledgeGraph,
) -> Result<KnowledgeGraph, GraphError> {
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if is_skipped(&line) {
            continue;
        }
        let f = split_fields(&line, lineno, 2)?;
        let id = graph
            .vocabulary
            .entity_id(f[0])
            .ok_or_else(|| GraphError::UnknownEntity {
                line: lineno,
                name: f[0].to_owned(),
            })?;
        graph.vocabulary.entity_types.insert(id, f[1].to_owned());
    }
    Ok(graph)
}

/// Appends `(t, h, r + M)` for every original triple `(h, t, r)`.
pub fn augment(mut graph: KnowledgeGraph) -> Result<KnowledgeGraph, GraphError> {
    if graph.augmented {
        return Err(GraphError::AlreadyAugmented);
    }
    if graph.triples.is_empty() {
        return Err(GraphError::NoTriples);
    }
    let m = graph.vocabulary.num_relations();
    let inverses: Vec<Triple> = graph
        .triples
        .iter()
        .map(|t| Triple {
            head: t.tail,
            tail: t.head,
            relation: RelationId(t.relation.0 + m),
        })
        .collect();
    graph.triples.extend(inverses);
    graph.augmented = true;
    Ok(graph)
}

/// Moves a seeded random `round(fraction * |triples|)` subset of triples into
/// a test list. A candidate is skipped when removing it would leave one of its
/// entities or its relation without any training triple.
pub fn split_holdout(
    graph: &KnowledgeGraph,
    fraction: f64,
    seed: u64,
) -> Result<(KnowledgeGraph, Vec<Triple>), GraphError> {
    if graph.augmented {
        return Err(GraphError::Augmented);
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(GraphError::BadFraction(fraction));
    }
    let total = graph.triples.len();
    let wanted = (fraction * total as f64).round() as usize;
    if wanted == 0 {
        return Err(GraphError::EmptyHoldout { fraction, total });
    }

    let mut entity_uses = vec![0usize; graph.num_entities()];
    let mut relation_uses = vec![0usize; graph.vocabulary.num_relations()];
    for t in &graph.triples {
        entity_uses[t.head.0] += 1;
        entity_uses[t.tail.0] += 1;
        relation_uses[t.relation.0] += 1;
    }

    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut held = vec![false; total];
    let mut picked = 0;
    for &i in &order {
        if picked == wanted {
            break;
        }
        let t = graph.triples[i];
        let (h, tl, r) = (t.head.0, t.tail.0, t.relation.0);
        // a self-loop uses its entity twice
        let keeps_entities = if h == tl {
            entity_uses[h] > 2
        } else {
            entity_uses[h] > 1 && entity_uses[tl] > 1
        };
        if keeps_entities && relation_uses[r] > 1 {
            entity_uses[h] -= 1;
            entity_uses[tl] -= 1;
            relation_uses[r] -= 1;
            held[i] = true;
            picked += 1;
        }
    }
    if picked < wanted {
        return Err(GraphError::HoldoutTooLarge {
            requested: wanted,
            available: picked,
        });
    }

    let mut train = Vec::with_capacity(total - picked);
    let mut test = Vec::with_capacity(picked);
    for (t, &is_test) in graph.triples.iter().zip(&held) {
        if is_test {
            test.push(*t);
        } else {
            train.push(*t);
        }
    }
    Ok((
        KnowledgeGraph {
            vocabulary: graph.vocabulary.clone(),
            triples: train,
            augmented: false,
        },
        test,
    ))
}

/// Resolves named triples against an existing vocabulary.
pub fn resolve_triples(
    vocabulary: &Vocabulary,
    named: &[NamedTriple],
) -> Result<Vec<Triple>, GraphError> {
    named
        .iter()
        .map(|nt| {
            let lookup = |name: &str| {
                vocabulary
                    .entity_id(name)
                    .ok_or_else(|| GraphError::UnknownEntity {
                        line: nt.line,
                        name: name.to_owned(),
                    })
            };
            let head = lookup(&nt.head)?;
            let tail = lookup(&nt.tail)?;
            let relation =
                vocabulary
                    .relation_id(&nt.relation)
                    .ok_or_else(|| GraphError::UnknownRelation {
                        line: nt.line,
                        name: nt.relation.clone(),
                    })?;
            Ok(Triple { head, tail, relation })
        })
        .collect()
}
