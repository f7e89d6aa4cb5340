//! Multi-relational graph datasets, link-prediction queries and the
//! filtered-evaluation index.
//!
//! Entity and relation ids are dense and follow the line order of the map
//! files, so every score matrix column `j` is entity `j`.

mod io;
pub mod planted;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_dataset, save_dataset};

pub type EntityId = u32;
pub type RelationId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" | "valid" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Which slot of the triple a query leaves open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `(h, r, ?)`
    Tail,
    /// `(?, r, t)`
    Head,
}

impl Direction {
    pub fn to_byte(self) -> u8 {
        match self {
            Direction::Tail => 0,
            Direction::Head => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Direction::Tail),
            1 => Some(Direction::Head),
            _ => None,
        }
    }
}

/// Row identity of a score matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryKey {
    pub direction: Direction,
    pub anchor: EntityId,
    pub relation: RelationId,
    pub gold: EntityId,
}

impl QueryKey {
    /// The full triple obtained by putting `candidate` into the open slot.
    pub fn complete(&self, candidate: EntityId) -> Triple {
        match self.direction {
            Direction::Tail => Triple::new(self.anchor, self.relation, candidate),
            Direction::Head => Triple::new(candidate, self.relation, self.anchor),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub direction: Direction,
    pub anchor: EntityId,
    pub relation: RelationId,
    pub gold: EntityId,
    pub split: Split,
}

impl Query {
    pub fn key(&self) -> QueryKey {
        QueryKey {
            direction: self.direction,
            anchor: self.anchor,
            relation: self.relation,
            gold: self.gold,
        }
    }

    pub fn from_key(key: QueryKey, split: Split) -> Self {
        Self {
            direction: key.direction,
            anchor: key.anchor,
            relation: key.relation,
            gold: key.gold,
            split,
        }
    }
}

/// Validated, immutable knowledge graph.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    entities: Vec<String>,
    entity_meta: Vec<Option<String>>,
    relations: Vec<String>,
    train: Vec<Triple>,
    dev: Vec<Triple>,
    test: Vec<Triple>,
}

impl KnowledgeGraph {
    /// Builds a graph and checks id ranges, per-split uniqueness and
    /// cross-split disjointness.
    pub fn new(
        entities: Vec<String>,
        entity_meta: Vec<Option<String>>,
        relations: Vec<String>,
        train: Vec<Triple>,
        dev: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        if entity_meta.len() != entities.len() {
            return Err(Error::Validation(format!(
                "{} entity descriptions for {} entities",
                entity_meta.len(),
                entities.len()
            )));
        }
        check_unique_labels("entity", &entities)?;
        check_unique_labels("relation", &relations)?;
        if train.is_empty() {
            return Err(Error::Validation("train split is empty".into()));
        }

        let kg = Self {
            entities,
            entity_meta,
            relations,
            train,
            dev,
            test,
        };
        let mut seen: HashMap<Triple, Split> = HashMap::new();
        for split in Split::ALL {
            for (i, t) in kg.split(split).iter().enumerate() {
                if t.head as usize >= kg.num_entities() || t.tail as usize >= kg.num_entities() {
                    return Err(Error::Validation(format!(
                        "{} triple {i}: entity id out of range (|E| = {})",
                        split.name(),
                        kg.num_entities()
                    )));
                }
                if t.relation as usize >= kg.num_relations() {
                    return Err(Error::Validation(format!(
                        "{} triple {i}: relation id {} out of range (|R| = {})",
                        split.name(),
                        t.relation,
                        kg.num_relations()
                    )));
                }
                if let Some(prev) = seen.insert(*t, split) {
                    let what = if prev == split {
                        format!("duplicate triple in {}", split.name())
                    } else {
                        format!("triple shared by {} and {}", prev.name(), split.name())
                    };
                    return Err(Error::Validation(format!(
                        "{what}: ({}, {}, {})",
                        kg.entities[t.head as usize],
                        kg.relations[t.relation as usize],
                        kg.entities[t.tail as usize]
                    )));
                }
            }
        }
        Ok(kg)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entity_label(&self, id: EntityId) -> &str {
        &self.entities[id as usize]
    }

    pub fn entity_description(&self, id: EntityId) -> Option<&str> {
        self.entity_meta[id as usize].as_deref()
    }

    pub fn relation_label(&self, id: RelationId) -> &str {
        &self.relations[id as usize]
    }

    pub fn entity_labels(&self) -> &[String] {
        &self.entities
    }

    pub fn relation_labels(&self) -> &[String] {
        &self.relations
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn all_triples(&self) -> impl Iterator<Item = &Triple> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            entities: self.num_entities(),
            relations: self.num_relations(),
            train: self.train.len(),
            dev: self.dev.len(),
            test: self.test.len(),
        }
    }
}

fn check_unique_labels(kind: &str, labels: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(labels.len());
    for (i, l) in labels.iter().enumerate() {
        if !seen.insert(l.as_str()) {
            return Err(Error::Validation(format!(
                "duplicate {kind} label `{l}` at id {i}"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl std::fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "|E|    {}", self.entities)?;
        writeln!(f, "|R|    {}", self.relations)?;
        writeln!(f, "train  {}", self.train)?;
        writeln!(f, "dev    {}", self.dev)?;
        write!(f, "test   {}", self.test)
    }
}

/// Two queries per triple, tail-prediction first, in split order.
pub fn build_queries(kg: &KnowledgeGraph, split: Split) -> Vec<Query> {
    let mut out = Vec::with_capacity(2 * kg.split(split).len());
    for t in kg.split(split) {
        out.push(Query {
            direction: Direction::Tail,
            anchor: t.head,
            relation: t.relation,
            gold: t.tail,
            split,
        });
        out.push(Query {
            direction: Direction::Head,
            anchor: t.tail,
            relation: t.relation,
            gold: t.head,
            split,
        });
    }
    out
}

/// Known true answers per `(anchor, relation, direction)` over all splits.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    answers: HashMap<(EntityId, RelationId, Direction), Vec<EntityId>>,
}

impl FilterIndex {
    /// Sorted known answers; empty when the key never occurs.
    pub fn answers(&self, anchor: EntityId, relation: RelationId, dir: Direction) -> &[EntityId] {
        self.answers
            .get(&(anchor, relation, dir))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn answers_for(&self, key: &QueryKey) -> &[EntityId] {
        self.answers(key.anchor, key.relation, key.direction)
    }

    pub fn contains(&self, key: &QueryKey, entity: EntityId) -> bool {
        self.answers_for(key).binary_search(&entity).is_ok()
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

pub fn build_filter_index(kg: &KnowledgeGraph) -> FilterIndex {
    let mut answers: HashMap<_, Vec<EntityId>> = HashMap::new();
    for t in kg.all_triples() {
        answers
            .entry((t.head, t.relation, Direction::Tail))
            .or_default()
            .push(t.tail);
        answers
            .entry((t.tail, t.relation, Direction::Head))
            .or_default()
            .push(t.head);
    }
    for v in answers.values_mut() {
        v.sort_unstable();
        v.dedup();
    }
    FilterIndex { answers }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn labels(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn toy(train: Vec<Triple>) -> Result<KnowledgeGraph> {
        KnowledgeGraph::new(
            labels("e", 3),
            vec![None; 3],
            labels("r", 1),
            train,
            vec![],
            vec![],
        )
    }

    #[test]
    fn toy_graph_counts() {
        let kg = toy(vec![Triple::new(0, 0, 1), Triple::new(1, 0, 2)]).unwrap();
        assert_eq!(kg.num_entities(), 3);
        assert_eq!(kg.num_relations(), 1);
        assert_eq!(kg.split(Split::Train).len(), 2);
        assert!(kg.split(Split::Dev).is_empty());
    }

    #[test]
    fn rejects_empty_train() {
        assert!(matches!(toy(vec![]), Err(Error::Validation(_))));
    }

    #[test]
    fn rejects_out_of_range_and_duplicates() {
        assert!(toy(vec![Triple::new(0, 0, 3)]).is_err());
        assert!(toy(vec![Triple::new(0, 1, 2)]).is_err());
        assert!(toy(vec![Triple::new(0, 0, 1), Triple::new(0, 0, 1)]).is_err());
        let cross = KnowledgeGraph::new(
            labels("e", 3),
            vec![None; 3],
            labels("r", 1),
            vec![Triple::new(0, 0, 1)],
            vec![Triple::new(0, 0, 1)],
            vec![],
        );
        assert!(matches!(cross, Err(Error::Validation(m)) if m.contains("shared")));
    }

    #[test]
    fn queries_follow_triple_order() {
        let kg = toy(vec![Triple::new(0, 0, 1)]).unwrap();
        let qs = build_queries(&kg, Split::Train);
        assert_eq!(qs.len(), 2);
        assert_eq!(
            (qs[0].direction, qs[0].anchor, qs[0].relation, qs[0].gold),
            (Direction::Tail, 0, 0, 1)
        );
        assert_eq!(
            (qs[1].direction, qs[1].anchor, qs[1].relation, qs[1].gold),
            (Direction::Head, 1, 0, 0)
        );
        assert!(build_queries(&kg, Split::Dev).is_empty());
    }

    #[test]
    fn filter_groups_answers() {
        let kg = toy(vec![Triple::new(0, 0, 1), Triple::new(0, 0, 2)]).unwrap();
        let f = build_filter_index(&kg);
        assert_eq!(f.answers(0, 0, Direction::Tail), &[1, 2]);
        assert_eq!(f.answers(1, 0, Direction::Head), &[0]);
        assert!(f.answers(2, 0, Direction::Tail).is_empty());
    }

    #[test]
    fn single_triple_filter_sets_are_singletons() {
        let kg = toy(vec![Triple::new(2, 0, 1)]).unwrap();
        let f = build_filter_index(&kg);
        for q in build_queries(&kg, Split::Train) {
            assert_eq!(f.answers_for(&q.key()), &[q.gold]);
        }
    }

    #[test]
    fn gold_always_in_filter_set_random_graph() {
        let mut rng = crate::rng::seeded(5);
        let mut triples = HashSet::new();
        while triples.len() < 50 {
            triples.insert(Triple::new(rng.gen_range(0..12), rng.gen_range(0..3), rng.gen_range(0..12)));
        }
        let mut all: Vec<_> = triples.into_iter().collect();
        all.sort();
        let test = all.split_off(40);
        let dev = all.split_off(30);
        let kg = KnowledgeGraph::new(labels("e", 12), vec![None; 12], labels("r", 3), all, dev, test)
            .unwrap();
        let f = build_filter_index(&kg);
        for split in Split::ALL {
            let qs = build_queries(&kg, split);
            assert_eq!(qs.len(), 2 * kg.split(split).len());
            for q in qs {
                assert!(f.contains(&q.key(), q.gold));
            }
        }
    }
}
