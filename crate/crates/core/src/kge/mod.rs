//! Shallow knowledge-graph embedding scorers: the cascade's first tier.

mod checkpoint;
mod scoring;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{Direction, EntityId, Query, RelationId};
use crate::matrix::{ScaleTag, ScoreMatrix};

pub use checkpoint::{load_model, read_model, save_model, write_model, CHECKPOINT_VERSION};
pub use train::{
    batch_loss_and_grad, train_kge, Loss, ParamTables, SparseGrad, TrainConfig, TrainSample, TrainedKge,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "transe")]
    TransE,
    #[serde(rename = "complex")]
    ComplEx,
    #[serde(rename = "rescal")]
    Rescal,
    #[serde(rename = "rotate")]
    RotatE,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::TransE,
        Architecture::ComplEx,
        Architecture::Rescal,
        Architecture::RotatE,
    ];

    /// Width of one relation's parameter row for embedding dimension `dim`.
    pub fn relation_width(self, dim: usize) -> usize {
        match self {
            Architecture::TransE | Architecture::ComplEx => dim,
            Architecture::Rescal => dim * dim,
            Architecture::RotatE => dim / 2,
        }
    }

    pub fn needs_even_dim(self) -> bool {
        matches!(self, Architecture::ComplEx | Architecture::RotatE)
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Architecture::TransE => 1,
            Architecture::ComplEx => 2,
            Architecture::Rescal => 3,
            Architecture::RotatE => 4,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.tag() == tag)
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(Architecture::TransE),
            "complex" => Ok(Architecture::ComplEx),
            "rescal" => Ok(Architecture::Rescal),
            "rotate" => Ok(Architecture::RotatE),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

/// A trained (or loaded) embedding model with `f32` parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KgeModel {
    architecture: Architecture,
    dim: usize,
    num_entities: usize,
    num_relations: usize,
    entity: Vec<f32>,
    relation: Vec<f32>,
}

impl KgeModel {
    pub fn from_parts(
        architecture: Architecture,
        dim: usize,
        num_entities: usize,
        num_relations: usize,
        entity: Vec<f32>,
        relation: Vec<f32>,
    ) -> Result<Self> {
        if dim < 2 || (architecture.needs_even_dim() && !dim.is_multiple_of(2)) {
            return Err(Error::Config(format!("dimension {dim} invalid for {architecture:?}")));
        }
        if entity.len() != num_entities * dim || relation.len() != num_relations * architecture.relation_width(dim) {
            return Err(Error::Format("parameter block sizes do not match header".into()));
        }
        if entity.iter().chain(&relation).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameter".into()));
        }
        if architecture == Architecture::RotatE {
            let pi = std::f32::consts::PI;
            if relation.iter().any(|p| !(-pi..=pi).contains(p)) {
                return Err(Error::Validation("RotatE phase outside [-pi, pi]".into()));
            }
        }
        Ok(Self {
            architecture,
            dim,
            num_entities,
            num_relations,
            entity,
            relation,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn entity_embeddings(&self) -> &[f32] {
        &self.entity
    }

    pub fn relation_parameters(&self) -> &[f32] {
        &self.relation
    }

    pub fn entity(&self, e: EntityId) -> &[f32] {
        &self.entity[e as usize * self.dim..(e as usize + 1) * self.dim]
    }

    pub fn relation(&self, r: RelationId) -> &[f32] {
        let w = self.architecture.relation_width(self.dim);
        &self.relation[r as usize * w..(r as usize + 1) * w]
    }

    /// Plausibility of `(h, r, t)`; higher is more plausible.
    pub fn score_triple(&self, h: EntityId, r: RelationId, t: EntityId) -> f64 {
        scoring::score(self.architecture, self.entity(h), self.relation(r), self.entity(t))
    }

    /// Scores every entity in the open slot of every query.
    pub fn score_all(&self, queries: &[Query]) -> Result<ScoreMatrix> {
        for q in queries {
            if q.anchor as usize >= self.num_entities
                || q.gold as usize >= self.num_entities
                || q.relation as usize >= self.num_relations
            {
                return Err(Error::Alignment(format!(
                    "query ({}, {}, {:?}) outside model vocabulary",
                    q.anchor, q.relation, q.direction
                )));
            }
        }
        let keys = queries.iter().map(Query::key).collect();
        ScoreMatrix::from_rows(keys, self.num_entities, ScaleTag::Raw, |_, key, row| {
            for (j, out) in row.iter_mut().enumerate() {
                let j = j as EntityId;
                *out = match key.direction {
                    Direction::Tail => self.score_triple(key.anchor, key.relation, j),
                    Direction::Head => self.score_triple(j, key.relation, key.anchor),
                } as f32;
            }
        })
    }
}
