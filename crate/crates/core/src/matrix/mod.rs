//! Dense query × entity score matrices.
//!
//! Row `i` holds one query's scores for every entity; column `j` is entity
//! `j`. Values are `f32`, matching the on-disk format, so a matrix survives
//! save/load bit for bit.

mod cost;
mod io;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{Query, QueryKey};

pub use cost::{cascade_cost, CostModel, ScorerCost};
pub use io::{load_matrix, load_matrix_for, read_matrix, save_matrix, write_matrix, FORMAT_VERSION, MAGIC};
pub use synth::{synthesize_scorer, synthesize_scorer_for};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleTag {
    Raw,
    Normalized,
}

impl ScaleTag {
    pub(crate) fn to_byte(self) -> u8 {
        match self {
            ScaleTag::Raw => 0,
            ScaleTag::Normalized => 1,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(ScaleTag::Raw),
            1 => Some(ScaleTag::Normalized),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    values: Vec<f32>,
    num_entities: usize,
    keys: Vec<QueryKey>,
    scale: ScaleTag,
}

impl ScoreMatrix {
    pub fn new(values: Vec<f32>, num_entities: usize, keys: Vec<QueryKey>, scale: ScaleTag) -> Result<Self> {
        if values.len() != keys.len() * num_entities {
            return Err(Error::Alignment(format!(
                "{} values for {} rows x {} entities",
                values.len(),
                keys.len(),
                num_entities
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "score at row {}, column {}",
                pos / num_entities.max(1),
                pos % num_entities.max(1)
            )));
        }
        Ok(Self {
            values,
            num_entities,
            keys,
            scale,
        })
    }

    /// Builds a matrix row by row; `f` fills one row given its key.
    pub(crate) fn from_rows<F>(keys: Vec<QueryKey>, num_entities: usize, scale: ScaleTag, f: F) -> Result<Self>
    where
        F: Fn(usize, &QueryKey, &mut [f32]) + Sync,
    {
        use rayon::prelude::*;
        let mut values = vec![0f32; keys.len() * num_entities];
        if num_entities > 0 {
            values
                .par_chunks_mut(num_entities)
                .enumerate()
                .for_each(|(i, row)| f(i, &keys[i], row));
        }
        Self::new(values, num_entities, keys, scale)
    }

    pub fn num_queries(&self) -> usize {
        self.keys.len()
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn keys(&self) -> &[QueryKey] {
        &self.keys
    }

    pub fn scale(&self) -> ScaleTag {
        self.scale
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Mutable access for in-place updates. Callers are responsible for
    /// keeping values finite; [`save_matrix`] re-checks.
    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.num_entities..(i + 1) * self.num_entities]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.values[i * self.num_entities..(i + 1) * self.num_entities]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.num_entities.max(1)).take(self.keys.len())
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.num_entities + j]
    }

    pub(crate) fn with_values(&self, values: Vec<f32>, scale: ScaleTag) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            values,
            num_entities: self.num_entities,
            keys: self.keys.clone(),
            scale,
        }
    }

    /// Errors unless rows correspond one-to-one with `queries`.
    pub fn check_aligned(&self, queries: &[Query]) -> Result<()> {
        if queries.len() != self.keys.len() {
            return Err(Error::Alignment(format!(
                "matrix has {} rows but {} queries were given",
                self.keys.len(),
                queries.len()
            )));
        }
        if let Some(i) = queries.iter().zip(&self.keys).position(|(q, k)| q.key() != *k) {
            return Err(Error::Alignment(format!("row {i} key differs from query {i}")));
        }
        Ok(())
    }

    /// Errors unless both matrices have identical shape and row keys.
    pub fn check_same_layout(&self, other: &ScoreMatrix) -> Result<()> {
        if self.num_entities != other.num_entities || self.keys.len() != other.keys.len() {
            return Err(Error::Alignment(format!(
                "{}x{} vs {}x{}",
                self.keys.len(),
                self.num_entities,
                other.keys.len(),
                other.num_entities
            )));
        }
        if let Some(i) = self.keys.iter().zip(&other.keys).position(|(a, b)| a != b) {
            return Err(Error::Alignment(format!("row {i} keys differ")));
        }
        Ok(())
    }

    pub fn require_normalized(&self) -> Result<()> {
        if self.scale != ScaleTag::Normalized {
            return Err(Error::Config("score matrix must be normalized per query".into()));
        }
        Ok(())
    }
}

/// Min-max scales every row to `[0, 1]`; constant rows become all `0.5`.
pub fn normalize_per_query(m: &ScoreMatrix) -> ScoreMatrix {
    let mut values = m.values.clone();
    if m.num_entities > 0 {
        for row in values.chunks_exact_mut(m.num_entities) {
            normalize_row(row);
        }
    }
    m.with_values(values, ScaleTag::Normalized)
}

fn normalize_row(row: &mut [f32]) {
    let (lo, hi) = row
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi > lo {
        let (lo, span) = (lo as f64, hi as f64 - lo as f64);
        for v in row.iter_mut() {
            *v = ((*v as f64 - lo) / span) as f32;
        }
    } else {
        row.fill(0.5);
    }
}
