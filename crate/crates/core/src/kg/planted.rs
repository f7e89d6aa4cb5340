//! Planted-structure synthetic graphs.
//!
//! Entities are partitioned into clusters of unequal size. Each relation
//! maps every source cluster to a target cluster; a triple `(h, r, t)`
//! draws `t` from the target cluster of `h`'s cluster under `r`.
//! Within a cluster, members are drawn with Zipf weights `1 / rank^s` over a
//! seeded member order. Each relation draws its own exponent `s` from
//! `popularity ± popularity_spread`, so near-functional and diffuse relations
//! coexist. Heads are drawn with exponent `popularity`.
//! Queries into large clusters are therefore harder than queries into
//! small ones, which gives pruning something to adapt to.

use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{KnowledgeGraph, Triple};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub num_entities: usize,
    pub num_relations: usize,
    pub num_clusters: usize,
    /// Ratio between the largest and smallest cluster weight.
    pub size_ratio: f64,
    /// Zipf exponent of member weights within a cluster; 0 is uniform.
    pub popularity: f64,
    /// Half-width of the per-relation exponent range, floored at 0.
    pub popularity_spread: f64,
    /// Probability that a triple's tail is drawn from all entities.
    pub noise: f64,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            num_entities: 200,
            num_relations: 8,
            num_clusters: 20,
            size_ratio: 8.0,
            popularity: 1.5,
            popularity_spread: 0.0,
            noise: 0.0,
            train: 2000,
            dev: 200,
            test: 200,
            seed: 0,
        }
    }
}

impl PlantedConfig {
    pub fn generate(&self) -> Result<KnowledgeGraph> {
        if self.num_clusters == 0 || self.num_clusters > self.num_entities {
            return Err(Error::Config(format!(
                "need 1..={} clusters, got {}",
                self.num_entities, self.num_clusters
            )));
        }
        if self.num_relations == 0 {
            return Err(Error::Config("need at least one relation".into()));
        }
        if !(self.popularity >= 0.0 && self.popularity.is_finite()) {
            return Err(Error::Config(format!("popularity {} must be >= 0", self.popularity)));
        }
        if !(self.popularity_spread >= 0.0 && self.popularity_spread.is_finite()) {
            return Err(Error::Config(format!(
                "popularity_spread {} must be >= 0",
                self.popularity_spread
            )));
        }
        let mut rng = rng::seeded(self.seed);

        // Geometric cluster weights from 1 to size_ratio, every cluster non-empty.
        let k = self.num_clusters;
        let weights: Vec<f64> = (0..k)
            .map(|c| {
                let frac = if k == 1 { 0.0 } else { c as f64 / (k - 1) as f64 };
                self.size_ratio.max(1.0).powf(frac)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let spare = self.num_entities - k;
        let mut sizes: Vec<usize> = weights
            .iter()
            .map(|w| 1 + (w / total * spare as f64).floor() as usize)
            .collect();
        let mut assigned: usize = sizes.iter().sum();
        let mut c = k;
        while assigned < self.num_entities {
            c = if c == 0 { k - 1 } else { c - 1 };
            sizes[c] += 1;
            assigned += 1;
        }

        // Member order within a cluster is its popularity order.
        let mut order: Vec<u32> = (0..self.num_entities as u32).collect();
        order.shuffle(&mut rng);
        let mut members: Vec<Vec<u32>> = Vec::with_capacity(k);
        let mut cluster_of = vec![0usize; self.num_entities];
        let mut position = vec![0usize; self.num_entities];
        let mut start = 0;
        for (ci, &size) in sizes.iter().enumerate() {
            let m = order[start..start + size].to_vec();
            for (j, &e) in m.iter().enumerate() {
                cluster_of[e as usize] = ci;
                position[e as usize] = j + 1;
            }
            members.push(m);
            start += size;
        }
        let zipf = |e: u32, s: f64| (position[e as usize] as f64).powf(-s);
        let head_dist =
            WeightedIndex::new((0..self.num_entities as u32).map(|e| zipf(e, self.popularity))).unwrap();

        let targets: Vec<Vec<usize>> = (0..self.num_relations)
            .map(|_| (0..k).map(|_| rng.gen_range(0..k)).collect())
            .collect();

        let exponents: Vec<f64> = (0..self.num_relations)
            .map(|_| {
                let lo = (self.popularity - self.popularity_spread).max(0.0);
                let hi = self.popularity + self.popularity_spread;
                if hi > lo {
                    rng.gen_range(lo..=hi)
                } else {
                    lo
                }
            })
            .collect();
        // member_dist[r][c]: tail distribution over cluster c under relation r
        let member_dist: Vec<Vec<WeightedIndex<f64>>> = exponents
            .iter()
            .map(|&s| {
                members
                    .iter()
                    .map(|m| WeightedIndex::new(m.iter().map(|&e| zipf(e, s))).unwrap())
                    .collect()
            })
            .collect();

        let wanted = self.train + self.dev + self.test;
        let capacity: usize = targets
            .iter()
            .map(|t| {
                (0..self.num_entities)
                    .map(|h| members[t[cluster_of[h]]].len())
                    .sum::<usize>()
            })
            .sum();
        if wanted > capacity / 2 {
            return Err(Error::Config(format!(
                "{wanted} triples requested but the planted structure only admits {capacity}"
            )));
        }

        let mut seen = HashSet::with_capacity(wanted);
        let mut triples = Vec::with_capacity(wanted);
        let mut attempts = 0usize;
        while triples.len() < wanted {
            attempts += 1;
            if attempts > 1000 * wanted.max(1) {
                return Err(Error::Config(format!(
                    "only {} distinct triples found for {wanted} requested; lower popularity or the triple counts",
                    triples.len()
                )));
            }
            let r = rng.gen_range(0..self.num_relations);
            let h = head_dist.sample(&mut rng);
            let t = if rng.gen::<f64>() < self.noise {
                rng.gen_range(0..self.num_entities as u32)
            } else {
                let c = targets[r][cluster_of[h]];
                members[c][member_dist[r][c].sample(&mut rng)]
            };
            let triple = Triple::new(h as u32, r as u32, t);
            if seen.insert(triple) {
                triples.push(triple);
            }
        }
        let test = triples.split_off(self.train + self.dev);
        let dev = triples.split_off(self.train);

        let entities = (0..self.num_entities).map(|i| format!("e{i}")).collect();
        let meta = (0..self.num_entities)
            .map(|i| Some(format!("entity {i} of cluster {}", cluster_of[i])))
            .collect();
        let relations = (0..self.num_relations).map(|i| format!("r{i}")).collect();
        KnowledgeGraph::new(entities, meta, relations, triples, dev, test)
    }
}
