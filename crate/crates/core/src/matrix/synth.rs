//! Synthetic higher-tier scorers with controllable fidelity.
//!
//! Every query has a latent utility per candidate: the gold answer sits at
//! 1.0, every other candidate is drawn from `[0, 0.8)`. A scorer observes
//! `fidelity * utility + (1 - fidelity) * amplitude * noise`, where `noise`
//! is uniform on `[0, 1)` and seeded, and `amplitude` is a per-query
//! difficulty shared by every synthetic scorer. Latent utilities and
//! difficulties depend only on the query, so two scorers with different
//! seeds disagree through their noise alone.

use rand::Rng;

use super::{ScaleTag, ScoreMatrix};
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Query, QueryKey};
use crate::rng;

const LATENT_SALT: u64 = 0x5EED_1A7E_0000_0001;
const NEGATIVE_CEILING: f64 = 0.8;
const MIN_AMPLITUDE: f64 = 0.2;
const MAX_AMPLITUDE: f64 = 3.0;

fn key_hash(k: &QueryKey) -> u64 {
    rng::hash_words(&[
        k.direction.to_byte() as u64,
        k.anchor as u64,
        k.relation as u64,
        k.gold as u64,
    ])
}

pub fn synthesize_scorer(kg: &KnowledgeGraph, queries: &[Query], fidelity: f64, seed: u64) -> Result<ScoreMatrix> {
    let keys = queries.iter().map(Query::key).collect();
    synthesize_scorer_for(keys, kg.num_entities(), fidelity, seed)
}

pub fn synthesize_scorer_for(keys: Vec<QueryKey>, num_entities: usize, fidelity: f64, seed: u64) -> Result<ScoreMatrix> {
    if !(0.0..=1.0).contains(&fidelity) {
        return Err(Error::Config(format!("fidelity {fidelity} outside [0, 1]")));
    }
    if let Some(k) = keys.iter().find(|k| k.gold as usize >= num_entities) {
        return Err(Error::Alignment(format!("gold {} out of range", k.gold)));
    }
    ScoreMatrix::from_rows(keys, num_entities, ScaleTag::Raw, |_, key, row| {
        let h = key_hash(key);
        let mut latent = rng::stream(LATENT_SALT, h);
        let mut noise = rng::stream(seed, rng::mix64(h));
        let v: f64 = latent.gen();
        let amplitude = MIN_AMPLITUDE + (MAX_AMPLITUDE - MIN_AMPLITUDE) * v * v;
        for (j, out) in row.iter_mut().enumerate() {
            // Gold consumes a draw as well, so columns stay aligned with the stream.
            let draw: f64 = latent.gen();
            let u = if j == key.gold as usize { 1.0 } else { NEGATIVE_CEILING * draw };
            let n: f64 = noise.gen();
            *out = (fidelity * u + (1.0 - fidelity) * amplitude * n) as f32;
        }
    })
}
