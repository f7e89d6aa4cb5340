#![allow(dead_code)]

use std::collections::HashSet;

use cascade_rank::kg::{Direction, KnowledgeGraph, Query, QueryKey, Split, Triple};
use cascade_rank::matrix::{normalize_per_query, ScaleTag, ScoreMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random graph with unique triples spread over three splits.
pub fn random_kg(entities: usize, relations: usize, triples: usize, seed: u64) -> KnowledgeGraph {
    let mut rng = rng(seed);
    let mut seen = HashSet::new();
    let mut all = Vec::new();
    while all.len() < triples {
        let t = Triple::new(
            rng.gen_range(0..entities as u32),
            rng.gen_range(0..relations as u32),
            rng.gen_range(0..entities as u32),
        );
        if seen.insert(t) {
            all.push(t);
        }
    }
    let dev_at = triples / 2;
    let test_at = dev_at + (triples - dev_at) / 2;
    KnowledgeGraph::new(
        (0..entities).map(|i| format!("e{i}")).collect(),
        vec![None; entities],
        (0..relations).map(|i| format!("r{i}")).collect(),
        all[..dev_at].to_vec(),
        all[dev_at..test_at].to_vec(),
        all[test_at..].to_vec(),
    )
    .unwrap()
}

pub fn keys_for(rows: usize, entities: usize, seed: u64) -> Vec<QueryKey> {
    let mut rng = rng(seed);
    (0..rows)
        .map(|i| QueryKey {
            direction: if i % 2 == 0 { Direction::Tail } else { Direction::Head },
            anchor: rng.gen_range(0..entities as u32),
            relation: 0,
            gold: rng.gen_range(0..entities as u32),
        })
        .collect()
}

pub fn queries_for(keys: &[QueryKey]) -> Vec<Query> {
    keys.iter().map(|k| Query::from_key(*k, Split::Dev)).collect()
}

/// Normalized matrix of uniform scores, quantized so ties occur.
pub fn random_matrix(keys: &[QueryKey], entities: usize, levels: u32, seed: u64) -> ScoreMatrix {
    let mut rng = rng(seed);
    let values = (0..keys.len() * entities)
        .map(|_| rng.gen_range(0..levels) as f32 / levels as f32)
        .collect();
    let raw = ScoreMatrix::new(values, entities, keys.to_vec(), ScaleTag::Raw).unwrap();
    normalize_per_query(&raw)
}

/// Filtered rank by sorting the surviving competitors.
pub fn sort_rank(row: &[f32], gold: usize, known: &HashSet<usize>) -> f64 {
    let g = row[gold];
    let mut others: Vec<f32> = (0..row.len())
        .filter(|&j| j != gold && !known.contains(&j))
        .map(|j| row[j])
        .collect();
    others.sort_by(|a, b| b.total_cmp(a));
    let greater = others.iter().take_while(|&&v| v > g).count();
    let equal = others.iter().filter(|&&v| v == g).count();
    1.0 + greater as f64 + 0.5 * equal as f64
}

/// Known answers of a query from the raw triple list.
pub fn known_answers(kg: &KnowledgeGraph, key: &QueryKey) -> HashSet<usize> {
    kg.all_triples()
        .filter_map(|t| match key.direction {
            Direction::Tail if t.head == key.anchor && t.relation == key.relation => Some(t.tail as usize),
            Direction::Head if t.tail == key.anchor && t.relation == key.relation => Some(t.head as usize),
            _ => None,
        })
        .collect()
}

pub fn harmonic(n: usize) -> f64 {
    (1..=n).map(|i| 1.0 / i as f64).sum()
}

/// Plain two-pass Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va.sqrt() * vb.sqrt())
}
