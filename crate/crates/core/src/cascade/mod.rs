//! Tiered cascades.
//!
//! Tier 1 scores every (query, entity) pair. At each boundary a pruner picks
//! the candidates that progress. The next tier scores only those, and each
//! progressed score becomes `alpha * running + (1 - alpha) * next`. Every
//! other candidate keeps its running score.

mod fit;
mod regressor;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use fit::{fit_cascade, BoundaryFit, FittedCascade};
pub use regressor::{
    feature_dim, load_regressor, pinball_loss, read_regressor, save_regressor, sorted_features,
    train_rank_regressor, write_regressor, QuantileRegressor, RegressorHyper, RegressorReport, REGRESSOR_VERSION,
    COMPRESSED_FEATURES, FULL_ROW_LIMIT,
};

use crate::ensemble::{blend, check_alpha, default_alpha_grid};
use crate::error::{Error, Result};
use crate::kg::{Direction, Query};
use crate::matrix::{CostModel, ScaleTag, ScoreMatrix};

/// How a boundary chooses the candidates that progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Pruning {
    /// Every candidate progresses.
    None,
    /// `k = 0` progresses nothing.
    Static { k: usize },
    /// `k` is the nearest-rank `q`-quantile of dev gold ranks at this boundary.
    StaticQuantile { q: f64 },
    /// Per-query depth from a rank regressor trained at quantile `q`.
    Dynamic {
        q: f64,
        #[serde(default)]
        per_direction: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConfig {
    pub pruning: Pruning,
    /// Tuned on dev when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    /// Scorer ids, cheapest first.
    pub tiers: Vec<String>,
    pub boundaries: Vec<BoundaryConfig>,
    #[serde(default)]
    pub regressor: RegressorHyper,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tiers.is_empty() {
            return Err(Error::Config("cascade needs at least one tier".into()));
        }
        if self.boundaries.len() + 1 != self.tiers.len() {
            return Err(Error::Config(format!(
                "{} tiers need {} boundaries, got {}",
                self.tiers.len(),
                self.tiers.len() - 1,
                self.boundaries.len()
            )));
        }
        for b in &self.boundaries {
            if let Some(a) = b.alpha {
                check_alpha(a)?;
            }
            match b.pruning {
                Pruning::StaticQuantile { q } if !(q > 0.0 && q <= 1.0) => {
                    return Err(Error::Config(format!("quantile {q} outside (0, 1]")))
                }
                Pruning::Dynamic { q, .. } if !(q > 0.0 && q < 1.0) => {
                    return Err(Error::Config(format!("quantile {q} outside (0, 1)")))
                }
                _ => {}
            }
        }
        self.alpha_grid.iter().try_for_each(|&a| check_alpha(a))
    }
}

/// Progressed entity ids per query, each list sorted by descending running
/// score with ties broken toward the lower id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CandidateSets {
    sets: Vec<Vec<u32>>,
}

impl CandidateSets {
    pub fn new(sets: Vec<Vec<u32>>) -> Self {
        Self { sets }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn get(&self, i: usize) -> &[u32] {
        &self.sets[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> {
        self.sets.iter().map(Vec::as_slice)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.sets.iter().map(Vec::len).collect()
    }

    /// Total (query, entity) pairs the next tier must score.
    pub fn pairs(&self) -> u64 {
        self.sets.iter().map(|s| s.len() as u64).sum()
    }
}

/// The `k` best entities of one row.
pub(crate) fn top_k(row: &[f32], k: usize) -> Vec<u32> {
    let by_score = |a: &u32, b: &u32| row[*b as usize].total_cmp(&row[*a as usize]).then(a.cmp(b));
    let mut ids: Vec<u32> = (0..row.len() as u32).collect();
    let k = k.min(ids.len());
    if k == 0 {
        return Vec::new();
    }
    if k < ids.len() {
        ids.select_nth_unstable_by(k - 1, by_score);
        ids.truncate(k);
    }
    ids.sort_unstable_by(by_score);
    ids
}

pub fn static_prune(m: &ScoreMatrix, k: usize) -> Result<CandidateSets> {
    if k > m.num_entities() {
        return Err(Error::Config(format!(
            "static k = {k} outside [0, {}]",
            m.num_entities()
        )));
    }
    let sets = (0..m.num_queries())
        .into_par_iter()
        .map(|i| top_k(m.row(i), k))
        .collect();
    Ok(CandidateSets::new(sets))
}

/// Nearest-rank `q`-quantile of `ranks`, rounded up to an integer `>= 1`.
pub fn select_k_from_quantile(ranks: &[f64], q: f64) -> Result<usize> {
    if ranks.is_empty() {
        return Err(Error::Undefined("quantile of zero ranks".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Config(format!("quantile {q} outside (0, 1]")));
    }
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let pos = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    Ok((sorted[pos].ceil() as usize).max(1))
}

/// Per-query depth model for dynamic pruning.
#[derive(Debug, Clone, PartialEq)]
pub enum DepthModel {
    Shared(QuantileRegressor),
    PerDirection {
        tail: QuantileRegressor,
        head: QuantileRegressor,
    },
}

impl DepthModel {
    pub fn for_direction(&self, d: Direction) -> &QuantileRegressor {
        match (self, d) {
            (DepthModel::Shared(r), _) => r,
            (DepthModel::PerDirection { tail, .. }, Direction::Tail) => tail,
            (DepthModel::PerDirection { head, .. }, Direction::Head) => head,
        }
    }

    fn regressors(&self) -> Vec<&QuantileRegressor> {
        match self {
            DepthModel::Shared(r) => vec![r],
            DepthModel::PerDirection { tail, head } => vec![tail, head],
        }
    }
}

pub fn dynamic_prune(m: &ScoreMatrix, model: &DepthModel) -> Result<CandidateSets> {
    let expected = feature_dim(m.num_entities());
    for r in model.regressors() {
        if r.input_dim() != expected {
            return Err(Error::Alignment(format!(
                "regressor takes {} features but rows of {} entities give {expected}",
                r.input_dim(),
                m.num_entities()
            )));
        }
    }
    let sets = (0..m.num_queries())
        .into_par_iter()
        .map(|i| {
            let row = m.row(i);
            let k = model.for_direction(m.keys()[i].direction).depth(row)?;
            Ok(top_k(row, k))
        })
        .collect::<Result<_>>()?;
    Ok(CandidateSets::new(sets))
}

/// A boundary with its pruning resolved to something directly applicable.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)] // one per boundary
pub enum Pruner {
    All,
    TopK(usize),
    Dynamic(DepthModel),
}

impl Pruner {
    pub fn select(&self, m: &ScoreMatrix) -> Result<CandidateSets> {
        match self {
            Pruner::All => static_prune(m, m.num_entities()),
            Pruner::TopK(k) => static_prune(m, (*k).min(m.num_entities())),
            Pruner::Dynamic(model) => dynamic_prune(m, model),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Boundary {
    pub pruner: Pruner,
    pub alpha: f64,
}

/// A cascade ready to run: scorer ids and one resolved boundary between
/// each consecutive pair of tiers.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    pub tiers: Vec<String>,
    pub boundaries: Vec<Boundary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierCost {
    pub scorer: String,
    pub pairs: u64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub tiers: Vec<TierCost>,
    pub total_pairs: u64,
    pub total_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryStats {
    pub alpha: f64,
    pub pairs: u64,
    pub mean_depth: f64,
    pub max_depth: usize,
    /// Non-progressed candidates whose running score exceeds the lowest
    /// progressed score after reweighting, summed over queries.
    pub boundary_crossings: u64,
}

#[derive(Debug, Clone)]
pub struct CascadeOutput {
    pub scores: ScoreMatrix,
    pub cost: CostReport,
    pub boundaries: Vec<BoundaryStats>,
    pub candidates: Vec<CandidateSets>,
}

/// Reweights the progressed candidates of `running` in place and returns
/// the boundary-crossing count.
pub(crate) fn apply_boundary(
    running: &mut ScoreMatrix,
    next: &ScoreMatrix,
    sets: &CandidateSets,
    alpha: f64,
) -> u64 {
    let ne = running.num_entities();
    if ne == 0 {
        return 0;
    }
    running
        .values_mut()
        .par_chunks_mut(ne)
        .enumerate()
        .map(|(i, row)| {
            let set = sets.get(i);
            let next_row = next.row(i);
            let mut floor = f32::INFINITY;
            for &e in set {
                let e = e as usize;
                row[e] = blend(alpha, row[e], next_row[e]);
                floor = floor.min(row[e]);
            }
            if set.is_empty() || set.len() == ne {
                return 0;
            }
            let mut progressed = vec![false; ne];
            set.iter().for_each(|&e| progressed[e as usize] = true);
            row.iter()
                .zip(&progressed)
                .filter(|(&v, &p)| !p && v > floor)
                .count() as u64
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

fn check_tiers(tier_matrices: &[ScoreMatrix], queries: &[Query]) -> Result<()> {
    let first = tier_matrices
        .first()
        .ok_or_else(|| Error::Config("no tier matrices".into()))?;
    first.check_aligned(queries)?;
    for m in tier_matrices {
        m.check_same_layout(first)?;
        m.require_normalized()?;
    }
    Ok(())
}

/// Runs `cascade` over per-query normalized tier matrices aligned with
/// `queries`.
pub fn run_cascade(
    cascade: &Cascade,
    tier_matrices: &[ScoreMatrix],
    queries: &[Query],
    costs: &CostModel,
) -> Result<CascadeOutput> {
    if tier_matrices.len() != cascade.tiers.len() || cascade.boundaries.len() + 1 != cascade.tiers.len() {
        return Err(Error::Config(format!(
            "cascade has {} tiers and {} boundaries but {} matrices were given",
            cascade.tiers.len(),
            cascade.boundaries.len(),
            tier_matrices.len()
        )));
    }
    check_tiers(tier_matrices, queries)?;
    costs.validate()?;

    let mut running = tier_matrices[0].clone();
    let full_pairs = (running.num_queries() * running.num_entities()) as u64;
    let mut pairs = vec![full_pairs];
    let mut stats = Vec::new();
    let mut candidates = Vec::new();
    for (b, next) in cascade.boundaries.iter().zip(&tier_matrices[1..]) {
        check_alpha(b.alpha)?;
        let sets = b.pruner.select(&running)?;
        let crossings = apply_boundary(&mut running, next, &sets, b.alpha);
        let sizes = sets.sizes();
        stats.push(BoundaryStats {
            alpha: b.alpha,
            pairs: sets.pairs(),
            mean_depth: sets.pairs() as f64 / sizes.len().max(1) as f64,
            max_depth: sizes.into_iter().max().unwrap_or(0),
            boundary_crossings: crossings,
        });
        pairs.push(sets.pairs());
        candidates.push(sets);
    }

    let tiers: Vec<TierCost> = cascade
        .tiers
        .iter()
        .zip(&pairs)
        .map(|(s, &p)| {
            let c = costs.cost_of(s);
            TierCost {
                scorer: s.clone(),
                pairs: p,
                cost: c.setup + c.per_pair * p as f64,
            }
        })
        .collect();
    let cost = CostReport {
        total_pairs: pairs.iter().sum(),
        total_cost: tiers.iter().map(|t| t.cost).sum(),
        tiers,
    };
    let scores = running.with_values(running.values().to_vec(), ScaleTag::Normalized);
    Ok(CascadeOutput {
        scores,
        cost,
        boundaries: stats,
        candidates,
    })
}
