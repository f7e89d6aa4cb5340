//! Resolving a cascade configuration against dev data.
//!
//! Boundaries are fitted greedily in order. At boundary `t` the running dev
//! matrix already reflects boundaries `< t` with their fitted settings.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    apply_boundary, check_tiers, sorted_features, train_rank_regressor, Boundary, Cascade,
    CascadeConfig, DepthModel, Pruner, Pruning, QuantileRegressor, RegressorHyper,
    RegressorReport, select_k_from_quantile,
};
use crate::ensemble::best_of;
use crate::error::{Error, Result};
use crate::eval;
use crate::kg::{Direction, FilterIndex, Query};
use crate::matrix::ScoreMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFit {
    pub alpha: f64,
    /// `(alpha, dev mrr)` per grid point when alpha was tuned.
    pub alpha_curve: Vec<(f64, f64)>,
    /// Resolved depth for static pruning.
    pub k: Option<usize>,
    /// One report per trained regressor (tail first when per direction).
    pub regressors: Vec<RegressorReport>,
    pub dev_mrr: f64,
    pub dev_pairs: u64,
}

#[derive(Debug, Clone)]
pub struct FittedCascade {
    pub cascade: Cascade,
    pub boundaries: Vec<BoundaryFit>,
}

fn train_depth(
    running: &ScoreMatrix,
    ranks: &[f64],
    q: f64,
    per_direction: bool,
    hyper: &RegressorHyper,
) -> Result<(DepthModel, Vec<RegressorReport>)> {
    let features: Vec<Vec<f32>> = (0..running.num_queries())
        .into_par_iter()
        .map(|i| sorted_features(running.row(i)))
        .collect();
    let fit_rows = |rows: Vec<usize>, seed: u64| -> Result<(QuantileRegressor, RegressorReport)> {
        let f: Vec<Vec<f32>> = rows.iter().map(|&i| features[i].clone()).collect();
        let r: Vec<f64> = rows.iter().map(|&i| ranks[i]).collect();
        train_rank_regressor(&f, &r, q, &RegressorHyper { seed, ..hyper.clone() })
    };
    if !per_direction {
        let (m, rep) = fit_rows((0..ranks.len()).collect(), hyper.seed)?;
        return Ok((DepthModel::Shared(m), vec![rep]));
    }
    let rows_of = |d: Direction| -> Vec<usize> {
        (0..ranks.len())
            .filter(|&i| running.keys()[i].direction == d)
            .collect()
    };
    let (tail, rt) = fit_rows(rows_of(Direction::Tail), hyper.seed)?;
    let (head, rh) = fit_rows(rows_of(Direction::Head), hyper.seed.wrapping_add(1))?;
    Ok((DepthModel::PerDirection { tail, head }, vec![rt, rh]))
}

/// Resolves every boundary of `config` on dev tier matrices: static-quantile
/// depths, dynamic regressors and any missing alphas. Alpha ties go to the
/// smallest grid value.
pub fn fit_cascade(
    config: &CascadeConfig,
    dev_tiers: &[ScoreMatrix],
    dev_queries: &[Query],
    filter: &FilterIndex,
) -> Result<FittedCascade> {
    config.validate()?;
    if dev_tiers.len() != config.tiers.len() {
        return Err(Error::Config(format!(
            "{} tiers configured but {} dev matrices given",
            config.tiers.len(),
            dev_tiers.len()
        )));
    }
    check_tiers(dev_tiers, dev_queries)?;
    if config.alpha_grid.is_empty() {
        return Err(Error::Config("alpha grid is empty".into()));
    }

    let mut running = dev_tiers[0].clone();
    let mut boundaries = Vec::new();
    let mut fits = Vec::new();
    for (t, (bc, next)) in config.boundaries.iter().zip(&dev_tiers[1..]).enumerate() {
        let ranks = eval::gold_ranks(&running, filter)?;
        let mut k = None;
        let mut reports = Vec::new();
        let pruner = match &bc.pruning {
            Pruning::None => Pruner::All,
            Pruning::Static { k: kk } => {
                k = Some(*kk);
                Pruner::TopK(*kk)
            }
            Pruning::StaticQuantile { q } => {
                let kk = select_k_from_quantile(&ranks, *q)?.min(running.num_entities());
                k = Some(kk);
                Pruner::TopK(kk)
            }
            Pruning::Dynamic { q, per_direction } => {
                let hyper = RegressorHyper {
                    seed: config.regressor.seed.wrapping_add(t as u64 * 1_000),
                    ..config.regressor.clone()
                };
                let (model, reps) = train_depth(&running, &ranks, *q, *per_direction, &hyper)?;
                reports = reps;
                Pruner::Dynamic(model)
            }
        };
        let sets = pruner.select(&running)?;

        let (alpha, alpha_curve) = match bc.alpha {
            Some(a) => (a, Vec::new()),
            None => {
                let curve: Vec<(f64, f64)> = config
                    .alpha_grid
                    .iter()
                    .map(|&a| {
                        let mut trial = running.clone();
                        apply_boundary(&mut trial, next, &sets, a);
                        Ok((a, eval::mrr(&trial, filter)?))
                    })
                    .collect::<Result<_>>()?;
                (best_of(&curve).0, curve)
            }
        };
        apply_boundary(&mut running, next, &sets, alpha);
        fits.push(BoundaryFit {
            alpha,
            alpha_curve,
            k,
            regressors: reports,
            dev_mrr: eval::mrr(&running, filter)?,
            dev_pairs: sets.pairs(),
        });
        boundaries.push(Boundary { pruner, alpha });
    }

    Ok(FittedCascade {
        cascade: Cascade {
            tiers: config.tiers.clone(),
            boundaries,
        },
        boundaries: fits,
    })
}
