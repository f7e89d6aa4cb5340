//! Additive reweighting of two normalized score matrices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::kg::{FilterIndex, Query};
use crate::matrix::{ScaleTag, ScoreMatrix};

/// `alpha * a + (1 - alpha) * b`, evaluated in `f64`.
///
/// Every reweighting in the crate goes through this function so the cascade
/// reproduces [`additive_combine`] bit for bit.
#[inline]
pub fn blend(alpha: f64, a: f32, b: f32) -> f32 {
    (alpha * a as f64 + (1.0 - alpha) * b as f64) as f32
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

pub fn additive_combine(a: &ScoreMatrix, b: &ScoreMatrix, alpha: f64) -> Result<ScoreMatrix> {
    check_alpha(alpha)?;
    a.check_same_layout(b)?;
    a.require_normalized()?;
    b.require_normalized()?;
    let values = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| blend(alpha, x, y))
        .collect();
    ScoreMatrix::new(values, a.num_entities(), a.keys().to_vec(), ScaleTag::Normalized)
}

/// `{0.05, 0.10, …, 0.95}`.
pub fn default_alpha_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedAlpha {
    pub alpha: f64,
    pub mrr: f64,
    /// `(alpha, mrr)` for every grid point, in grid order.
    pub curve: Vec<(f64, f64)>,
}

/// Returns the grid value with the best filtered dev MRR, preferring the
/// smallest alpha among ties.
pub fn tune_alpha(
    a: &ScoreMatrix,
    b: &ScoreMatrix,
    dev_queries: &[Query],
    filter: &FilterIndex,
    grid: &[f64],
) -> Result<TunedAlpha> {
    if grid.is_empty() {
        return Err(Error::Config("alpha grid is empty".into()));
    }
    grid.iter().try_for_each(|&g| check_alpha(g))?;
    a.check_aligned(dev_queries)?;
    b.check_aligned(dev_queries)?;
    let curve: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&alpha| Ok((alpha, eval::mrr(&additive_combine(a, b, alpha)?, filter)?)))
        .collect::<Result<_>>()?;
    let (alpha, mrr) = best_of(&curve);
    Ok(TunedAlpha { alpha, mrr, curve })
}

pub(crate) fn best_of(curve: &[(f64, f64)]) -> (f64, f64) {
    curve
        .iter()
        .copied()
        .reduce(|best, cur| {
            if cur.1 > best.1 || (cur.1 == best.1 && cur.0 < best.0) {
                cur
            } else {
                best
            }
        })
        .expect("nonempty curve")
}
