//! Diagnostics over scorers and cascades: rank agreement between scorers,
//! score margins, distribution summaries and cost/quality frontiers.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::kg::FilterIndex;
use crate::matrix::ScoreMatrix;

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Alignment(format!("{} values against {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Undefined("correlation needs at least two values".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation with a constant input".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Pearson correlation between two per-query gold-rank vectors.
pub fn rank_correlation(ranks_a: &[f64], ranks_b: &[f64]) -> Result<f64> {
    pearson(ranks_a, ranks_b)
}

/// [`rank_correlation`] of the filtered gold ranks of two aligned matrices.
pub fn scorer_rank_correlation(a: &ScoreMatrix, b: &ScoreMatrix, filter: &FilterIndex) -> Result<f64> {
    a.check_same_layout(b)?;
    rank_correlation(&eval::gold_ranks(a, filter)?, &eval::gold_ranks(b, filter)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    /// Gold score minus the mean score of the query's negatives; `None` when
    /// filtering leaves no negatives.
    pub per_query: Vec<Option<f64>>,
    pub mean: f64,
    pub excluded: usize,
}

/// Average gold-over-negative margin per query. Negatives are every entity
/// other than gold and its filtered answers.
pub fn average_margin(m: &ScoreMatrix, filter: &FilterIndex) -> Result<MarginReport> {
    let mut per_query = Vec::with_capacity(m.num_queries());
    for (i, key) in m.keys().iter().enumerate() {
        let row = m.row(i);
        let gold = key.gold as usize;
        let g = *row.get(gold).ok_or_else(|| {
            Error::Alignment(format!("gold entity {gold} outside a row of {}", row.len()))
        })? as f64;
        let mut known: Vec<usize> = filter
            .answers_for(key)
            .iter()
            .map(|&e| e as usize)
            .filter(|&e| e < row.len() && e != gold)
            .collect();
        known.push(gold);
        let excluded_sum: f64 = known.iter().map(|&e| row[e] as f64).sum();
        let total: f64 = row.iter().map(|&v| v as f64).sum();
        let negatives = row.len() - known.len();
        per_query.push((negatives > 0).then(|| g - (total - excluded_sum) / negatives as f64));
    }
    let excluded = per_query.iter().filter(|m| m.is_none()).count();
    if excluded > 0 {
        warn!("{excluded} queries have no negatives and are left out of the margin average");
    }
    let kept: Vec<f64> = per_query.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(Error::Undefined("no query has a negative".into()));
    }
    Ok(MarginReport {
        mean: kept.iter().sum::<f64>() / kept.len() as f64,
        per_query,
        excluded,
    })
}

/// Pearson correlation between per-query margins and filtered gold
/// reciprocal ranks, over the queries that have negatives.
pub fn margin_rank_correlation(m: &ScoreMatrix, filter: &FilterIndex) -> Result<f64> {
    let margins = average_margin(m, filter)?;
    let ranks = eval::gold_ranks(m, filter)?;
    let (x, y): (Vec<f64>, Vec<f64>) = margins
        .per_query
        .iter()
        .zip(&ranks)
        .filter_map(|(m, r)| m.map(|m| (m, 1.0 / r)))
        .unzip();
    pearson(&x, &y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// Population (biased) sample skewness; 0 when the variance is zero.
    pub skewness: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub zero_variance: bool,
}

pub fn distribution_summary(values: &[f64]) -> Result<DistributionSummary> {
    if values.is_empty() {
        return Err(Error::Undefined("summary of zero values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("distribution input".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let zero_variance = m2 == 0.0;
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    Ok(DistributionSummary {
        n: values.len(),
        mean,
        std: m2.sqrt(),
        skewness: if zero_variance { 0.0 } else { m3 / m2.powf(1.5) },
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        median,
        zero_variance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub label: String,
    pub cost: f64,
    pub pairs: u64,
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub label: String,
    pub cost: f64,
    pub pairs: u64,
    pub mrr: f64,
    pub dominated: bool,
}

/// Rows sorted by cost (then label). A point is dominated when another costs
/// no more and scores no less, and is strictly better in one of the two.
pub fn pareto_table(points: &[ParetoPoint]) -> Vec<ParetoRow> {
    let mut rows: Vec<ParetoRow> = points
        .iter()
        .map(|p| ParetoRow {
            label: p.label.clone(),
            cost: p.cost,
            pairs: p.pairs,
            mrr: p.mrr,
            dominated: points.iter().any(|o| {
                o.cost <= p.cost && o.mrr >= p.mrr && (o.cost < p.cost || o.mrr > p.mrr)
            }),
        })
        .collect();
    rows.sort_by(|a, b| a.cost.total_cmp(&b.cost).then_with(|| a.label.cmp(&b.label)));
    rows
}

pub const PARETO_HEADER: [&str; 5] = ["label", "cost", "pairs", "mrr", "dominated"];
pub const SUMMARY_HEADER: [&str; 9] =
    ["name", "n", "mean", "std", "skewness", "min", "max", "median", "zero_variance"];

pub fn write_pareto_csv<W: Write>(rows: &[ParetoRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(PARETO_HEADER).map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.label.clone(),
            r.cost.to_string(),
            r.pairs.to_string(),
            r.mrr.to_string(),
            r.dominated.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(rows: &[(String, DistributionSummary)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_HEADER).map_err(csv_err)?;
    for (name, s) in rows {
        out.write_record([
            name.clone(),
            s.n.to_string(),
            s.mean.to_string(),
            s.std.to_string(),
            s.skewness.to_string(),
            s.min.to_string(),
            s.max.to_string(),
            s.median.to_string(),
            s.zero_variance.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}
