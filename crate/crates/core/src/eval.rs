//! Filtered ranking evaluation.
//!
//! A gold answer competes against every entity except itself and the other
//! known true answers of its query. Ties count half:
//! `rank = 1 + #greater + 0.5 * #equal`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{Direction, FilterIndex, Query, QueryKey};
use crate::matrix::ScoreMatrix;

pub const HITS_AT: [usize; 3] = [1, 3, 10];

pub fn filtered_rank(row: &[f32], key: &QueryKey, filter: &FilterIndex) -> Result<f64> {
    let gold = key.gold as usize;
    let Some(&g) = row.get(gold) else {
        return Err(Error::Alignment(format!(
            "gold entity {gold} outside a row of {} scores",
            row.len()
        )));
    };
    let (mut greater, mut equal) = (0usize, 0usize);
    for &v in row {
        if v > g {
            greater += 1;
        } else if v == g {
            equal += 1;
        }
    }
    equal -= 1; // gold itself
    for &e in filter.answers_for(key) {
        let e = e as usize;
        if e == gold || e >= row.len() {
            continue;
        }
        if row[e] > g {
            greater -= 1;
        } else if row[e] == g {
            equal -= 1;
        }
    }
    Ok(1.0 + greater as f64 + 0.5 * equal as f64)
}

/// Gold ranks for every row of `m`, in row order.
pub fn gold_ranks(m: &ScoreMatrix, filter: &FilterIndex) -> Result<Vec<f64>> {
    (0..m.num_queries())
        .into_par_iter()
        .map(|i| filtered_rank(m.row(i), &m.keys()[i], filter))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hits {
    #[serde(rename = "1")]
    pub at1: f64,
    #[serde(rename = "3")]
    pub at3: f64,
    #[serde(rename = "10")]
    pub at10: f64,
}

impl Hits {
    pub fn at(&self, k: usize) -> Option<f64> {
        match k {
            1 => Some(self.at1),
            3 => Some(self.at3),
            10 => Some(self.at10),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hits: Hits,
    pub n_queries: usize,
}

impl Metrics {
    /// Sequential reduction in input order, so results do not depend on
    /// thread count.
    pub fn from_ranks(ranks: impl IntoIterator<Item = f64>) -> Option<Self> {
        let (mut n, mut rr, mut h) = (0usize, 0.0, [0usize; 3]);
        for r in ranks {
            n += 1;
            rr += 1.0 / r;
            for (c, k) in h.iter_mut().zip(HITS_AT) {
                if r <= k as f64 {
                    *c += 1;
                }
            }
        }
        (n > 0).then(|| {
            let frac = |c: usize| c as f64 / n as f64;
            Metrics {
                mrr: rr / n as f64,
                hits: Hits {
                    at1: frac(h[0]),
                    at3: frac(h[1]),
                    at10: frac(h[2]),
                },
                n_queries: n,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub overall: Metrics,
    pub tail: Option<Metrics>,
    pub head: Option<Metrics>,
    /// Per-query gold ranks in row order.
    #[serde(skip)]
    pub ranks: Vec<f64>,
}

impl EvalReport {
    pub fn mrr(&self) -> f64 {
        self.overall.mrr
    }

    pub fn hits(&self) -> Hits {
        self.overall.hits
    }

    pub fn n_queries(&self) -> usize {
        self.overall.n_queries
    }

    pub fn from_ranks(ranks: Vec<f64>, keys: &[QueryKey]) -> Result<Self> {
        let overall = Metrics::from_ranks(ranks.iter().copied())
            .ok_or_else(|| Error::Undefined("metrics over zero queries".into()))?;
        let by_dir = |d: Direction| {
            Metrics::from_ranks(
                ranks
                    .iter()
                    .zip(keys)
                    .filter(|(_, k)| k.direction == d)
                    .map(|(r, _)| *r),
            )
        };
        Ok(EvalReport {
            overall,
            tail: by_dir(Direction::Tail),
            head: by_dir(Direction::Head),
            ranks,
        })
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("scope    n       MRR     H@1     H@3     H@10\n");
        let mut line = |name: &str, m: &Metrics| {
            out.push_str(&format!(
                "{name:<8} {:<7} {:.4}  {:.4}  {:.4}  {:.4}\n",
                m.n_queries, m.mrr, m.hits.at1, m.hits.at3, m.hits.at10
            ));
        };
        line("all", &self.overall);
        if let Some(t) = &self.tail {
            line("tail", t);
        }
        if let Some(h) = &self.head {
            line("head", h);
        }
        out
    }
}

/// Filtered MRR and hits@{1,3,10} of `m` over `queries`.
pub fn evaluate(m: &ScoreMatrix, queries: &[Query], filter: &FilterIndex) -> Result<EvalReport> {
    m.check_aligned(queries)?;
    evaluate_rows(m, filter)
}

/// Like [`evaluate`] but takes the queries from the matrix's own row keys.
pub fn evaluate_rows(m: &ScoreMatrix, filter: &FilterIndex) -> Result<EvalReport> {
    EvalReport::from_ranks(gold_ranks(m, filter)?, m.keys())
}

/// Filtered MRR only.
pub fn mrr(m: &ScoreMatrix, filter: &FilterIndex) -> Result<f64> {
    Ok(evaluate_rows(m, filter)?.mrr())
}
