//! Quantile regression of the gold rank from a query's sorted score row.
//!
//! The regressor is a one-hidden-layer ReLU network with a linear scalar
//! output, trained with the pinball loss at quantile `q`. Inputs and targets
//! are standardized with statistics of the training half. An affine map of
//! the target scales the pinball loss by a positive constant, so the
//! minimizer is unchanged. A hidden width of zero gives a bias-only model.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Rows longer than this are compressed to [`COMPRESSED_FEATURES`] quantiles.
pub const FULL_ROW_LIMIT: usize = 4096;
pub const COMPRESSED_FEATURES: usize = 256;

/// `max(q (R − k̂), (q − 1)(R − k̂))`.
pub fn pinball_loss(pred: f64, target: f64, q: f64) -> f64 {
    let diff = target - pred;
    (q * diff).max((q - 1.0) * diff)
}

/// d/d(pred) of [`pinball_loss`]; the subgradient at zero is taken as 0.
fn pinball_grad(pred: f64, target: f64, q: f64) -> f64 {
    if target > pred {
        -q
    } else if target < pred {
        1.0 - q
    } else {
        0.0
    }
}

pub fn feature_dim(num_entities: usize) -> usize {
    if num_entities <= FULL_ROW_LIMIT {
        num_entities
    } else {
        COMPRESSED_FEATURES
    }
}

/// The row sorted descending, or evenly spaced order statistics of it when
/// the row is longer than [`FULL_ROW_LIMIT`].
pub fn sorted_features(row: &[f32]) -> Vec<f32> {
    let mut sorted = row.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let n = sorted.len();
    if n <= FULL_ROW_LIMIT {
        return sorted;
    }
    let f = COMPRESSED_FEATURES;
    (0..f)
        .map(|k| {
            let pos = (k as f64 * (n - 1) as f64 / (f - 1) as f64).round() as usize;
            sorted[pos]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressorHyper {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for RegressorHyper {
    fn default() -> Self {
        Self {
            hidden: 64,
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            l2: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileRegressor {
    q: f64,
    input_dim: usize,
    hidden: usize,
    feature_mean: Vec<f32>,
    feature_scale: Vec<f32>,
    w1: Vec<f32>,
    b1: Vec<f32>,
    w2: Vec<f32>,
    b2: f32,
    target_shift: f32,
    target_scale: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorReport {
    pub train_size: usize,
    pub validation_size: usize,
    /// Mean pinball loss in rank units on each half, at the kept epoch.
    pub train_loss: f64,
    pub validation_loss: f64,
    pub best_epoch: usize,
}

/// `f64` working copy of the network.
#[derive(Clone)]
struct Net {
    input_dim: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

impl Net {
    fn forward(&self, x: &[f64], act: &mut [f64]) -> f64 {
        let mut out = self.b2;
        for (h, a) in act.iter_mut().enumerate() {
            let w = &self.w1[h * self.input_dim..(h + 1) * self.input_dim];
            let z = self.b1[h] + w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
            *a = z.max(0.0);
            out += self.w2[h] * *a;
        }
        out
    }

    fn params_len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(std::iter::once(&mut self.b2))
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, net: &mut Net, grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (((p, g), m), v) in net.params_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Trains on a seeded random half of the rows and keeps the parameters of
/// the epoch with the lowest pinball loss on the other half.
pub fn train_rank_regressor(
    features: &[Vec<f32>],
    gold_ranks: &[f64],
    q: f64,
    hyper: &RegressorHyper,
) -> Result<(QuantileRegressor, RegressorReport)> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Config(format!("quantile {q} outside (0, 1)")));
    }
    if features.len() != gold_ranks.len() {
        return Err(Error::Alignment(format!(
            "{} feature rows for {} ranks",
            features.len(),
            gold_ranks.len()
        )));
    }
    if features.len() < 2 {
        return Err(Error::Config("need at least two rows to split train/validation".into()));
    }
    let input_dim = features[0].len();
    if features.iter().any(|f| f.len() != input_dim) {
        return Err(Error::Alignment("feature rows differ in length".into()));
    }
    if hyper.epochs == 0 || hyper.batch_size == 0 {
        return Err(Error::Config("regressor needs epochs >= 1 and batch_size >= 1".into()));
    }

    let mut rng = rng::seeded(hyper.seed);
    let mut idx: Vec<usize> = (0..features.len()).collect();
    idx.shuffle(&mut rng);
    let n_train = features.len().div_ceil(2);
    let (train_idx, val_idx) = idx.split_at(n_train);

    let mut feature_mean = vec![0f32; input_dim];
    let mut feature_scale = vec![1f32; input_dim];
    for c in 0..input_dim {
        let (m, s) = mean_std(train_idx.iter().map(|&i| features[i][c] as f64));
        feature_mean[c] = m as f32;
        feature_scale[c] = if s > 1e-6 { s as f32 } else { 1.0 };
    }
    let (shift, scale) = mean_std(train_idx.iter().map(|&i| gold_ranks[i]));
    let target_shift = shift as f32;
    let target_scale = if scale > 1e-6 { scale as f32 } else { 1.0 };

    let standardize = |i: usize| -> Vec<f64> {
        features[i]
            .iter()
            .zip(&feature_mean)
            .zip(&feature_scale)
            .map(|((&x, &m), &s)| (x as f64 - m as f64) / s as f64)
            .collect()
    };
    let xs: Vec<Vec<f64>> = (0..features.len()).map(standardize).collect();
    let ys: Vec<f64> = gold_ranks
        .iter()
        .map(|&r| (r - target_shift as f64) / target_scale as f64)
        .collect();

    // Start from the unconditional train quantile with a silent output layer,
    // so the epoch-0 candidate is the constant predictor and selection on
    // validation loss never keeps anything worse.
    let mut train_ys: Vec<f64> = train_idx.iter().map(|&i| ys[i]).collect();
    train_ys.sort_by(f64::total_cmp);
    let q_rank = ((q * train_ys.len() as f64).ceil() as usize).clamp(1, train_ys.len());
    let hidden = hyper.hidden;
    let bound1 = (6.0 / input_dim.max(1) as f64).sqrt();
    let mut net = Net {
        input_dim,
        w1: (0..hidden * input_dim).map(|_| rng.gen_range(-bound1..=bound1)).collect(),
        b1: vec![0.0; hidden],
        w2: vec![0.0; hidden],
        b2: train_ys[q_rank - 1],
    };
    let mut adam = Adam {
        m: vec![0.0; net.params_len()],
        v: vec![0.0; net.params_len()],
        t: 0,
        lr: hyper.learning_rate,
    };

    let mut act = vec![0.0; hidden];
    let mean_loss = |net: &Net, rows: &[usize], act: &mut [f64]| -> f64 {
        rows.iter()
            .map(|&i| pinball_loss(net.forward(&xs[i], act), ys[i], q))
            .sum::<f64>()
            / rows.len().max(1) as f64
    };
    let val_rows = if val_idx.is_empty() { train_idx } else { val_idx };

    let mut best = (mean_loss(&net, val_rows, &mut act), 0usize, net.clone());
    let mut order = train_idx.to_vec();
    let mut grad = vec![0.0; net.params_len()];
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(hyper.batch_size).enumerate() {
            grad.fill(0.0);
            let inv = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            let (w1_len, h) = (net.w1.len(), hidden);
            for &i in batch {
                let out = net.forward(&xs[i], &mut act);
                loss += pinball_loss(out, ys[i], q);
                let g_out = pinball_grad(out, ys[i], q) * inv;
                if g_out == 0.0 {
                    continue;
                }
                for k in 0..h {
                    grad[w1_len + h + k] += g_out * act[k];
                    if act[k] > 0.0 {
                        let g_z = g_out * net.w2[k];
                        grad[w1_len + k] += g_z;
                        let row = &mut grad[k * input_dim..(k + 1) * input_dim];
                        row.iter_mut().zip(&xs[i]).for_each(|(g, x)| *g += g_z * x);
                    }
                }
                grad[w1_len + 2 * h] += g_out;
            }
            if hyper.l2 > 0.0 {
                for (g, w) in grad[..w1_len].iter_mut().zip(&net.w1) {
                    *g += 2.0 * hyper.l2 * w;
                }
            }
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            adam.step(&mut net, &grad);
        }
        let val = mean_loss(&net, val_rows, &mut act);
        if !val.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: 0,
                loss: val,
            });
        }
        if val < best.0 {
            best = (val, epoch, net.clone());
        }
    }

    let (val_loss, best_epoch, net) = best;
    let train_loss = mean_loss(&net, train_idx, &mut act);
    let reg = QuantileRegressor {
        q,
        input_dim,
        hidden,
        feature_mean,
        feature_scale,
        w1: net.w1.iter().map(|&v| v as f32).collect(),
        b1: net.b1.iter().map(|&v| v as f32).collect(),
        w2: net.w2.iter().map(|&v| v as f32).collect(),
        b2: net.b2 as f32,
        target_shift,
        target_scale,
    };
    let report = RegressorReport {
        train_size: train_idx.len(),
        validation_size: val_idx.len(),
        train_loss: train_loss * target_scale as f64,
        validation_loss: val_loss * target_scale as f64,
        best_epoch,
    };
    Ok((reg, report))
}

impl QuantileRegressor {
    pub fn quantile(&self) -> f64 {
        self.q
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// A bias-only regressor that always predicts `value`.
    pub fn constant(q: f64, input_dim: usize, value: f32) -> Self {
        Self {
            q,
            input_dim,
            hidden: 0,
            feature_mean: vec![0.0; input_dim],
            feature_scale: vec![1.0; input_dim],
            w1: vec![],
            b1: vec![],
            w2: vec![],
            b2: value,
            target_shift: 0.0,
            target_scale: 1.0,
        }
    }

    /// Predicted gold rank, in rank units.
    pub fn predict(&self, features: &[f32]) -> Result<f64> {
        if features.len() != self.input_dim {
            return Err(Error::Alignment(format!(
                "regressor expects {} features, got {}",
                self.input_dim,
                features.len()
            )));
        }
        let x: Vec<f64> = features
            .iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_scale)
            .map(|((&x, &m), &s)| (x as f64 - m as f64) / s as f64)
            .collect();
        let mut out = self.b2 as f64;
        for h in 0..self.hidden {
            let w = &self.w1[h * self.input_dim..(h + 1) * self.input_dim];
            let z = self.b1[h] as f64 + w.iter().zip(&x).map(|(&w, x)| w as f64 * x).sum::<f64>();
            out += self.w2[h] as f64 * z.max(0.0);
        }
        let y = out * self.target_scale as f64 + self.target_shift as f64;
        if !y.is_finite() {
            return Err(Error::NonFinite("regressor prediction".into()));
        }
        Ok(y)
    }

    /// Progression depth for one score row: `clamp(ceil(prediction), 1, |E|)`.
    pub fn depth(&self, row: &[f32]) -> Result<usize> {
        let pred = self.predict(&sorted_features(row))?;
        Ok(clamp_depth(pred, row.len()))
    }
}

pub(crate) fn clamp_depth(pred: f64, num_entities: usize) -> usize {
    let k = pred.ceil();
    if k < 1.0 {
        1
    } else if k >= num_entities as f64 {
        num_entities
    } else {
        k as usize
    }
}

// Checkpoint: "CQRG" | version u32 | q f64 | input u32 | hidden u32
// | f32 blocks: mean[F], scale[F], w1[H*F], b1[H], w2[H], b2, shift, target scale
const MAGIC: &[u8; 4] = b"CQRG";
pub const REGRESSOR_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4;

pub fn write_regressor<W: Write>(r: &QuantileRegressor, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&REGRESSOR_VERSION.to_le_bytes())?;
    w.write_all(&r.q.to_le_bytes())?;
    w.write_all(&(r.input_dim as u32).to_le_bytes())?;
    w.write_all(&(r.hidden as u32).to_le_bytes())?;
    let tail = [r.b2, r.target_shift, r.target_scale];
    for v in r
        .feature_mean
        .iter()
        .chain(&r.feature_scale)
        .chain(&r.w1)
        .chain(&r.b1)
        .chain(&r.w2)
        .chain(&tail)
    {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_regressor(r: &QuantileRegressor, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_regressor(r, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_regressor(bytes: &[u8]) -> Result<QuantileRegressor> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("not a regressor checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != REGRESSOR_VERSION {
        return Err(Error::Format(format!("unsupported regressor version {version}")));
    }
    let q = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let f = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as usize;
    let n = 2 * f + h * f + 2 * h + 3;
    let expected = HEADER_LEN + 4 * n;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    let mut vals = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut take = |k: usize| -> Vec<f32> { vals.by_ref().take(k).collect() };
    let feature_mean = take(f);
    let feature_scale = take(f);
    let w1 = take(h * f);
    let b1 = take(h);
    let w2 = take(h);
    let rest = take(3);
    let r = QuantileRegressor {
        q,
        input_dim: f,
        hidden: h,
        feature_mean,
        feature_scale,
        w1,
        b1,
        w2,
        b2: rest[0],
        target_shift: rest[1],
        target_scale: rest[2],
    };
    let all_finite = r
        .feature_mean
        .iter()
        .chain(&r.feature_scale)
        .chain(&r.w1)
        .chain(&r.b1)
        .chain(&r.w2)
        .chain(&rest)
        .all(|v| v.is_finite());
    if !all_finite || !(q > 0.0 && q < 1.0) {
        return Err(Error::Format("regressor checkpoint holds invalid values".into()));
    }
    Ok(r)
}

pub fn load_regressor(path: impl AsRef<Path>) -> Result<QuantileRegressor> {
    read_regressor(&fs::read(path)?)
}
