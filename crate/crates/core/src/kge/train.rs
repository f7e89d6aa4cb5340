//! Negative-sampling SGD trainer.
//!
//! Each positive triple yields two samples, one per query direction. A
//! sample's negatives replace the open slot with entities drawn uniformly
//! from everything except the gold answer. Parameters are kept in `f64`
//! while training and rounded to `f32` once at the end.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{scoring, Architecture, KgeModel};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::kg::{build_filter_index, build_queries, Direction, EntityId, KnowledgeGraph, Split, Triple};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Loss {
    /// Binary cross-entropy: positives toward 1, negatives toward 0.
    Bce,
    /// Pairwise hinge `max(0, margin - s⁺ + s⁻)`.
    Margin { margin: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub negatives: usize,
    pub batch_size: usize,
    pub loss: Loss,
    pub seed: u64,
    pub l2: f64,
    /// Initial values are uniform in `±init_scale / sqrt(dim)`.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::ComplEx,
            dim: 64,
            epochs: 100,
            learning_rate: 5.0,
            negatives: 10,
            batch_size: 128,
            loss: Loss::Bce,
            seed: 0,
            l2: 1e-3,
            init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim < 2 {
            return bad(format!("dim must be >= 2, got {}", self.dim));
        }
        if self.architecture.needs_even_dim() && !self.dim.is_multiple_of(2) {
            return bad(format!("{:?} needs an even dim, got {}", self.architecture, self.dim));
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if self.negatives < 1 {
            return bad("negatives must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(self.l2 >= 0.0 && self.init_scale > 0.0) {
            return bad("l2 must be >= 0 and init_scale > 0".into());
        }
        if let Loss::Margin { margin } = self.loss {
            if margin.is_nan() || margin <= 0.0 {
                return bad(format!("margin {margin} must be positive"));
            }
        }
        Ok(())
    }
}

/// Dense `f64` parameter tables used during training.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTables {
    pub architecture: Architecture,
    pub dim: usize,
    pub entity: Vec<f64>,
    pub relation: Vec<f64>,
}

impl ParamTables {
    pub fn init<R: Rng>(arch: Architecture, dim: usize, ne: usize, nr: usize, init_scale: f64, rng: &mut R) -> Self {
        let bound = init_scale / (dim as f64).sqrt();
        let entity = (0..ne * dim).map(|_| rng.gen_range(-bound..=bound)).collect();
        let pi = std::f64::consts::PI;
        let relation = (0..nr * arch.relation_width(dim))
            .map(|_| match arch {
                Architecture::RotatE => rng.gen_range(-pi..=pi),
                _ => rng.gen_range(-bound..=bound),
            })
            .collect();
        Self {
            architecture: arch,
            dim,
            entity,
            relation,
        }
    }

    fn rel_width(&self) -> usize {
        self.architecture.relation_width(self.dim)
    }

    pub fn entity_row(&self, e: EntityId) -> &[f64] {
        &self.entity[e as usize * self.dim..(e as usize + 1) * self.dim]
    }

    pub fn relation_row(&self, r: u32) -> &[f64] {
        let w = self.rel_width();
        &self.relation[r as usize * w..(r as usize + 1) * w]
    }

    pub fn score(&self, t: Triple) -> f64 {
        scoring::score(
            self.architecture,
            self.entity_row(t.head),
            self.relation_row(t.relation),
            self.entity_row(t.tail),
        )
    }

    /// `θ ← θ − lr·g`, with RotatE phases wrapped back into `[−π, π]`.
    pub fn apply(&mut self, grad: &SparseGrad, lr: f64) {
        let d = self.dim;
        for (&e, g) in &grad.entity {
            let row = &mut self.entity[e as usize * d..(e as usize + 1) * d];
            row.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
        }
        let w = self.rel_width();
        let wrap = self.architecture == Architecture::RotatE;
        for (&r, g) in &grad.relation {
            let row = &mut self.relation[r as usize * w..(r as usize + 1) * w];
            for (p, g) in row.iter_mut().zip(g) {
                *p -= lr * g;
                if wrap {
                    *p = wrap_phase(*p);
                }
            }
        }
    }

    pub fn to_model(&self) -> Result<KgeModel> {
        let ne = self.entity.len() / self.dim;
        let nr = self.relation.len() / self.rel_width();
        KgeModel::from_parts(
            self.architecture,
            self.dim,
            ne,
            nr,
            self.entity.iter().map(|&v| v as f32).collect(),
            self.relation.iter().map(|&v| v as f32).collect(),
        )
    }
}

fn wrap_phase(p: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let w = p - two_pi * (p / two_pi).round();
    w.clamp(-std::f64::consts::PI, std::f64::consts::PI)
}

/// One positive triple seen from one direction, with corrupted answers for
/// the open slot.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub positive: Triple,
    pub direction: Direction,
    pub negatives: Vec<EntityId>,
}

impl TrainSample {
    fn corrupt(&self, e: EntityId) -> Triple {
        let p = self.positive;
        match self.direction {
            Direction::Tail => Triple::new(p.head, p.relation, e),
            Direction::Head => Triple::new(e, p.relation, p.tail),
        }
    }
}

/// Gradient rows keyed by entity / relation id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrad {
    pub entity: BTreeMap<EntityId, Vec<f64>>,
    pub relation: BTreeMap<u32, Vec<f64>>,
}

impl SparseGrad {
    fn add(map: &mut BTreeMap<u32, Vec<f64>>, id: u32, g: &[f64], scale: f64) {
        let row = map.entry(id).or_insert_with(|| vec![0.0; g.len()]);
        row.iter_mut().zip(g).for_each(|(a, b)| *a += scale * b);
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Scratch {
    gh: Vec<f64>,
    gr: Vec<f64>,
    gt: Vec<f64>,
}

fn add_score_grad(params: &ParamTables, t: Triple, coeff: f64, grad: &mut SparseGrad, s: &mut Scratch) {
    if coeff == 0.0 {
        return;
    }
    s.gh.fill(0.0);
    s.gr.fill(0.0);
    s.gt.fill(0.0);
    scoring::accumulate_grad(
        params.architecture,
        params.entity_row(t.head),
        params.relation_row(t.relation),
        params.entity_row(t.tail),
        coeff,
        &mut s.gh,
        &mut s.gr,
        &mut s.gt,
    );
    SparseGrad::add(&mut grad.entity, t.head, &s.gh, 1.0);
    SparseGrad::add(&mut grad.entity, t.tail, &s.gt, 1.0);
    SparseGrad::add(&mut grad.relation, t.relation, &s.gr, 1.0);
}

/// Mean loss over `batch` and its exact gradient.
///
/// Per sample: the chosen loss over the positive and its negatives plus
/// `l2 * (|e_h|² + |w_r|² + |e_t|²)` on the positive triple (RotatE phases
/// are not regularized).
pub fn batch_loss_and_grad(params: &ParamTables, batch: &[TrainSample], loss: Loss, l2: f64) -> (f64, SparseGrad) {
    let mut grad = SparseGrad::default();
    if batch.is_empty() {
        return (0.0, grad);
    }
    let mut scratch = Scratch {
        gh: vec![0.0; params.dim],
        gr: vec![0.0; params.rel_width()],
        gt: vec![0.0; params.dim],
    };
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for sample in batch {
        let pos = sample.positive;
        let s_pos = params.score(pos);
        let n = sample.negatives.len().max(1) as f64;
        match loss {
            Loss::Bce => {
                total += softplus(-s_pos);
                add_score_grad(params, pos, -sigmoid(-s_pos) * scale, &mut grad, &mut scratch);
                for &e in &sample.negatives {
                    let neg = sample.corrupt(e);
                    let s_neg = params.score(neg);
                    total += softplus(s_neg) / n;
                    add_score_grad(params, neg, sigmoid(s_neg) / n * scale, &mut grad, &mut scratch);
                }
            }
            Loss::Margin { margin } => {
                let mut active = 0.0;
                for &e in &sample.negatives {
                    let neg = sample.corrupt(e);
                    let s_neg = params.score(neg);
                    let v = margin - s_pos + s_neg;
                    if v > 0.0 {
                        total += v / n;
                        active += 1.0;
                        add_score_grad(params, neg, scale / n, &mut grad, &mut scratch);
                    }
                }
                add_score_grad(params, pos, -active / n * scale, &mut grad, &mut scratch);
            }
        }
        if l2 > 0.0 {
            for e in [pos.head, pos.tail] {
                let row = params.entity_row(e);
                total += l2 * row.iter().map(|v| v * v).sum::<f64>();
                let g: Vec<f64> = row.iter().map(|v| 2.0 * l2 * v).collect();
                SparseGrad::add(&mut grad.entity, e, &g, scale);
            }
            if params.architecture != Architecture::RotatE {
                let row = params.relation_row(pos.relation);
                total += l2 * row.iter().map(|v| v * v).sum::<f64>();
                let g: Vec<f64> = row.iter().map(|v| 2.0 * l2 * v).collect();
                SparseGrad::add(&mut grad.relation, pos.relation, &g, scale);
            }
        }
    }
    (total * scale, grad)
}

/// Output of [`train_kge`].
#[derive(Debug, Clone)]
pub struct TrainedKge {
    pub model: KgeModel,
    pub epoch_losses: Vec<f64>,
    /// Filtered dev metrics, absent when the dev split is empty.
    pub dev: Option<EvalReport>,
}

fn sample_negatives<R: Rng>(rng: &mut R, num_entities: usize, gold: EntityId, k: usize) -> Vec<EntityId> {
    (0..k)
        .map(|_| {
            let e = rng.gen_range(0..num_entities as u32 - 1);
            if e >= gold {
                e + 1
            } else {
                e
            }
        })
        .collect()
}

pub fn train_kge(kg: &KnowledgeGraph, config: &TrainConfig) -> Result<TrainedKge> {
    config.validate()?;
    let ne = kg.num_entities();
    if ne < 2 {
        return Err(Error::Config("negative sampling needs at least two entities".into()));
    }
    let mut rng = rng::seeded(config.seed);
    let mut params = ParamTables::init(
        config.architecture,
        config.dim,
        ne,
        kg.num_relations(),
        config.init_scale,
        &mut rng,
    );

    let train = kg.split(Split::Train);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut batch = Vec::with_capacity(2 * chunk.len());
            for &i in chunk {
                let t = train[i];
                for (direction, gold) in [(Direction::Tail, t.tail), (Direction::Head, t.head)] {
                    batch.push(TrainSample {
                        positive: t,
                        direction,
                        negatives: sample_negatives(&mut rng, ne, gold, config.negatives),
                    });
                }
            }
            let (loss, grad) = batch_loss_and_grad(&params, &batch, config.loss, config.l2);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
            epoch_loss += loss * chunk.len() as f64;
            params.apply(&grad, config.learning_rate);
        }
        let mean = epoch_loss / train.len() as f64;
        let representable = |v: &f64| v.abs() <= f32::MAX as f64;
        if !(params.entity.iter().all(representable) && params.relation.iter().all(representable)) {
            return Err(Error::Diverged {
                epoch,
                batch: order.len().div_ceil(config.batch_size),
                loss: mean,
            });
        }
        log::debug!("epoch {epoch}: loss {mean:.5}");
        epoch_losses.push(mean);
    }

    let model = params.to_model()?;
    let dev_queries = build_queries(kg, Split::Dev);
    let dev = if dev_queries.is_empty() {
        None
    } else {
        let filter = build_filter_index(kg);
        Some(evaluate(&model.score_all(&dev_queries)?, &dev_queries, &filter)?)
    };
    Ok(TrainedKge {
        model,
        epoch_losses,
        dev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::planted::PlantedConfig;

    fn toy_params(arch: Architecture, seed: u64) -> ParamTables {
        let mut rng = rng::seeded(seed);
        let mut p = ParamTables::init(arch, 4, 5, 2, 3.0, &mut rng);
        if arch == Architecture::RotatE {
            // interior phases keep the finite-difference stencil away from the wrap point
            p.relation.iter_mut().for_each(|v| *v *= 0.8);
        }
        p
    }

    fn toy_batch() -> Vec<TrainSample> {
        vec![
            TrainSample {
                positive: Triple::new(0, 0, 1),
                direction: Direction::Tail,
                negatives: vec![2, 3, 4],
            },
            TrainSample {
                positive: Triple::new(2, 1, 3),
                direction: Direction::Head,
                negatives: vec![0, 4],
            },
            TrainSample {
                positive: Triple::new(4, 0, 4),
                direction: Direction::Tail,
                negatives: vec![1],
            },
        ]
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
    }

    fn check_gradients(arch: Architecture, loss: Loss, l2: f64) -> f64 {
        let params = toy_params(arch, 42);
        let batch = toy_batch();
        let (_, grad) = batch_loss_and_grad(&params, &batch, loss, l2);
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        let d = params.dim;
        for idx in 0..params.entity.len() {
            let analytic = grad
                .entity
                .get(&((idx / d) as u32))
                .map(|g| g[idx % d])
                .unwrap_or(0.0);
            let mut plus = params.clone();
            plus.entity[idx] += eps;
            let mut minus = params.clone();
            minus.entity[idx] -= eps;
            let numeric = (batch_loss_and_grad(&plus, &batch, loss, l2).0
                - batch_loss_and_grad(&minus, &batch, loss, l2).0)
                / (2.0 * eps);
            worst = worst.max(rel_err(analytic, numeric));
        }
        let w = params.rel_width();
        for idx in 0..params.relation.len() {
            let analytic = grad
                .relation
                .get(&((idx / w) as u32))
                .map(|g| g[idx % w])
                .unwrap_or(0.0);
            let mut plus = params.clone();
            plus.relation[idx] += eps;
            let mut minus = params.clone();
            minus.relation[idx] -= eps;
            let numeric = (batch_loss_and_grad(&plus, &batch, loss, l2).0
                - batch_loss_and_grad(&minus, &batch, loss, l2).0)
                / (2.0 * eps);
            worst = worst.max(rel_err(analytic, numeric));
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for arch in Architecture::ALL {
            for (loss, l2) in [(Loss::Bce, 0.0), (Loss::Bce, 0.01), (Loss::Margin { margin: 4.0 }, 0.001)] {
                let err = check_gradients(arch, loss, l2);
                assert!(err <= 1e-4, "{arch:?} {loss:?}: relative error {err:e}");
            }
        }
    }

    #[test]
    fn negatives_never_hit_gold() {
        let mut rng = rng::seeded(1);
        for gold in 0..6 {
            for _ in 0..200 {
                assert!(sample_negatives(&mut rng, 6, gold, 5).iter().all(|&e| e != gold && e < 6));
            }
        }
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = TrainConfig {
            negatives: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            architecture: Architecture::RotatE,
            dim: 5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn phases_stay_wrapped() {
        for p in [-10.0, -3.2, 0.0, 3.1, 3.2, 7.0, 100.0] {
            let w = wrap_phase(p);
            assert!((-std::f64::consts::PI..=std::f64::consts::PI).contains(&w));
            assert!(((p - w) / (2.0 * std::f64::consts::PI)).fract().abs() < 1e-9);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let kg = PlantedConfig {
            num_entities: 40,
            num_relations: 3,
            num_clusters: 4,
            train: 200,
            dev: 20,
            test: 20,
            ..Default::default()
        }
        .generate()
        .unwrap();
        let cfg = TrainConfig {
            dim: 8,
            epochs: 3,
            ..Default::default()
        };
        let a = train_kge(&kg, &cfg).unwrap();
        let b = train_kge(&kg, &cfg).unwrap();
        let bits = |m: &KgeModel| {
            m.entity_embeddings()
                .iter()
                .chain(m.relation_parameters())
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a.model), bits(&b.model));
        assert_eq!(a.epoch_losses, b.epoch_losses);
    }

    #[test]
    fn divergence_is_reported() {
        let kg = PlantedConfig {
            num_entities: 40,
            num_relations: 3,
            num_clusters: 4,
            train: 200,
            dev: 0,
            test: 0,
            ..Default::default()
        }
        .generate()
        .unwrap();
        let cfg = TrainConfig {
            architecture: Architecture::Rescal,
            dim: 8,
            epochs: 50,
            learning_rate: 1e6,
            init_scale: 10.0,
            loss: Loss::Margin { margin: 1.0 },
            ..Default::default()
        };
        assert!(matches!(train_kge(&kg, &cfg), Err(Error::Diverged { .. })));
    }
}
