use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cascade_rank::analysis::{
    average_margin, distribution_summary, margin_rank_correlation, pareto_table, scorer_rank_correlation,
    write_pareto_csv, write_summary_csv, ParetoPoint,
};
use cascade_rank::cascade::{
    fit_cascade, run_cascade, save_regressor, BoundaryFit, BoundaryStats, CascadeConfig, CostReport,
    DepthModel, Pruner, Pruning,
};
use cascade_rank::ensemble::{additive_combine, default_alpha_grid, tune_alpha};
use cascade_rank::eval::{evaluate, EvalReport};
use cascade_rank::kg::{build_filter_index, build_queries, load_dataset, FilterIndex, KnowledgeGraph, Query, Split};
use cascade_rank::kge::{load_model, save_model, train_kge, KgeModel, TrainConfig};
use cascade_rank::matrix::{load_matrix, load_matrix_for, normalize_per_query, save_matrix, synthesize_scorer, ScoreMatrix};
use log::info;
use serde::Serialize;

use crate::config::{derive_seed, ExperimentConfig, ScorerSpec};
use crate::layout::{write_json, write_manifest, Layout};

/// A loaded config bound to its output directory.
pub struct Session {
    pub cfg: ExperimentConfig,
    pub layout: Layout,
    kg: Option<(KnowledgeGraph, FilterIndex)>,
}

impl Session {
    /// Opens the output directory. Artifacts written under a different
    /// config are cleared so nothing stale is reused.
    pub fn open(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let root = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        let layout = Layout::create(&root)?;
        if let Ok(text) = fs::read_to_string(layout.manifest()) {
            let previous: serde_json::Value = serde_json::from_str(&text).unwrap_or_default();
            if previous["config_sha256"].as_str() != Some(cfg.digest().as_str()) {
                info!("config changed since the last run; clearing {}", root.display());
                for d in ["models", "scores", "reports", "analysis"] {
                    fs::remove_dir_all(root.join(d))?;
                }
                fs::remove_file(layout.manifest())?;
            }
        }
        let layout = Layout::create(root)?;
        Ok(Self { cfg, layout, kg: None })
    }

    pub fn finish(&self, command: &str) -> Result<()> {
        write_manifest(&self.layout, command, self.cfg.seed, &self.cfg.digest())?;
        Ok(())
    }

    fn graph(&mut self) -> Result<&(KnowledgeGraph, FilterIndex)> {
        if self.kg.is_none() {
            let kg = self.cfg.knowledge_graph()?;
            let filter = build_filter_index(&kg);
            self.kg = Some((kg, filter));
        }
        Ok(self.kg.as_ref().expect("just loaded"))
    }

    fn queries(&mut self, split: Split) -> Result<Vec<Query>> {
        Ok(build_queries(&self.graph()?.0, split))
    }

    fn filter(&mut self) -> Result<FilterIndex> {
        Ok(self.graph()?.1.clone())
    }

    fn train_config(&self, name: &str) -> Result<TrainConfig> {
        match self.cfg.scorer(name)? {
            ScorerSpec::Kge { train } => Ok(TrainConfig {
                seed: derive_seed(self.cfg.seed, &format!("kge:{name}")),
                ..train.clone()
            }),
            _ => bail!("scorer `{name}` is not a KGE scorer"),
        }
    }

    /// Trains `name` and writes its checkpoint and training report.
    fn train(&mut self, name: &str) -> Result<KgeModel> {
        let cfg = self.train_config(name)?;
        info!("training {name}: {:?} d={} for {} epochs", cfg.architecture, cfg.dim, cfg.epochs);
        let trained = train_kge(&self.graph()?.0, &cfg)?;
        save_model(&trained.model, self.layout.model(name))?;
        #[derive(Serialize)]
        struct TrainReport<'a> {
            scorer: &'a str,
            config: &'a TrainConfig,
            epoch_losses: &'a [f64],
            dev: &'a Option<EvalReport>,
        }
        write_json(
            &self.layout.report(&format!("{name}.train")),
            &TrainReport {
                scorer: name,
                config: &cfg,
                epoch_losses: &trained.epoch_losses,
                dev: &trained.dev,
            },
        )?;
        if let Some(dev) = &trained.dev {
            println!("{name} dev\n{}", dev.to_table());
        }
        Ok(trained.model)
    }

    fn model(&mut self, name: &str) -> Result<KgeModel> {
        let path = self.layout.model(name);
        if path.exists() {
            return Ok(load_model(&path)?);
        }
        self.train(name)
    }

    /// Raw scores of `name` on `split`, computed once per output directory.
    pub fn raw_scores(&mut self, name: &str, split: Split) -> Result<ScoreMatrix> {
        let queries = self.queries(split)?;
        let ne = self.graph()?.0.num_entities();
        let path = self.layout.scores(name, split);
        if path.exists() {
            return Ok(load_matrix_for(&path, &queries, ne)?);
        }
        let m = match self.cfg.scorer(name)?.clone() {
            ScorerSpec::Kge { .. } => self.model(name)?.score_all(&queries)?,
            ScorerSpec::Synthetic { fidelity } => {
                let seed = derive_seed(self.cfg.seed, &format!("synthetic:{name}"));
                synthesize_scorer(&self.graph()?.0, &queries, fidelity, seed)?
            }
            ScorerSpec::Matrix { dev, test } => {
                let src = match split {
                    Split::Dev => dev,
                    Split::Test => test,
                    Split::Train => bail!("matrix scorers provide dev and test only"),
                };
                load_matrix_for(&src, &queries, ne).with_context(|| format!("loading {}", src.display()))?
            }
        };
        save_matrix(&m, &path)?;
        Ok(m)
    }

    fn scores(&mut self, name: &str, split: Split) -> Result<ScoreMatrix> {
        Ok(normalize_per_query(&self.raw_scores(name, split)?))
    }
}

pub fn prepare(dir: Option<&Path>, session: Option<&mut Session>) -> Result<()> {
    let kg = match (dir, &session) {
        (Some(d), _) => load_dataset(d).with_context(|| format!("loading dataset {}", d.display()))?,
        (None, Some(s)) => s.cfg.knowledge_graph()?,
        (None, None) => bail!("prepare needs a dataset directory or a config"),
    };
    let summary = kg.summary();
    println!("{summary}");
    if let Some(s) = session {
        write_json(&s.layout.report("dataset"), &summary)?;
        s.finish("prepare")?;
    }
    Ok(())
}

fn kge_scorers(cfg: &ExperimentConfig, only: Option<&str>) -> Result<Vec<String>> {
    if let Some(name) = only {
        cfg.scorer(name)?;
        return Ok(vec![name.to_string()]);
    }
    Ok(cfg
        .scorers
        .iter()
        .filter(|(_, s)| matches!(s, ScorerSpec::Kge { .. }))
        .map(|(n, _)| n.clone())
        .collect())
}

pub fn train(s: &mut Session, only: Option<&str>) -> Result<()> {
    let names = kge_scorers(&s.cfg, only)?;
    if names.is_empty() {
        bail!("config has no KGE scorers");
    }
    for name in names {
        s.train(&name)?;
    }
    s.finish("train-kge")
}

pub fn score(s: &mut Session, only: Option<&str>, split: Option<Split>) -> Result<()> {
    let names: Vec<String> = match only {
        Some(n) => vec![n.to_string()],
        None => s.cfg.scorers.keys().cloned().collect(),
    };
    let splits = match split {
        Some(sp) => vec![sp],
        None => vec![Split::Dev, s.cfg.eval_split],
    };
    for name in &names {
        for &sp in &splits {
            let m = s.raw_scores(name, sp)?;
            info!("{name} {}: {} x {}", sp.name(), m.num_queries(), m.num_entities());
        }
    }
    s.finish("score")
}

#[derive(Serialize)]
struct EnsembleReport {
    a: String,
    b: String,
    alpha: f64,
    dev_mrr: f64,
    curve: Vec<(f64, f64)>,
    split: Split,
    eval: EvalReport,
}

pub fn ensemble(s: &mut Session, a: &str, b: &str, grid: Option<Vec<f64>>) -> Result<()> {
    let grid = grid
        .or_else(|| s.cfg.cascade.as_ref().map(|c| c.alpha_grid.clone()))
        .unwrap_or_else(default_alpha_grid);
    let filter = s.filter()?;
    let dev_q = s.queries(Split::Dev)?;
    let tuned = tune_alpha(&s.scores(a, Split::Dev)?, &s.scores(b, Split::Dev)?, &dev_q, &filter, &grid)?;

    let split = s.cfg.eval_split;
    let queries = s.queries(split)?;
    let combined = additive_combine(&s.scores(a, split)?, &s.scores(b, split)?, tuned.alpha)?;
    let eval = evaluate(&combined, &queries, &filter)?;
    let name = format!("ensemble.{a}+{b}");
    save_matrix(&combined, s.layout.scores(&name, split))?;
    println!("alpha {} (dev mrr {:.4})\n{}", tuned.alpha, tuned.mrr, eval.to_table());
    write_json(
        &s.layout.report(&name),
        &EnsembleReport {
            a: a.into(),
            b: b.into(),
            alpha: tuned.alpha,
            dev_mrr: tuned.mrr,
            curve: tuned.curve,
            split,
            eval,
        },
    )?;
    s.finish("ensemble")
}

#[derive(Debug, Clone, Serialize)]
struct DepthSummary {
    min: usize,
    median: usize,
    max: usize,
    mean: f64,
}

#[derive(Serialize)]
struct CascadeReport {
    config: CascadeConfig,
    fit: Vec<BoundaryFit>,
    split: Split,
    eval: EvalReport,
    cost: CostReport,
    boundaries: Vec<BoundaryStats>,
    depths: Vec<DepthSummary>,
}

fn depth_summary(sizes: &[usize]) -> DepthSummary {
    let mut v = sizes.to_vec();
    v.sort_unstable();
    DepthSummary {
        min: v.first().copied().unwrap_or(0),
        median: v.get(v.len() / 2).copied().unwrap_or(0),
        max: v.last().copied().unwrap_or(0),
        mean: v.iter().sum::<usize>() as f64 / v.len().max(1) as f64,
    }
}

/// Fits `config` on dev and runs it on the evaluation split.
fn cascade_run(s: &mut Session, config: &CascadeConfig, tag: &str) -> Result<(CascadeReport, ScoreMatrix)> {
    let config = CascadeConfig {
        regressor: cascade_rank::cascade::RegressorHyper {
            seed: derive_seed(s.cfg.seed, "regressor"),
            ..config.regressor.clone()
        },
        ..config.clone()
    };
    let filter = s.filter()?;
    let dev_q = s.queries(Split::Dev)?;
    let dev: Vec<ScoreMatrix> = config.tiers.iter().map(|t| s.scores(t, Split::Dev)).collect::<Result<_>>()?;
    let fitted = fit_cascade(&config, &dev, &dev_q, &filter)?;
    for (t, b) in fitted.cascade.boundaries.iter().enumerate() {
        if let Pruner::Dynamic(model) = &b.pruner {
            match model {
                DepthModel::Shared(r) => save_regressor(r, s.layout.regressor(&format!("{tag}.b{}", t + 1)))?,
                DepthModel::PerDirection { tail, head } => {
                    save_regressor(tail, s.layout.regressor(&format!("{tag}.b{}.tail", t + 1)))?;
                    save_regressor(head, s.layout.regressor(&format!("{tag}.b{}.head", t + 1)))?;
                }
            }
        }
    }

    let split = s.cfg.eval_split;
    let queries = s.queries(split)?;
    let tiers: Vec<ScoreMatrix> = config.tiers.iter().map(|t| s.scores(t, split)).collect::<Result<_>>()?;
    let out = run_cascade(&fitted.cascade, &tiers, &queries, &s.cfg.costs)?;
    let eval = evaluate(&out.scores, &queries, &filter)?;
    let report = CascadeReport {
        config,
        fit: fitted.boundaries,
        split,
        eval,
        cost: out.cost,
        boundaries: out.boundaries,
        depths: out.candidates.iter().map(|c| depth_summary(&c.sizes())).collect(),
    };
    Ok((report, out.scores))
}

pub fn cascade(s: &mut Session) -> Result<()> {
    let config = s.cfg.cascade.clone().context("config has no `cascade` section")?;
    let (report, scores) = cascade_run(s, &config, "cascade")?;
    save_matrix(&scores, s.layout.scores("cascade", report.split))?;
    println!("{}", report.eval.to_table());
    for (t, c) in report.cost.tiers.iter().enumerate() {
        println!("tier {} {:<12} pairs {:<10} cost {}", t + 1, c.scorer, c.pairs, c.cost);
    }
    write_json(&s.layout.report("cascade"), &report)?;
    s.finish("cascade")
}

pub fn evaluate_file(s: &mut Session, matrix: &Path, split: Option<Split>) -> Result<()> {
    let m = load_matrix(matrix).with_context(|| format!("loading {}", matrix.display()))?;
    let split = split.unwrap_or(s.cfg.eval_split);
    let queries = s.queries(split)?;
    let filter = s.filter()?;
    let report = evaluate(&m, &queries, &filter)?;
    println!("{}", report.to_table());
    let stem = matrix.file_stem().and_then(|x| x.to_str()).unwrap_or("matrix");
    write_json(&s.layout.report(&format!("evaluate.{stem}")), &report)?;
    s.finish("evaluate")
}

pub fn analyze(s: &mut Session, names: &[String], split: Option<Split>) -> Result<()> {
    let names: Vec<String> = if names.is_empty() {
        s.cfg.scorers.keys().cloned().collect()
    } else {
        names.to_vec()
    };
    if names.is_empty() {
        bail!("nothing to analyze");
    }
    let split = split.unwrap_or(s.cfg.eval_split);
    let filter = s.filter()?;
    let mats: Vec<ScoreMatrix> = names.iter().map(|n| s.scores(n, split)).collect::<Result<_>>()?;
    let cell = |r: cascade_rank::Result<f64>| r.map(|v| v.to_string()).unwrap_or_default();

    let mut w = csv_writer(&s.layout.analysis("correlation"))?;
    w.write_record(["scorer_a", "scorer_b", "gold_rank_pearson"])?;
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            let r = scorer_rank_correlation(&mats[i], &mats[j], &filter);
            w.write_record([names[i].clone(), names[j].clone(), cell(r)])?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(&s.layout.analysis("margins"))?;
    w.write_record(["scorer", "mean_margin", "excluded", "margin_rr_pearson"])?;
    for (n, m) in names.iter().zip(&mats) {
        let margin = average_margin(m, &filter)?;
        w.write_record([n.clone(), margin.mean.to_string(), margin.excluded.to_string(), cell(margin_rank_correlation(m, &filter))])?;
    }
    w.flush()?;

    // one row per scorer and query: shape of the normalized score row
    let mut rows = Vec::new();
    for (n, m) in names.iter().zip(&mats) {
        for i in 0..m.num_queries() {
            let v: Vec<f64> = m.row(i).iter().map(|&x| x as f64).collect();
            rows.push((format!("{n}:{i}"), distribution_summary(&v)?));
        }
    }
    write_summary_csv(&rows, fs::File::create(s.layout.analysis("distributions"))?)?;
    println!("wrote {}", s.layout.root().join("analysis").display());
    s.finish("analyze")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

#[derive(Serialize)]
struct SweepRun {
    label: String,
    pruning: Pruning,
    mrr: f64,
    cost: CostReport,
}

pub fn pareto(s: &mut Session) -> Result<()> {
    let base = s.cfg.cascade.clone().context("config has no `cascade` section")?;
    if base.boundaries.is_empty() {
        bail!("pareto sweeps need at least two tiers");
    }
    let sweep = s.cfg.sweep.clone().unwrap_or_default();
    let mut grid: Vec<(String, Pruning)> = Vec::new();
    grid.extend(sweep.quantiles.iter().map(|&q| (format!("static-quantile q={q}"), Pruning::StaticQuantile { q })));
    grid.extend(sweep.ks.iter().map(|&k| (format!("static k={k}"), Pruning::Static { k })));
    grid.extend(sweep.dynamic.iter().map(|&q| {
        (format!("dynamic q={q}"), Pruning::Dynamic { q, per_direction: false })
    }));
    if grid.is_empty() {
        grid.extend([0.5, 0.75, 0.9, 0.95, 1.0].map(|q| (format!("static-quantile q={q}"), Pruning::StaticQuantile { q })));
    }

    let mut runs = Vec::new();
    for (i, (label, pruning)) in grid.into_iter().enumerate() {
        let mut config = base.clone();
        config.boundaries.last_mut().expect("checked above").pruning = pruning.clone();
        let (report, _) = cascade_run(s, &config, &format!("pareto{i}"))?;
        info!("{label}: mrr {:.4}, cost {}", report.eval.mrr(), report.cost.total_cost);
        runs.push(SweepRun {
            label,
            pruning,
            mrr: report.eval.mrr(),
            cost: report.cost,
        });
    }
    let points: Vec<ParetoPoint> = runs
        .iter()
        .map(|r| ParetoPoint {
            label: r.label.clone(),
            cost: r.cost.total_cost,
            pairs: r.cost.total_pairs,
            mrr: r.mrr,
        })
        .collect();
    let rows = pareto_table(&points);
    write_pareto_csv(&rows, fs::File::create(s.layout.analysis("pareto"))?)?;
    for r in &rows {
        println!("{:<28} cost {:<14} mrr {:.4}{}", r.label, r.cost, r.mrr, if r.dominated { "  dominated" } else { "" });
    }
    write_json(&s.layout.report("pareto"), &runs)?;
    s.finish("pareto")
}
