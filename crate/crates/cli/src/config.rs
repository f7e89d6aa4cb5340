//! Experiment configuration: one JSON document per experiment. Relative
//! paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cascade_rank::cascade::CascadeConfig;
use cascade_rank::kg::planted::PlantedConfig;
use cascade_rank::kg::{load_dataset, KnowledgeGraph, Split};
use cascade_rank::kge::TrainConfig;
use cascade_rank::matrix::CostModel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScorerSpec {
    Kge {
        #[serde(default)]
        train: TrainConfig,
    },
    Synthetic {
        fidelity: f64,
    },
    /// Precomputed raw score matrices, one per split.
    Matrix {
        dev: PathBuf,
        test: PathBuf,
    },
}

/// Pruning grids for `pareto`; each value replaces the pruning of the last
/// cascade boundary.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub quantiles: Vec<f64>,
    pub ks: Vec<usize>,
    pub dynamic: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Generated graph, used when `dataset` is absent.
    #[serde(default)]
    pub planted: Option<PlantedConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_eval_split")]
    pub eval_split: Split,
    #[serde(default)]
    pub scorers: BTreeMap<String, ScorerSpec>,
    #[serde(default)]
    pub cascade: Option<CascadeConfig>,
    #[serde(default)]
    pub costs: CostModel,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

fn default_eval_split() -> Split {
    Split::Test
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            planted: None,
            seed: 0,
            out: None,
            eval_split: default_eval_split(),
            scorers: BTreeMap::new(),
            cascade: None,
            costs: CostModel::default(),
            sweep: None,
        }
    }
}

/// Stable 64-bit seed for one stochastic component.
pub fn derive_seed(seed: u64, component: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(component.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

impl ExperimentConfig {
    /// Reads a config and rebases its relative paths onto the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = cfg.dataset.as_mut() {
            rebase(d);
        }
        if let Some(o) = cfg.out.as_mut() {
            rebase(o);
        }
        for spec in cfg.scorers.values_mut() {
            if let ScorerSpec::Matrix { dev, test } = spec {
                rebase(dev);
                rebase(test);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, spec) in &self.scorers {
            if name.is_empty() || name.contains(['/', '\\', '.']) {
                bail!("scorer name `{name}` must be non-empty without `/`, `\\` or `.`");
            }
            match spec {
                ScorerSpec::Kge { train } => train.validate()?,
                ScorerSpec::Synthetic { fidelity } if !(0.0..=1.0).contains(fidelity) => {
                    bail!("scorer `{name}`: fidelity {fidelity} outside [0, 1]")
                }
                _ => {}
            }
        }
        if let Some(c) = &self.cascade {
            c.validate()?;
            if let Some(missing) = c.tiers.iter().find(|t| !self.scorers.contains_key(*t)) {
                bail!("cascade tier `{missing}` is not a configured scorer");
            }
        }
        self.costs.validate()?;
        if self.eval_split == Split::Train {
            bail!("eval_split must be dev or test");
        }
        Ok(())
    }

    pub fn knowledge_graph(&self) -> Result<KnowledgeGraph> {
        match (&self.dataset, &self.planted) {
            (Some(dir), _) => load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display())),
            (None, Some(p)) => {
                let cfg = PlantedConfig {
                    seed: derive_seed(self.seed, "planted"),
                    ..p.clone()
                };
                Ok(cfg.generate()?)
            }
            (None, None) => bail!("config names neither `dataset` nor `planted`"),
        }
    }

    pub fn scorer(&self, name: &str) -> Result<&ScorerSpec> {
        self.scorers
            .get(name)
            .with_context(|| format!("no scorer named `{name}` in config"))
    }

    /// sha256 of the canonical JSON form, after overrides.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
