//! Output directory layout and the run manifest.
//!
//! ```text
//! <out>/models/     KGE and regressor checkpoints
//! <out>/scores/     score matrices
//! <out>/reports/    JSON reports
//! <out>/analysis/   CSV diagnostics
//! <out>/manifest.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use cascade_rank::cascade::REGRESSOR_VERSION;
use cascade_rank::kg::Split;
use cascade_rank::kge::CHECKPOINT_VERSION;
use cascade_rank::matrix::FORMAT_VERSION;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const DIRS: [&str; 4] = ["models", "scores", "reports", "analysis"];

#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for d in DIRS {
            let p = root.join(d);
            fs::create_dir_all(&p).with_context(|| format!("creating {}", p.display()))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn model(&self, scorer: &str) -> PathBuf {
        self.root.join("models").join(format!("{scorer}.ckge"))
    }

    pub fn regressor(&self, name: &str) -> PathBuf {
        self.root.join("models").join(format!("{name}.cqrg"))
    }

    pub fn scores(&self, name: &str, split: Split) -> PathBuf {
        self.root.join("scores").join(format!("{name}.{}.cscm", split.name()))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(format!("{name}.json"))
    }

    pub fn analysis(&self, name: &str) -> PathBuf {
        self.root.join("analysis").join(format!("{name}.csv"))
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Formats {
    pub score_matrix: u32,
    pub kge_checkpoint: u32,
    pub regressor_checkpoint: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub formats: Formats,
    pub created_unix: u64,
    /// sha256 of every artifact under the output directory.
    pub artifacts: BTreeMap<String, String>,
}

fn collect(dir: &Path, root: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect(&path, root, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("walk stays under root");
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            out.insert(key, hex::encode(Sha256::digest(fs::read(&path)?)));
        }
    }
    Ok(())
}

/// Rewrites the manifest to describe the latest command and every artifact
/// currently in the layout.
pub fn write_manifest(layout: &Layout, command: &str, seed: u64, config_sha256: &str) -> Result<Manifest> {
    let mut artifacts = BTreeMap::new();
    for d in DIRS {
        collect(&layout.root.join(d), &layout.root, &mut artifacts)?;
    }
    let manifest = Manifest {
        tool: "cascade-rank".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        seed,
        config_sha256: config_sha256.into(),
        formats: Formats {
            score_matrix: FORMAT_VERSION,
            kge_checkpoint: CHECKPOINT_VERSION,
            regressor_checkpoint: REGRESSOR_VERSION,
        },
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        artifacts,
    };
    write_json(&layout.manifest(), &manifest)?;
    Ok(manifest)
}
