use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use samcnet::model::{ModelConfig, TrainConfig};
use samcnet::pointset::{generate_synthetic, load_csv, Dataset, SyntheticSpec};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "SAMCNET_SEED";
pub const POINTS_FILE: &str = "points.csv";
pub const LABELS_FILE: &str = "labels.csv";

/// Where a run's patterns come from. Exactly one of `dir`, the
/// `points`/`labels` pair, or `synthetic` must be given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    /// Hold out validation and test parts. When false every part is the
    /// full corpus, which only makes sense for memorization checks.
    #[serde(default = "default_split")]
    pub split: bool,
}

fn default_split() -> bool {
    true
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            points: None,
            labels: None,
            synthetic: None,
            split: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub output: OutputConfig,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Seed from the environment override, if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(
            v.trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer"))?,
        )),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => bail!("{SEED_ENV}: {e}"),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("invalid run config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, resolves relative paths against its directory,
    /// and applies the seed override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_json(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.dir, &mut cfg.data.points, &mut cfg.data.labels]
            .into_iter()
            .flatten()
        {
            *p = resolve(base, p);
        }
        cfg.output.dir = resolve(base, &cfg.output.dir);
        if let Some(seed) = env_seed()? {
            cfg.train.seed = seed;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        let sources = usize::from(d.dir.is_some())
            + usize::from(d.points.is_some() || d.labels.is_some())
            + usize::from(d.synthetic.is_some());
        if sources != 1 {
            bail!("data must give exactly one of `dir`, `points`+`labels`, or `synthetic`");
        }
        if d.points.is_some() != d.labels.is_some() {
            bail!("data.points and data.labels must be given together");
        }
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn load_data(&self) -> Result<Dataset> {
        let d = &self.data;
        if let Some(spec) = &d.synthetic {
            return Ok(generate_synthetic(spec)?);
        }
        let (points, labels) = match (&d.dir, &d.points, &d.labels) {
            (Some(dir), _, _) => (dir.join(POINTS_FILE), dir.join(LABELS_FILE)),
            (None, Some(p), Some(l)) => (p.clone(), l.clone()),
            _ => bail!("no data source configured"),
        };
        Ok(load_csv(points, labels)?)
    }
}

pub fn load_dir(dir: &Path) -> Result<Dataset> {
    Ok(load_csv(dir.join(POINTS_FILE), dir.join(LABELS_FILE))
        .with_context(|| format!("loading dataset from {}", dir.display()))?)
}
