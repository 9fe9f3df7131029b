use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use perbif::continuation::ContinuationOptions;
use perbif::weights::{Weight, WeightConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Eigs,
    Autonomous,
    Lscoeff,
    LocalBranches,
    Continue,
    Diagram,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Eigs => "eigs",
            Mode::Autonomous => "autonomous",
            Mode::Lscoeff => "lscoeff",
            Mode::LocalBranches => "local-branches",
            Mode::Continue => "continue",
            Mode::Diagram => "diagram",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KRange {
    pub min: usize,
    pub max: usize,
}

impl KRange {
    /// `"3"` or `"1..4"` (inclusive).
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = match s.split_once("..") {
            Some((a, b)) => (a, b),
            None => (s, s),
        };
        let min = a
            .trim()
            .parse()
            .with_context(|| format!("bad k range {s:?}"))?;
        let max = b
            .trim()
            .parse()
            .with_context(|| format!("bad k range {s:?}"))?;
        Ok(Self { min, max })
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<usize> {
        self.min..=self.max
    }
}

impl Default for KRange {
    fn default() -> Self {
        Self { min: 1, max: 1 }
    }
}

fn default_points() -> usize {
    41
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaWindow {
    pub min: f64,
    pub max: f64,
    /// Grid size for sampled modes.
    #[serde(default = "default_points")]
    pub points: usize,
}

impl LambdaWindow {
    pub fn grid(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.min];
        }
        let h = (self.max - self.min) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.min + h * i as f64).collect()
    }
}

fn one() -> usize {
    1
}

/// A run description as stored on disk. Relative weight paths resolve
/// against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub weight: PathBuf,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub k: KRange,
    pub lambda: LambdaWindow,
    #[serde(default = "one")]
    pub n_subharmonic: usize,
    #[serde(default)]
    pub continuation: ContinuationOptions,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Config after file resolution and validation.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub base_weight: Weight,
    pub weight_path: PathBuf,
}

impl Experiment {
    /// The weight on the `n`-fold period used by every mode but `eigs`.
    pub fn weight(&self) -> Result<Weight> {
        if self.config.n_subharmonic == 1 {
            Ok(self.base_weight.clone())
        } else {
            Ok(self
                .base_weight
                .periodic_extension(self.config.n_subharmonic)?)
        }
    }

    pub fn options(&self) -> ContinuationOptions {
        ContinuationOptions {
            lambda_min: Some(self.config.lambda.min),
            ..self.config.continuation.clone()
        }
    }
}

pub fn parse(text: &str, origin: &Path) -> Result<ExperimentConfig> {
    serde_json::from_str(text)
        .map_err(|e| anyhow::anyhow!("{}:{}:{}: {}", origin.display(), e.line(), e.column(), e))
}

pub fn load(path: &Path) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text, path)
}

impl ExperimentConfig {
    pub fn resolve(self, config_path: &Path) -> Result<Experiment> {
        let w = &self.lambda;
        if !(w.min.is_finite() && w.max.is_finite() && w.min < w.max) {
            bail!(
                "lambda window [{}, {}] is empty or not finite",
                w.min,
                w.max
            );
        }
        if w.points == 0 {
            bail!("lambda.points must be positive");
        }
        if self.k.min > self.k.max {
            bail!("k range {}..{} is empty", self.k.min, self.k.max);
        }
        if self.n_subharmonic == 0 {
            bail!("n_subharmonic must be at least 1");
        }
        self.continuation
            .validate()
            .context("continuation options")?;

        let dir = config_path.parent().unwrap_or(Path::new("."));
        let weight_path = dir.join(&self.weight);
        let text = std::fs::read_to_string(&weight_path)
            .with_context(|| format!("weight file {}", weight_path.display()))?;
        let wc: WeightConfig = serde_json::from_str(&text).map_err(|e| {
            anyhow::anyhow!(
                "{}:{}:{}: {}",
                weight_path.display(),
                e.line(),
                e.column(),
                e
            )
        })?;
        let base_weight = wc
            .build()
            .with_context(|| format!("weight file {}", weight_path.display()))?;
        Ok(Experiment {
            config: self,
            base_weight,
            weight_path,
        })
    }
}
