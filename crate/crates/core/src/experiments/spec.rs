use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_mnist_idx, make_bgdigits_with, make_gauss2d, BgDigitsOptions, GroupStyle, GroupedDataset};
use crate::error::{Error, Result};
use crate::fairness::{AttributeOracle, OracleTraining};
use crate::trainer::{TrainConfig, DEFAULT_MAX_GRAD_NORM};

/// Where the training data comes from. Synthetic sets are regenerated per
/// run from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    Gauss2d {
        n: usize,
        /// Share of group 0.
        ratio: f64,
        separation: f64,
        spreads: [f64; 2],
    },
    Bgdigits {
        n: usize,
        ratio: f64,
        #[serde(default = "default_side")]
        side: usize,
        #[serde(default)]
        style: GroupStyle,
    },
    /// Rows written by [`GroupedDataset::write_csv`].
    Csv { path: PathBuf },
    /// MNIST IDX pair; the inverted images form group 1.
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        invert_fraction: f64,
    },
}

fn default_side() -> usize {
    8
}

impl DatasetSpec {
    pub fn load(&self, seed: u64) -> Result<GroupedDataset> {
        match self {
            Self::Gauss2d {
                n,
                ratio,
                separation,
                spreads,
            } => make_gauss2d(*n, *ratio, seed, *separation, *spreads),
            Self::Bgdigits { n, ratio, side, style } => make_bgdigits_with(
                *n,
                *ratio,
                seed,
                BgDigitsOptions {
                    side: *side,
                    style: *style,
                    ..BgDigitsOptions::default()
                },
            ),
            Self::Csv { path } => GroupedDataset::read_csv(path),
            Self::Mnist {
                images,
                labels,
                invert_fraction,
            } => load_mnist_idx(images, labels, *invert_fraction, seed),
        }
    }

    /// Copy with group 0 making up `ratio` of the data.
    pub fn with_ratio(&self, ratio: f64) -> Result<Self> {
        let mut out = self.clone();
        match &mut out {
            Self::Gauss2d { ratio: r, .. } | Self::Bgdigits { ratio: r, .. } => *r = ratio,
            Self::Mnist { invert_fraction, .. } => *invert_fraction = 1.0 - ratio,
            Self::Csv { .. } => return Err(Error::Config("a CSV dataset has a fixed group ratio".into())),
        }
        Ok(out)
    }

    /// Oracle used when the spec names none.
    pub fn default_oracle(&self) -> OracleSpec {
        match self {
            Self::Gauss2d { .. } => OracleSpec::Analytic2d,
            Self::Bgdigits {
                style: GroupStyle::Invert,
                ..
            } => OracleSpec::CornerPixel { light_group: 1 },
            Self::Bgdigits {
                style: GroupStyle::Shade,
                ..
            } => OracleSpec::CornerPixel { light_group: 0 },
            Self::Mnist { .. } => OracleSpec::CornerPixel { light_group: 1 },
            Self::Csv { .. } => OracleSpec::Trained(OracleTraining::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OracleSpec {
    Analytic2d,
    CornerPixel {
        light_group: u8,
    },
    Trained(OracleTraining),
}

impl OracleSpec {
    /// Builds the oracle; a trained one is fitted on `ds`.
    pub fn build(&self, ds: &GroupedDataset) -> Result<AttributeOracle> {
        match self {
            Self::Analytic2d => Ok(AttributeOracle::Analytic2d),
            Self::CornerPixel { light_group } => AttributeOracle::corner_pixel(*light_group),
            Self::Trained(opts) => AttributeOracle::train(ds, opts),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "lowercase", deny_unknown_fields)]
pub enum SweepAxis {
    #[default]
    None,
    /// Maximum gradient norms for the clipped trainer.
    C(Vec<f64>),
    /// Group-0 shares of the dataset.
    Ratio(Vec<f64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::C(_) => "c",
            Self::Ratio(_) => "ratio",
        }
    }
}

/// A full experiment grid, usually read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sweep: SweepAxis,
    pub seeds: Vec<u64>,
    #[serde(default = "default_audit_samples")]
    pub audit_samples: usize,
    #[serde(default)]
    pub oracle: Option<OracleSpec>,
    pub output_dir: PathBuf,
    /// Energy distance between real and generated samples above which a
    /// finished run is flagged as not converged.
    #[serde(default = "default_degenerate_threshold")]
    pub degenerate_threshold: f64,
    /// Rows per side used for the energy distance.
    #[serde(default = "default_quality_samples")]
    pub quality_samples: usize,
    /// Write every run's telemetry and chart files, not just the aggregates.
    #[serde(default = "default_true")]
    pub per_run_artifacts: bool,
}

fn default_audit_samples() -> usize {
    5000
}

/// Sits above the energy distance of biased but working vanilla runs on the
/// 2-D mixtures and below runs that collapsed onto one group.
pub const DEFAULT_DEGENERATE_THRESHOLD: f64 = 0.3;

fn default_degenerate_threshold() -> f64 {
    DEFAULT_DEGENERATE_THRESHOLD
}

fn default_quality_samples() -> usize {
    500
}

fn default_true() -> bool {
    true
}

impl ExperimentSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("an experiment needs at least one seed".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        match &self.sweep {
            SweepAxis::None => {}
            SweepAxis::C(values) | SweepAxis::Ratio(values) => {
                if values.is_empty() {
                    return Err(Error::Config("sweep has no values".into()));
                }
                if let Some(v) = values.iter().find(|v| v.is_nan() || **v <= 0.0) {
                    return Err(Error::Config(format!("sweep value {v} must be positive")));
                }
            }
        }
        if let SweepAxis::Ratio(values) = &self.sweep {
            if let Some(v) = values.iter().find(|v| **v >= 1.0) {
                return Err(Error::Config(format!("ratio {v} must be below 1")));
            }
        }
        if self.audit_samples < crate::fairness::MIN_AUDIT_SAMPLES {
            return Err(Error::Config(format!("audit_samples {} too small", self.audit_samples)));
        }
        if self.quality_samples == 0 {
            return Err(Error::Config("quality_samples must be positive".into()));
        }
        self.train.validate()
    }

    pub fn oracle_spec(&self) -> OracleSpec {
        self.oracle.clone().unwrap_or_else(|| self.dataset.default_oracle())
    }

    /// `C` for the clipped trainer when the grid does not sweep it.
    pub fn repfair_c(&self) -> f64 {
        self.train.max_grad_norm.unwrap_or(DEFAULT_MAX_GRAD_NORM)
    }
}
