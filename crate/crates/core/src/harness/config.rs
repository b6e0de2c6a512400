use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::data::{Family, SyntheticConfig};
use crate::error::{Error, Result};
use crate::models::ImputerConfig;

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "LBRM_OUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Auroc,
    #[serde(rename = "tpr_at_0_1")]
    TprAt01,
    TprAtTop25,
}

impl MetricName {
    pub fn all() -> Vec<MetricName> {
        vec![
            MetricName::Auroc,
            MetricName::TprAt01,
            MetricName::TprAtTop25,
        ]
    }

    pub fn key(self) -> &'static str {
        match self {
            MetricName::Auroc => "auroc",
            MetricName::TprAt01 => "tpr_at_0_1",
            MetricName::TprAtTop25 => "tpr_at_top25",
        }
    }
}

/// Optional generator overrides. Unset fields fall back to the generator defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ar_coefficient: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<[usize; 2]>,
}

impl GeneratorOverrides {
    fn apply(&self, cfg: &mut SyntheticConfig) {
        if let Some(f) = self.frequency {
            cfg.frequency = Some(f);
        }
        if let Some(a) = self.amplitude {
            cfg.amplitude = a;
        }
        if let Some(n) = self.noise {
            cfg.noise = n;
        }
        if let Some(phi) = self.ar_coefficient {
            cfg.ar_coefficient = phi;
        }
        if let Some(c) = self.components {
            cfg.components = c;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Family-A corpus of `count` series. Scenario 1 draws its public set
    /// from an equally sized family-B corpus instead.
    Synthetic {
        count: usize,
        len: usize,
        #[serde(default = "one")]
        dims: usize,
        /// Overrides for family A (private and test series).
        #[serde(default)]
        family_a: GeneratorOverrides,
        /// Overrides for family B (scenario-1 public series).
        #[serde(default)]
        family_b: GeneratorOverrides,
    },
    /// Series from a CSV file. For scenario 1, `public_path` names a second
    /// corpus from a different distribution whose public split is used.
    Csv {
        path: PathBuf,
        #[serde(default)]
        public_path: Option<PathBuf>,
    },
}

fn one() -> usize {
    1
}

impl DataConfig {
    pub fn synthetic(&self, family: Family, seed: u64) -> Option<SyntheticConfig> {
        match self {
            DataConfig::Synthetic {
                count,
                len,
                dims,
                family_a,
                family_b,
            } => {
                let mut cfg = SyntheticConfig::new(family, *count, *len, seed);
                cfg.dims = *dims;
                match family {
                    Family::A => family_a.apply(&mut cfg),
                    Family::B => family_b.apply(&mut cfg),
                }
                Some(cfg)
            }
            DataConfig::Csv { .. } => None,
        }
    }
}

fn default_tolerance() -> f64 {
    0.1
}

fn yes() -> bool {
    true
}

/// Everything needed to run one scenario end to end.
///
/// Every seed used by the pipeline is derived from `seed`; seeds inside the
/// nested imputer and attack configs are overwritten.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: u8,
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    /// Reference model; in scenario 2 also the public base model.
    pub reference: ImputerConfig,
    /// Target model trained on the private set (scenario 1).
    #[serde(default)]
    pub target: Option<ImputerConfig>,
    /// Fine-tuning schedule on the private set (scenario 2).
    #[serde(default)]
    pub fine_tune: Option<ImputerConfig>,
    /// Scenario 2: train the reference separately instead of reusing the base.
    #[serde(default)]
    pub independent_reference: bool,
    pub attack: AttackConfig,
    #[serde(default = "MetricName::all")]
    pub metrics: Vec<MetricName>,
    #[serde(default = "default_tolerance")]
    pub parity_tolerance: f64,
    #[serde(default)]
    pub override_parity: bool,
    /// z-score every series on its own before training and scoring.
    #[serde(default = "yes")]
    pub normalize: bool,
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = origin.parent().unwrap_or_else(|| Path::new("."));
        if let DataConfig::Csv { path, public_path } = &mut cfg.data {
            for p in std::iter::once(path).chain(public_path.as_mut()) {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        if let Some(out) = cfg.output_dir.as_mut() {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        cfg.validate().map_err(|e| Error::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        match self.scenario {
            1 => {
                let target = self
                    .target
                    .as_ref()
                    .ok_or_else(|| Error::Argument("scenario 1 needs a [target] config".into()))?;
                target.validate()?;
            }
            2 => {
                let tune = self.fine_tune.as_ref().ok_or_else(|| {
                    Error::Argument("scenario 2 needs a [fine_tune] config".into())
                })?;
                tune.validate()?;
                if tune.architecture != self.reference.architecture {
                    return Err(Error::Argument(
                        "fine_tune must use the reference (base) architecture".into(),
                    ));
                }
            }
            other => {
                return Err(Error::Argument(format!(
                    "scenario must be 1 or 2, got {other}"
                )))
            }
        }
        self.reference.validate()?;
        self.attack.validate()?;
        for family in [Family::A, Family::B] {
            if let Some(synth) = self.data.synthetic(family, self.seed) {
                synth.validate()?;
            }
        }
        if !(self.parity_tolerance > 0.0) {
            return Err(Error::Argument("parity_tolerance must be > 0".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::Argument("metrics list is empty".into()));
        }
        Ok(())
    }

    /// Output directory: explicit override, then `LBRM_OUT_DIR`, then the
    /// config, then `lbrm-out`.
    pub fn resolve_output_dir(&self, explicit: Option<&Path>) -> PathBuf {
        if let Some(p) = explicit {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(p);
        }
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("lbrm-out"))
    }
}
