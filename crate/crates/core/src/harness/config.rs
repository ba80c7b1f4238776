//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::data::{generate_synthetic, load_dataset, LoadOptions, RangeMode, SyntheticSpec};
use crate::plausibility::ConstraintDirection;
use crate::threshold::{MajorityReading, RobustnessMode};
use crate::{Dataset, ForestConfig};

/// How explanations are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Naive,
    DirectSaa,
    RobustSaa,
    Convex,
    /// Naive threshold plus the isolation-forest constraint, one run per
    /// contamination level.
    IsoPlausibility,
    /// Naive threshold plus the 1-LOF penalty, one run per weight.
    LofPlausibility,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::DirectSaa => "direct-saa",
            Method::RobustSaa => "robust-saa",
            Method::Convex => "convex",
            Method::IsoPlausibility => "iso-plausibility",
            Method::LofPlausibility => "lof-plausibility",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [
            Method::Naive,
            Method::DirectSaa,
            Method::RobustSaa,
            Method::Convex,
            Method::IsoPlausibility,
            Method::LofPlausibility,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSource {
    Csv {
        csv: PathBuf,
        schema: PathBuf,
        /// Label value mapped to class 1.
        #[serde(default)]
        positive_label: Option<String>,
    },
    Synthetic {
        #[serde(flatten)]
        spec: SyntheticSpec,
        /// Defaults to the master seed.
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            spec: SyntheticSpec::linear(2000, 4, 0, 0.05),
            seed: None,
        }
    }
}

impl DatasetSource {
    /// Relative CSV paths resolve against `base`.
    pub fn load(&self, master_seed: u64, base: &Path) -> Result<Dataset, HarnessError> {
        match self {
            DatasetSource::Csv {
                csv,
                schema,
                positive_label,
            } => {
                let options = LoadOptions {
                    range_mode: RangeMode::Strict,
                    positive_label: positive_label.clone(),
                };
                Ok(load_dataset(base.join(csv), base.join(schema), &options)?)
            }
            DatasetSource::Synthetic { spec, seed } => {
                Ok(generate_synthetic(spec, seed.unwrap_or(master_seed))?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsolationSettings {
    pub n_trees: usize,
    /// `None` means `min(256, n)`.
    pub subsample: Option<usize>,
    pub direction: ConstraintDirection,
}

impl Default for IsolationSettings {
    fn default() -> Self {
        IsolationSettings {
            n_trees: 50,
            subsample: None,
            direction: ConstraintDirection::AsPrinted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolvingConfig {
    /// Share of the data the first forest sees.
    pub train_fraction: f64,
}

impl Default for EvolvingConfig {
    fn default() -> Self {
        EvolvingConfig {
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetSource,
    pub forest: ForestConfig,
    /// `None` means 40, or 20 for forests of 400 trees or more.
    pub repetitions: Option<usize>,
    pub queries: usize,
    pub target: u8,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub methods: Vec<Method>,
    pub contaminations: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub isolation: IsolationSettings,
    pub lof_anchors: usize,
    /// Per-solve wall-clock budget.
    pub timeout_secs: f64,
    /// Retrain with the first forest's seed; validity is then 1 by construction.
    pub same_seed_retrain: bool,
    pub evolving: EvolvingConfig,
    pub reading: MajorityReading,
    /// Worker threads; `Some(1)` runs serially, `None` uses all cores.
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            dataset: DatasetSource::default(),
            forest: ForestConfig::default(),
            repetitions: None,
            queries: 5,
            target: 1,
            alphas: vec![0.5, 0.4, 0.3, 0.2, 0.1, 0.05, 0.01],
            betas: vec![0.05, 0.1],
            methods: vec![
                Method::Naive,
                Method::DirectSaa,
                Method::RobustSaa,
                Method::Convex,
            ],
            contaminations: vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
            lambdas: vec![1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2],
            isolation: IsolationSettings::default(),
            lof_anchors: 10,
            timeout_secs: 60.0,
            same_seed_retrain: false,
            evolving: EvolvingConfig::default(),
            reading: MajorityReading::default(),
            threads: None,
        }
    }
}

/// One solve configuration: a method with its parameter values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setting {
    pub method: Method,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    /// Contamination or LOF weight.
    pub param: Option<f64>,
}

impl Setting {
    pub fn mode(&self) -> RobustnessMode {
        match self.method {
            Method::DirectSaa => RobustnessMode::DirectSaa,
            Method::RobustSaa => RobustnessMode::RobustSaa {
                beta: self.beta.expect("robust-saa settings carry beta"),
            },
            Method::Convex => RobustnessMode::Convex,
            _ => RobustnessMode::Naive,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml_str(&text)
    }

    pub fn repetitions(&self) -> usize {
        self.repetitions
            .unwrap_or(if self.forest.n_trees >= 400 { 20 } else { 40 })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.forest
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.repetitions() == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.queries == 0 {
            return bad("queries must be at least 1".into());
        }
        if self.target > 1 {
            return bad(format!("target must be 0 or 1, got {}", self.target));
        }
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return bad(format!("alpha {a} outside (0, 1)"));
        }
        if let Some(b) = self.betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return bad(format!("beta {b} outside (0, 1)"));
        }
        if let Some(c) = self.contaminations.iter().find(|c| !(**c > 0.0 && **c <= 0.5)) {
            return bad(format!("contamination {c} outside (0, 0.5]"));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return bad(format!("lambda {l} must be finite and non-negative"));
        }
        let needs = |m: Method, grid: &[f64], name: &str| {
            if self.methods.contains(&m) && grid.is_empty() {
                Err(HarnessError::Config(format!("{m} needs a non-empty {name} list")))
            } else {
                Ok(())
            }
        };
        needs(Method::DirectSaa, &self.alphas, "alphas")?;
        needs(Method::RobustSaa, &self.alphas, "alphas")?;
        needs(Method::RobustSaa, &self.betas, "betas")?;
        needs(Method::IsoPlausibility, &self.contaminations, "contaminations")?;
        needs(Method::LofPlausibility, &self.lambdas, "lambdas")?;
        if self.isolation.n_trees == 0 {
            return bad("isolation.n_trees must be at least 1".into());
        }
        if self.lof_anchors == 0 {
            return bad("lof_anchors must be at least 1".into());
        }
        if !(self.timeout_secs > 0.0) {
            return bad("timeout_secs must be positive".into());
        }
        let f = self.evolving.train_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return bad(format!("train_fraction {f} outside (0, 1]"));
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }

    /// Settings in report order: methods as listed, then parameter grids.
    pub fn settings(&self) -> Vec<Setting> {
        let mut out = Vec::new();
        let plain = |method| Setting {
            method,
            alpha: None,
            beta: None,
            param: None,
        };
        for &method in &self.methods {
            match method {
                Method::Naive | Method::Convex => out.push(plain(method)),
                Method::DirectSaa => out.extend(self.alphas.iter().map(|&a| Setting {
                    alpha: Some(a),
                    ..plain(method)
                })),
                Method::RobustSaa => {
                    for &a in &self.alphas {
                        out.extend(self.betas.iter().map(|&b| Setting {
                            alpha: Some(a),
                            beta: Some(b),
                            ..plain(method)
                        }));
                    }
                }
                Method::IsoPlausibility => out.extend(self.contaminations.iter().map(|&c| Setting {
                    param: Some(c),
                    ..plain(method)
                })),
                Method::LofPlausibility => out.extend(self.lambdas.iter().map(|&l| Setting {
                    param: Some(l),
                    ..plain(method)
                })),
            }
        }
        out
    }
}
