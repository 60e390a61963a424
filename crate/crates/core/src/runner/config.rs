use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmc::HmcConfig;
use crate::optimizer::OptimizerConfig;
use crate::sivi::SiviConfig;
use crate::targets::{Preprocess, ToyTarget};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Unbiased gradient with reverse-conditional HMC.
    Uivi,
    /// The SIVI surrogate bound.
    Sivi,
    /// Mean-field Gaussian, no mixing noise.
    Explicit,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Uivi => "uivi",
            Method::Sivi => "sivi",
            Method::Explicit => "explicit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TargetSpec {
    /// One of the 2-D synthetic densities.
    Toy { name: String },
    /// Logistic regression on synthetic Gaussian blobs.
    Blobs {
        #[serde(default = "defaults::blobs_train")]
        n_train: usize,
        #[serde(default = "defaults::blobs_test")]
        n_test: usize,
        #[serde(default = "defaults::blobs_dim")]
        dim: usize,
        #[serde(default = "defaults::blobs_classes")]
        classes: usize,
        #[serde(default = "defaults::blobs_spread")]
        center_scale: f64,
    },
    /// Logistic regression on CSV data (`label,features...` with a header).
    Csv {
        train: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
        #[serde(default)]
        preprocess: Preprocess,
    },
}

mod defaults {
    pub fn blobs_train() -> usize {
        2000
    }
    pub fn blobs_test() -> usize {
        500
    }
    pub fn blobs_dim() -> usize {
        20
    }
    pub fn blobs_classes() -> usize {
        4
    }
    pub fn blobs_spread() -> f64 {
        0.3
    }
}

impl TargetSpec {
    /// 4-class, 20-feature blobs with overlapping classes.
    pub fn default_blobs() -> Self {
        TargetSpec::Blobs {
            n_train: defaults::blobs_train(),
            n_test: defaults::blobs_test(),
            dim: defaults::blobs_dim(),
            classes: defaults::blobs_classes(),
            center_scale: defaults::blobs_spread(),
        }
    }
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec::Toy {
            name: "banana".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilyConfig {
    pub eps_dim: usize,
    pub hidden: Vec<usize>,
    /// Initial conditional standard deviation (all coordinates).
    pub init_scale: f64,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self {
            eps_dim: 3,
            hidden: vec![50, 50],
            init_scale: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// ELBO estimate cadence in iterations; 0 disables intermediate estimates.
    pub elbo_every: usize,
    pub elbo_outer: usize,
    pub elbo_inner: usize,
    /// Test log-likelihood cadence; 0 disables it. Data targets only.
    pub test_every: usize,
    pub test_samples: usize,
    /// Draws written to `samples.csv` at the end of a run.
    pub posterior_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            elbo_every: 100,
            elbo_outer: 100,
            elbo_inner: 10_000,
            test_every: 1000,
            test_samples: 8000,
            posterior_samples: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: Method,
    pub target: TargetSpec,
    pub family: FamilyConfig,
    pub iterations: usize,
    /// Minibatch size for data targets; `None` uses the full training set.
    pub batch_size: Option<usize>,
    /// Draws `(eps, u)` per gradient estimate.
    pub samples_per_step: usize,
    pub optimizer: OptimizerConfig,
    pub hmc: HmcConfig,
    pub sivi: SiviConfig,
    pub eval: EvalConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Uivi,
            target: TargetSpec::default(),
            family: FamilyConfig::default(),
            iterations: 50_000,
            batch_size: None,
            samples_per_step: 1,
            optimizer: OptimizerConfig::default(),
            hmc: HmcConfig::default(),
            sivi: SiviConfig::default(),
            eval: EvalConfig::default(),
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run configs always serialize")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.hmc
            .validate()
            .map_err(|e| Error::Config(format!("hmc: {e}")))?;
        if self.samples_per_step == 0 {
            return Err(Error::Config("samples_per_step must be at least 1".into()));
        }
        if self.family.init_scale.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Config("family.init_scale must be positive".into()));
        }
        if self.method == Method::Sivi && self.sivi.l_final == 0 {
            return Err(Error::Config("sivi.l_final must be at least 1".into()));
        }
        if self.eval.elbo_outer == 0 || self.eval.elbo_inner == 0 || self.eval.test_samples == 0 {
            return Err(Error::Config("evaluation sample counts must be at least 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        match &self.target {
            TargetSpec::Toy { name } => {
                ToyTarget::from_name(name)?;
                if self.batch_size.is_some() {
                    return Err(Error::Config("batch_size only applies to data targets".into()));
                }
            }
            TargetSpec::Blobs {
                n_train,
                n_test,
                dim,
                classes,
                center_scale,
            } => {
                if *n_train == 0 || *n_test == 0 || *dim == 0 || *classes < 2 {
                    return Err(Error::Config(
                        "blobs need non-empty splits, dim >= 1 and at least two classes".into(),
                    ));
                }
                if !(center_scale.is_finite() && *center_scale >= 0.0) {
                    return Err(Error::Config("blobs center_scale must be finite and >= 0".into()));
                }
            }
            TargetSpec::Csv { train, test, .. } => {
                for p in std::iter::once(train).chain(test.iter()) {
                    if !p.is_file() {
                        return Err(Error::Config(format!("dataset {} does not exist", p.display())));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.target = TargetSpec::Blobs {
            n_train: 10,
            n_test: 5,
            dim: 3,
            classes: 2,
            center_scale: 2.0,
        };
        cfg.batch_size = Some(4);
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_files_use_defaults() {
        let cfg = RunConfig::from_toml(
            "method = \"sivi\"\niterations = 5\n[target]\nkind = \"toy\"\nname = \"x-shaped\"\n",
        )
        .unwrap();
        assert_eq!(cfg.method, Method::Sivi);
        assert_eq!(cfg.family, FamilyConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(RunConfig::from_toml("iterations = 5\nbogus = 1\n").is_err());
        assert!(RunConfig::from_toml("[target]\nkind = \"toy\"\nname = \"donut\"\n")
            .unwrap()
            .validate()
            .is_err());
        let cfg = RunConfig::from_toml(
            "[target]\nkind = \"csv\"\ntrain = \"/definitely/not/here.csv\"\n",
        )
        .unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = RunConfig::default();
        cfg.batch_size = Some(10);
        assert!(cfg.validate().is_err());
    }
}
