//! The pipeline configuration file. Every field has a default, so `{}` is a
//! valid configuration.

use std::fs;
use std::path::{Path, PathBuf};

use lsindy::grid_model::{ParameterRanges, Topology};
use lsindy::library::LibrarySpec;
use lsindy::ode::IntegrationConfig;
use lsindy::reduction::{RankCriterion, DEFAULT_ENERGY};
use lsindy::snapshots::DerivativeMode;
use lsindy::sparse_id::RegressionConfig;
use lsindy::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub network: NetworkSource,
    pub disturbance: Disturbance,
    pub integration: IntegrationConfig,
    pub derivatives: DerivativeMode,
    /// Measurement noise on the snapshot states; off when absent.
    pub noise: Option<NoiseSpec>,
    pub reduction: Reduction,
    pub library: LibrarySpec,
    pub regression: RegressionConfig,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            network: NetworkSource::default(),
            disturbance: Disturbance::default(),
            integration: IntegrationConfig::default(),
            derivatives: DerivativeMode::default(),
            noise: None,
            reduction: Reduction::default(),
            library: LibrarySpec::default(),
            regression: RegressionConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSource {
    File { path: PathBuf },
    Synthetic(SyntheticSpec),
}

impl Default for NetworkSource {
    fn default() -> Self {
        NetworkSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_g: usize,
    pub topology: Topology,
    pub seed: u64,
    pub ranges: ParameterRanges,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_g: 54,
            topology: Topology::RandomSparse { density: 0.1 },
            seed: 0,
            ranges: ParameterRanges::default(),
        }
    }
}

/// One value for every generator, or one per generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Magnitude {
    Uniform(f64),
    PerGenerator(Vec<f64>),
}

impl Magnitude {
    pub fn expand(&self, n_g: usize, what: &str) -> Result<Vec<f64>> {
        let v = match self {
            Magnitude::Uniform(a) => vec![*a; n_g],
            Magnitude::PerGenerator(v) if v.len() == n_g => v.clone(),
            Magnitude::PerGenerator(v) => {
                return Err(Error::Config(format!(
                    "{what}: {} magnitudes for {n_g} generators",
                    v.len()
                )))
            }
        };
        if let Some(bad) = v.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::Config(format!(
                "{what}: magnitude {bad} must be finite and >= 0"
            )));
        }
        Ok(v)
    }
}

/// Initial condition: the equilibrium plus independent uniform offsets in
/// `[-a_i, a_i]` on each angle and frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Disturbance {
    pub angle: Magnitude,
    pub frequency: Magnitude,
    pub seed: u64,
}

impl Default for Disturbance {
    fn default() -> Self {
        Self {
            angle: Magnitude::Uniform(0.1),
            frequency: Magnitude::Uniform(0.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma_rel: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Rank {
    Energy(f64),
    FixedRank(usize),
    /// No reduction: identify directly in `(delta, omega)`.
    FullState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Reduction {
    pub rank: Rank,
    pub center: bool,
}

impl Default for Reduction {
    fn default() -> Self {
        Self {
            rank: Rank::Energy(DEFAULT_ENERGY),
            center: false,
        }
    }
}

impl Reduction {
    pub fn criterion(&self) -> Option<RankCriterion> {
        match self.rank {
            Rank::Energy(tau) => Some(RankCriterion::Energy(tau)),
            Rank::FixedRank(r) => Some(RankCriterion::FixedRank(r)),
            Rank::FullState => None,
        }
    }
}

impl PipelineConfig {
    /// Reads a config file. A relative network path is taken relative to the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let NetworkSource::File { path: net } = &mut cfg.network {
            if net.is_relative() {
                if let Some(dir) = path.parent() {
                    *net = dir.join(&*net);
                }
            }
        }
        Ok(cfg)
    }

    /// Replaces every seed: network `s`, disturbance `s + 1`, noise `s + 2`.
    pub fn override_seed(&mut self, s: u64) {
        if let NetworkSource::Synthetic(spec) = &mut self.network {
            spec.seed = s;
        }
        self.disturbance.seed = s.wrapping_add(1);
        if let Some(noise) = &mut self.noise {
            noise.seed = s.wrapping_add(2);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.integration.validate()?;
        self.library.validate()?;
        self.regression.validate()?;
        if let Some(n) = &self.noise {
            if !(n.sigma_rel.is_finite() && n.sigma_rel >= 0.0) {
                return Err(Error::Config(format!(
                    "noise sigma_rel must be >= 0, got {}",
                    n.sigma_rel
                )));
            }
        }
        match self.reduction.rank {
            Rank::Energy(tau) if !(tau > 0.0 && tau <= 1.0) => Err(Error::Config(format!(
                "energy threshold must be in (0, 1], got {tau}"
            ))),
            Rank::FixedRank(0) => Err(Error::Config("fixed_rank must be >= 1".into())),
            _ => Ok(()),
        }
    }
}
