//! Run configuration shared by the library pipeline and the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoder::TransitionWeights;
use crate::dtw::Band;
use crate::error::{Error, Result};
use crate::rates::{Chopping, FilterConstraints, RateConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub reads: usize,
    pub bases: usize,
    /// E[K] used to generate.
    pub mean_duration: f64,
    /// Noise σ used to generate.
    pub sigma: f64,
    /// Reads are assigned channel ids 1..=channels round-robin.
    pub channels: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            reads: 10,
            bases: 1000,
            mean_duration: 10.0,
            sigma: 0.5,
            channels: 1,
        }
    }
}

/// Every knob of a run. Values come from defaults, then a TOML file, then
/// command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub subcommand: Option<String>,
    /// Pore-model TSV; a synthetic model is used when absent.
    pub pore_model_path: Option<PathBuf>,
    /// τ of the synthetic model.
    pub tau: usize,
    pub dataset_path: Option<PathBuf>,
    pub output_path: Option<PathBuf>,
    pub seed: u64,
    pub m: usize,
    pub sigma: f64,
    pub mean_duration: Option<f64>,
    pub transition_weights: TransitionWeights,
    pub outlier_threshold: Option<f64>,
    pub band: Band,
    pub chopping: Chopping,
    pub filter: FilterConstraints,
    /// Decode every read regardless of the dataset filters.
    pub skip_filter: bool,
    pub simulate: SimulationConfig,
    /// Worker threads; not part of the echoed configuration because it must
    /// not change any result.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let rate = RateConfig::default();
        RunConfig {
            subcommand: None,
            pore_model_path: None,
            tau: 5,
            dataset_path: None,
            output_path: None,
            seed: 0,
            m: rate.m,
            sigma: rate.sigma,
            mean_duration: rate.mean_duration,
            transition_weights: rate.transition_weights,
            outlier_threshold: rate.outlier_threshold,
            band: rate.band,
            chopping: rate.chopping,
            filter: FilterConstraints::default(),
            skip_filter: false,
            simulate: SimulationConfig::default(),
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Input(format!("config: {e}")))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn rate_config(&self) -> RateConfig {
        RateConfig {
            m: self.m,
            sigma: self.sigma,
            mean_duration: self.mean_duration,
            transition_weights: self.transition_weights,
            band: self.band,
            outlier_threshold: self.outlier_threshold,
            chopping: self.chopping,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Input("m must be at least 1".into()));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Input(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if let Some(e) = self.mean_duration {
            if !(e.is_finite() && e >= 1.0) {
                return Err(Error::Input(format!("mean_duration must be ≥ 1, got {e}")));
            }
        }
        if let Some(th) = self.outlier_threshold {
            if th.is_nan() || th < 0.0 {
                return Err(Error::Input(format!(
                    "outlier_threshold must be ≥ 0, got {th}"
                )));
            }
        }
        if let Band::Fixed(w) = self.band {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Input(format!(
                    "band width must be positive, got {w}"
                )));
            }
        }
        Ok(())
    }

    /// Loads the pore model: from the TSV when given, otherwise synthetic
    /// with τ = `tau` seeded by `seed`.
    pub fn pore_model(&self) -> Result<crate::pore_model::PoreModel> {
        match &self.pore_model_path {
            Some(p) => crate::pore_model::PoreModel::from_tsv(crate::dataset_io::open_input(p)?),
            None => crate::pore_model::PoreModel::synthetic(self.tau, self.seed),
        }
    }
}
