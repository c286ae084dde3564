//! Single-dataset estimation config.
//!
//! ```toml
//! alpha = 0.05
//!
//! [data]
//! kind = "probit_iv"          # or "panel", "rc_logit"
//! path = "probit.csv"         # relative to this file
//!
//! [chain]
//! gamma = 0.2
//! m = 500                     # defaults to the number of units
//! draws = 2000
//! conditioning = "newton"     # "quasi_newton", "gradient_descent"
//! ```

use std::path::{Path, PathBuf};

use rnr_core::models::rc_logit::IntegrationDraws;
use rnr_core::{
    ChainConfig, ConditioningMode, EstimationModel, Error, LogitMarketData, PanelData,
    PanelIndModel, ProbitIvData, ProbitIvModel, RcLogitModel, ResamplingPlan, Result,
};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    ProbitIv {
        path: PathBuf,
    },
    Panel {
        path: PathBuf,
        #[serde(default = "one")]
        simulations: usize,
    },
    RcLogit {
        path: PathBuf,
        /// Columns of `X` carrying a random coefficient.
        nonlinear: Vec<usize>,
        #[serde(default = "default_integration_draws")]
        integration_draws: usize,
        #[serde(default)]
        integration_seed: u64,
    },
}

fn one() -> usize {
    1
}

fn default_integration_draws() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub gamma: f64,
    pub m: Option<usize>,
    #[serde(default = "default_draws")]
    pub draws: usize,
    pub burn: Option<usize>,
    #[serde(default = "newton")]
    pub conditioning: ConditioningMode,
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

fn default_draws() -> usize {
    rnr_core::harness::DEFAULT_DRAWS
}

fn newton() -> ConditioningMode {
    ConditioningMode::Newton
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub data: DataSpec,
    pub chain: ChainSection,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    0.05
}

impl EstimateConfig {
    /// Parses `path`; a relative data path is resolved against its directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: EstimateConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let data_path = match &mut config.data {
            DataSpec::ProbitIv { path } | DataSpec::Panel { path, .. } | DataSpec::RcLogit { path, .. } => path,
        };
        if data_path.is_relative() {
            *data_path = base.join(&*data_path);
        }
        if !(config.alpha > 0.0 && config.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", config.alpha)));
        }
        Ok(config)
    }

    pub fn load_model(&self) -> Result<Box<dyn EstimationModel>> {
        Ok(match &self.data {
            DataSpec::ProbitIv { path } => Box::new(ProbitIvModel::new(ProbitIvData::read_csv(path)?)?),
            DataSpec::Panel { path, simulations } => {
                Box::new(PanelIndModel::new(PanelData::read_csv(path)?, *simulations)?)
            }
            DataSpec::RcLogit {
                path,
                nonlinear,
                integration_draws,
                integration_seed,
            } => {
                let data = LogitMarketData::read_csv(path, nonlinear.clone())?;
                let draws =
                    IntegrationDraws::standard_normal(*integration_draws, nonlinear.len(), *integration_seed);
                Box::new(RcLogitModel::new(data, draws)?)
            }
        })
    }

    /// Plan and chain settings, validated against `model`.
    pub fn chain(&self, model: &dyn EstimationModel) -> Result<(ResamplingPlan, ChainConfig)> {
        let c = &self.chain;
        let m = c.m.unwrap_or_else(|| model.units().unit_count());
        let plan = ResamplingPlan::for_structure(model.units(), m);
        let mut chain = ChainConfig::new(c.gamma, c.draws, c.seed).with_conditioning(c.conditioning);
        if let Some(burn) = c.burn {
            chain = chain.with_burn(burn);
        }
        if let Some(theta0) = &c.theta0 {
            chain = chain.with_theta0(theta0.clone());
        }
        chain.validate(model, &plan)?;
        Ok((plan, chain))
    }
}
