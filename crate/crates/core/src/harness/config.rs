//! Experiment configuration and the model registry.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::chain::ConditioningMode;
use crate::error::{Error, Result};
use crate::model::EstimationModel;
use crate::models::panel::{self, PanelData};
use crate::models::probit_iv::{self, ProbitIvData};
use crate::models::rc_logit::{self, IntegrationDraws, LogitMarketData, RcLogitDesign};
use crate::models::{MeanModel, PanelIndModel, ProbitIvModel, RcLogitModel};
use crate::rng;

pub const DEFAULT_REPLICATIONS: usize = 200;
pub const PAPER_REPLICATIONS: usize = 1000;
pub const DEFAULT_DRAWS: usize = 2000;
pub const DEFAULT_BOOTSTRAP_DRAWS: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Rnr,
    Rqn,
    Rgd,
    Bootstrap,
    Classical,
}

impl Arm {
    pub fn label(self) -> &'static str {
        match self {
            Arm::Rnr => "rnr",
            Arm::Rqn => "rqn",
            Arm::Rgd => "rgd",
            Arm::Bootstrap => "bootstrap",
            Arm::Classical => "classical",
        }
    }

    pub fn parse(label: &str) -> Result<Self> {
        [Arm::Rnr, Arm::Rqn, Arm::Rgd, Arm::Bootstrap, Arm::Classical]
            .into_iter()
            .find(|a| a.label() == label)
            .ok_or_else(|| Error::Parse(format!("unknown arm {label:?}")))
    }

    /// Conditioning of the chain arms; `None` for the optimizer-based arms.
    pub fn conditioning(self) -> Option<ConditioningMode> {
        match self {
            Arm::Rnr => Some(ConditioningMode::Newton),
            Arm::Rqn => Some(ConditioningMode::QuasiNewton),
            Arm::Rgd => Some(ConditioningMode::GradientDescent),
            Arm::Bootstrap | Arm::Classical => None,
        }
    }
}

fn default_probit_n() -> usize {
    500
}

fn default_panel_n() -> usize {
    500
}

fn default_periods() -> usize {
    5
}

fn default_markets() -> usize {
    RcLogitDesign::default().markets
}

fn default_products() -> usize {
    RcLogitDesign::default().products
}

fn default_integration_draws() -> usize {
    RcLogitDesign::default().draws
}

fn default_mean_n() -> usize {
    500
}

/// A registered data-generating design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    ProbitIv {
        #[serde(default = "default_probit_n")]
        n: usize,
    },
    Panel {
        #[serde(default = "default_panel_n")]
        n: usize,
        #[serde(default = "default_periods")]
        periods: usize,
    },
    RcLogit {
        #[serde(default = "default_markets")]
        markets: usize,
        #[serde(default = "default_products")]
        products: usize,
        #[serde(default = "default_integration_draws")]
        draws: usize,
    },
    /// Scalar mean of iid standard normal data.
    Mean {
        #[serde(default = "default_mean_n")]
        n: usize,
    },
}

/// One replication's data, before a model is built on it.
#[derive(Clone, Debug)]
pub enum Dataset {
    ProbitIv(ProbitIvData),
    Panel(PanelData),
    RcLogit(LogitMarketData, IntegrationDraws),
    Mean(DMatrix<f64>),
}

impl ModelSpec {
    pub fn label(&self) -> &'static str {
        match self {
            ModelSpec::ProbitIv { .. } => "probit_iv",
            ModelSpec::Panel { .. } => "panel",
            ModelSpec::RcLogit { .. } => "rc_logit",
            ModelSpec::Mean { .. } => "mean",
        }
    }

    /// Index of the coordinate reported in result tables.
    pub fn coordinate(&self) -> usize {
        match self {
            ModelSpec::ProbitIv { .. } => probit_iv::ALPHA,
            ModelSpec::Panel { .. } => panel::RHO,
            ModelSpec::RcLogit { .. } | ModelSpec::Mean { .. } => 0,
        }
    }

    pub fn coordinate_name(&self) -> String {
        match self {
            ModelSpec::ProbitIv { .. } => probit_iv::PARAMETER_NAMES[probit_iv::ALPHA].into(),
            ModelSpec::Panel { .. } => panel::PARAMETER_NAMES[panel::RHO].into(),
            ModelSpec::RcLogit { .. } => "sigma0".into(),
            ModelSpec::Mean { .. } => "mu0".into(),
        }
    }

    /// Parameter vector used to generate the data.
    pub fn truth(&self) -> Vec<f64> {
        match self {
            ModelSpec::ProbitIv { .. } => probit_iv::TRUE_THETA.to_vec(),
            ModelSpec::Panel { .. } => panel::TRUE_THETA.to_vec(),
            ModelSpec::RcLogit { .. } => RcLogitDesign::default().theta_nl.to_vec(),
            ModelSpec::Mean { .. } => vec![0.0],
        }
    }

    /// Resampling units in one dataset.
    pub fn units(&self) -> usize {
        match *self {
            ModelSpec::ProbitIv { n } | ModelSpec::Panel { n, .. } | ModelSpec::Mean { n } => n,
            ModelSpec::RcLogit { markets, .. } => markets,
        }
    }

    /// Whether the model redraws simulation shocks, i.e. whether `S` matters.
    pub fn is_simulation(&self) -> bool {
        matches!(self, ModelSpec::Panel { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ModelSpec::ProbitIv { n } | ModelSpec::Mean { n } => n >= 2,
            ModelSpec::Panel { n, periods } => n >= 2 && periods >= 2,
            ModelSpec::RcLogit { markets, products, draws } => markets >= 2 && products >= 1 && draws >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("model {self:?} has degenerate dimensions")))
        }
    }

    /// Data for replication `r`, from the stream `(seed, DATA, r)`.
    pub fn generate(&self, seed: u64, r: u64) -> Result<Dataset> {
        let mut rng = rng::stream(seed, &[rng::purpose::DATA, r]);
        Ok(match *self {
            ModelSpec::ProbitIv { n } => {
                Dataset::ProbitIv(probit_iv::probit_iv_simulate(n, &probit_iv::TRUE_THETA, &mut rng))
            }
            ModelSpec::Panel { n, periods } => {
                Dataset::Panel(panel::panel_simulate(n, periods, &panel::TRUE_THETA, &mut rng)?)
            }
            ModelSpec::RcLogit { markets, products, draws } => {
                let design = RcLogitDesign {
                    markets,
                    products,
                    draws,
                    ..RcLogitDesign::default()
                };
                let integration = rng::stream_key(seed, &[rng::purpose::INTEGRATION, r]);
                let (data, nodes) = rc_logit::rc_logit_simulate(&design, integration, &mut rng)?;
                Dataset::RcLogit(data, nodes)
            }
            ModelSpec::Mean { n } => {
                Dataset::Mean(DMatrix::from_fn(n, 1, |_, _| StandardNormal.sample(&mut rng)))
            }
        })
    }

    /// Model on `data` with `s` simulations per unit (ignored by non-simulation models).
    pub fn build(&self, data: &Dataset, s: usize) -> Result<Box<dyn EstimationModel>> {
        Ok(match data {
            Dataset::ProbitIv(d) => Box::new(ProbitIvModel::new(d.clone())?),
            Dataset::Panel(d) => Box::new(PanelIndModel::new(d.clone(), s)?),
            Dataset::RcLogit(d, nodes) => Box::new(RcLogitModel::new(d.clone(), nodes.clone())?),
            Dataset::Mean(d) => Box::new(MeanModel::new(d.clone(), 1.0)?),
        })
    }
}

fn default_s() -> Vec<usize> {
    vec![1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub m: Vec<usize>,
    pub gamma: Vec<f64>,
    #[serde(default = "default_s")]
    pub s: Vec<usize>,
}

fn default_replications() -> usize {
    DEFAULT_REPLICATIONS
}

fn default_draws() -> usize {
    DEFAULT_DRAWS
}

fn default_bootstrap_draws() -> usize {
    DEFAULT_BOOTSTRAP_DRAWS
}

fn default_alpha() -> f64 {
    0.05
}

/// A Monte Carlo experiment, read from TOML:
///
/// ```toml
/// seed = 7
/// replications = 200
/// arms = ["rnr", "rqn", "bootstrap", "classical"]
///
/// [model]
/// kind = "probit_iv"
/// n = 500
///
/// [grid]
/// m = [50, 100, 500]
/// gamma = [0.2, 0.1]
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub arms: Vec<Arm>,
    pub grid: Grid,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Retained chain draws `B`.
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_bootstrap_draws")]
    pub bootstrap_draws: usize,
    /// Burn-in; `ceil(5 / gamma)` when absent.
    #[serde(default)]
    pub burn: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Nominal test size of the reported rejection rates.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Worker threads; all available cores when absent.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(model: ModelSpec, arms: Vec<Arm>, grid: Grid) -> Self {
        ExperimentConfig {
            model,
            arms,
            grid,
            replications: DEFAULT_REPLICATIONS,
            draws: DEFAULT_DRAWS,
            bootstrap_draws: DEFAULT_BOOTSTRAP_DRAWS,
            burn: None,
            seed: 0,
            alpha: default_alpha(),
            workers: None,
            output: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Replication count of the full-fidelity runs.
    pub fn with_paper_scale(mut self) -> Self {
        self.replications = PAPER_REPLICATIONS;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.arms.is_empty() {
            return Err(Error::Config("at least one arm is required".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.arms.iter().find(|a| !seen.insert(**a)) {
            return Err(Error::Config(format!("arm {} listed twice", dup.label())));
        }
        let chains = self.arms.iter().any(|a| a.conditioning().is_some());
        let resampled = chains || self.arms.contains(&Arm::Bootstrap);
        if resampled && self.grid.m.is_empty() {
            return Err(Error::Config("grid.m is empty".into()));
        }
        if chains && self.grid.gamma.is_empty() {
            return Err(Error::Config("grid.gamma is empty".into()));
        }
        if self.grid.s.is_empty() {
            return Err(Error::Config("grid.s is empty".into()));
        }
        if let Some(m) = self.grid.m.iter().find(|&&m| m == 0 || m > self.model.units()) {
            return Err(Error::Config(format!(
                "batch size {m} outside 1..={}",
                self.model.units()
            )));
        }
        if let Some(g) = self.grid.gamma.iter().find(|&&g| !(g > 0.0 && g <= 1.0)) {
            return Err(Error::Config(format!("gamma {g} outside (0, 1]")));
        }
        if self.grid.s.contains(&0) {
            return Err(Error::Config("grid.s values must be positive".into()));
        }
        if !self.model.is_simulation() && self.grid.s != [1] {
            return Err(Error::Config(format!(
                "model {} has no simulation draws; grid.s must be [1]",
                self.model.label()
            )));
        }
        if self.replications == 0 || self.draws == 0 {
            return Err(Error::Config("replications and draws must be positive".into()));
        }
        if self.arms.contains(&Arm::Bootstrap) && self.bootstrap_draws < 2 {
            return Err(Error::Config("bootstrap_draws must be at least 2".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        Ok(())
    }
}
