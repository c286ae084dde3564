//! Estimation models.

pub mod mean;
pub mod panel;
pub mod probit_iv;
pub mod rc_logit;

pub use mean::{MeanModel, QuadraticModel};
pub use panel::{PanelData, PanelIndModel};
pub use probit_iv::{ProbitIvData, ProbitIvModel};
pub use rc_logit::{LogitMarketData, RcLogitModel};
