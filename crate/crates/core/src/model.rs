//! Uniform interface between estimation models and the optimizers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::resampling::{IndexMultiset, UnitStructure};

/// Simulation shocks for one batch: `S` matrices of `rows x cols` standard
/// normal draws (one row per drawn unit).
#[derive(Clone, Debug, PartialEq)]
pub struct Shocks {
    pub draws: Vec<DMatrix<f64>>,
}

impl Shocks {
    pub fn simulation_count(&self) -> usize {
        self.draws.len()
    }
}

/// Data batch a model is evaluated on.
#[derive(Clone, Debug)]
pub struct Batch {
    pub sample: IndexMultiset,
    pub shocks: Option<Shocks>,
}

impl Batch {
    pub fn new(sample: IndexMultiset) -> Self {
        Batch {
            sample,
            shocks: None,
        }
    }

    pub fn with_shocks(sample: IndexMultiset, shocks: Shocks) -> Self {
        Batch {
            sample,
            shocks: Some(shocks),
        }
    }

    pub(crate) fn require_shocks(&self) -> Result<&Shocks> {
        self.shocks
            .as_ref()
            .ok_or_else(|| Error::Evaluation("simulation model evaluated without shocks".into()))
    }
}

/// Objective value with its derivatives at one parameter on one batch.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: Option<DMatrix<f64>>,
}

/// Identifies the shock stream of one chain iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ShockKey {
    pub seed: u64,
    pub chain: u64,
    pub iteration: u64,
}

/// An M-estimation or GMM objective evaluated on resampled batches.
pub trait EstimationModel: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn units(&self) -> &UnitStructure;

    fn objective(&self, theta: &DVector<f64>, batch: &Batch) -> Result<f64>;

    /// Defaults to central finite differences of the objective.
    fn gradient(&self, theta: &DVector<f64>, batch: &Batch) -> Result<DVector<f64>> {
        numerical_gradient(|t| self.objective(t, batch), theta)
    }

    /// Defaults to central finite differences of the gradient, symmetrized.
    fn hessian(&self, theta: &DVector<f64>, batch: &Batch) -> Result<DMatrix<f64>> {
        numerical_jacobian(|t| self.gradient(t, batch), theta, self.dim())
            .map(|h| (&h + h.transpose()) * 0.5)
    }

    /// Objective, gradient and (optionally) Hessian in one call. Models that
    /// share work between them override this.
    fn evaluate(&self, theta: &DVector<f64>, batch: &Batch, hessian: bool) -> Result<Evaluation> {
        Ok(Evaluation {
            value: self.objective(theta, batch)?,
            gradient: self.gradient(theta, batch)?,
            hessian: if hessian {
                Some(self.hessian(theta, batch)?)
            } else {
                None
            },
        })
    }

    fn parameter_names(&self) -> Vec<String> {
        (0..self.dim()).map(|j| format!("theta{j}")).collect()
    }

    /// Suggested starting value; the zero vector unless a model needs otherwise.
    fn default_start(&self) -> DVector<f64> {
        DVector::zeros(self.dim())
    }

    /// Present for simulation-based models.
    fn as_simulation(&self) -> Option<&dyn SimulationModel> {
        None
    }
}

/// A model whose objective depends on simulation shocks that are redrawn at
/// every chain iteration.
pub trait SimulationModel: EstimationModel {
    fn simulation_count(&self) -> usize;

    /// Fresh shocks for the units of `sample`, reproducible from `key`.
    fn resimulate(&self, key: ShockKey, sample: &IndexMultiset) -> Shocks;

    /// Shocks held fixed across an entire classical optimization.
    fn fixed_shocks(&self, seed: u64, sample: &IndexMultiset) -> Shocks {
        self.resimulate(
            ShockKey {
                seed,
                chain: u64::MAX,
                iteration: 0,
            },
            sample,
        )
    }
}

/// Full-sample batch, with fixed shocks for simulation models.
pub fn full_batch(model: &dyn EstimationModel, shock_seed: u64) -> Batch {
    let sample = model.units().full_sample();
    match model.as_simulation() {
        Some(sim) => {
            let shocks = sim.fixed_shocks(shock_seed, &sample);
            Batch::with_shocks(sample, shocks)
        }
        None => Batch::new(sample),
    }
}

/// Finite-difference step for coordinate value `x`.
pub fn fd_step(x: f64) -> f64 {
    1e-5 * (1.0 + x.abs())
}

pub fn numerical_gradient<F>(f: F, theta: &DVector<f64>) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let mut grad = DVector::zeros(theta.len());
    let mut probe = theta.clone();
    for j in 0..theta.len() {
        let h = fd_step(theta[j]);
        probe[j] = theta[j] + h;
        let up = f(&probe)?;
        probe[j] = theta[j] - h;
        let down = f(&probe)?;
        probe[j] = theta[j];
        grad[j] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Central-difference Jacobian of a vector function with `rows` outputs;
/// column `j` is the derivative with respect to `theta[j]`.
pub fn numerical_jacobian<F>(f: F, theta: &DVector<f64>, rows: usize) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut jac = DMatrix::zeros(rows, theta.len());
    let mut probe = theta.clone();
    for j in 0..theta.len() {
        let h = fd_step(theta[j]);
        probe[j] = theta[j] + h;
        let up = f(&probe)?;
        probe[j] = theta[j] - h;
        let down = f(&probe)?;
        probe[j] = theta[j];
        if up.len() != rows || down.len() != rows {
            return Err(Error::dimension("numerical_jacobian", rows, up.len()));
        }
        jac.set_column(j, &((up - down) / (2.0 * h)));
    }
    Ok(jac)
}

pub(crate) fn check_theta(theta: &DVector<f64>, dim: usize) -> Result<()> {
    if theta.len() != dim {
        return Err(Error::dimension("parameter vector", dim, theta.len()));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("non-finite parameter entries".into()));
    }
    Ok(())
}
