//! Classical full-sample estimation and the m-out-of-n bootstrap.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conditioning::{solve_direction, spd_repair, DEFAULT_EIGEN_FLOOR};
use crate::error::{Error, Result};
use crate::inference::{normal_ci, quantile_sorted};
use crate::model::{Batch, EstimationModel};
use crate::resampling::ResamplingPlan;
use crate::rng;

pub const DEFAULT_MAX_ITER: usize = 200;
const MAX_HALVINGS: usize = 50;

/// Gradient-norm tolerance; `None` means `1e-8 (1 + |Q|)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub tol: Option<f64>,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: None,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl NewtonOptions {
    fn threshold(&self, value: f64) -> f64 {
        self.tol.unwrap_or(1e-8 * (1.0 + value.abs()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalResult {
    pub theta_hat: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl ClassicalResult {
    pub fn theta(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.theta_hat)
    }
}

/// Damped Newton on a fixed batch: the SPD-repaired Hessian gives the
/// direction and the step is halved until the objective decreases.
/// Running out of iterations or step halvings is reported through
/// `converged`, not as an error.
pub fn classical_estimate(
    model: &dyn EstimationModel,
    batch: &Batch,
    theta0: &DVector<f64>,
    options: NewtonOptions,
) -> Result<ClassicalResult> {
    let mut theta = theta0.clone();
    let mut eval = model.evaluate(&theta, batch, true)?;
    let mut iterations = 0;
    let finish = |theta: DVector<f64>, value: f64, grad: &DVector<f64>, converged, iterations| ClassicalResult {
        theta_hat: theta.iter().copied().collect(),
        objective: value,
        converged,
        iterations,
        gradient_norm: grad.norm(),
    };
    loop {
        if !eval.value.is_finite() || eval.gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::Estimation(format!("non-finite objective or gradient at iteration {iterations}")));
        }
        if eval.gradient.norm() <= options.threshold(eval.value) {
            return Ok(finish(theta, eval.value, &eval.gradient, true, iterations));
        }
        if iterations == options.max_iter {
            return Ok(finish(theta, eval.value, &eval.gradient, false, iterations));
        }
        let hessian = eval.hessian.take().expect("Hessian requested");
        let direction = solve_direction(&spd_repair(&hessian, DEFAULT_EIGEN_FLOOR)?, &eval.gradient)?;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let candidate = &theta - &direction * t;
            match model.objective(&candidate, batch) {
                Ok(v) if v.is_finite() && v < eval.value => {
                    accepted = Some(candidate);
                    break;
                }
                _ => t *= 0.5,
            }
        }
        iterations += 1;
        match accepted {
            Some(next) => {
                theta = next;
                eval = model.evaluate(&theta, batch, true)?;
            }
            None => return Ok(finish(theta, eval.value, &eval.gradient, false, iterations)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Converged replicates, one row each.
    pub replicates: DMatrix<f64>,
    pub se: Vec<f64>,
    /// Percentile interval from `theta_hat + sqrt(m/n) (theta_b - theta_hat)`.
    pub ci: Vec<(f64, f64)>,
    pub ci_normal: Vec<(f64, f64)>,
    pub failures: usize,
    pub m: usize,
    pub n: usize,
    pub elapsed_secs: f64,
}

/// `replications` classical fits started at `theta_hat`, each on a fresh
/// resample keyed by `(seed, b)`. Simulation models get shocks that are held
/// fixed within a replicate.
pub fn bootstrap(
    model: &dyn EstimationModel,
    plan: &ResamplingPlan,
    theta_hat: &DVector<f64>,
    replications: usize,
    seed: u64,
    alpha: f64,
    options: NewtonOptions,
) -> Result<BootstrapResult> {
    plan.validate(model.units())?;
    let started = Instant::now();
    let d = model.dim();
    let m = plan.batch_units(model.units());
    let n = model.units().unit_count();
    let mut kept: Vec<DVector<f64>> = Vec::with_capacity(replications);
    let mut failures = 0;
    for b in 0..replications {
        let key = rng::stream_key(seed, &[rng::purpose::BOOTSTRAP, b as u64]);
        let sample = plan.draw(model.units(), &mut rng::from_key(key))?;
        let batch = match model.as_simulation() {
            Some(sim) => {
                let shocks = sim.fixed_shocks(key, &sample);
                Batch::with_shocks(sample, shocks)
            }
            None => Batch::new(sample),
        };
        match classical_estimate(model, &batch, theta_hat, options) {
            Ok(fit) if fit.converged => kept.push(fit.theta()),
            Ok(_) => failures += 1,
            Err(e) => {
                log::debug!("bootstrap replicate {b} failed: {e}");
                failures += 1;
            }
        }
    }
    if kept.len() < 2 {
        return Err(Error::Estimation(format!(
            "only {} of {replications} bootstrap replicates converged",
            kept.len()
        )));
    }
    let replicates = DMatrix::from_fn(kept.len(), d, |i, j| kept[i][j]);
    let scale = (m as f64 / n as f64).sqrt();
    let mut se = Vec::with_capacity(d);
    let mut ci = Vec::with_capacity(d);
    let mut ci_normal = Vec::with_capacity(d);
    for j in 0..d {
        let col: Vec<f64> = replicates.column(j).iter().copied().collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
        se.push(scale * sd);
        let mut dev: Vec<f64> = col.iter().map(|v| v - theta_hat[j]).collect();
        dev.sort_by(f64::total_cmp);
        ci.push((
            theta_hat[j] + scale * quantile_sorted(&dev, alpha / 2.0),
            theta_hat[j] + scale * quantile_sorted(&dev, 1.0 - alpha / 2.0),
        ));
        ci_normal.push(normal_ci(theta_hat[j], scale * sd, alpha)?);
    }
    Ok(BootstrapResult {
        replicates,
        se,
        ci,
        ci_normal,
        failures,
        m,
        n,
        elapsed_secs: started.elapsed().as_secs_f64(),
    })
}
