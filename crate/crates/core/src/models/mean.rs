//! Location models with closed-form chains, used as analytic oracles.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{check_theta, Batch, EstimationModel, Evaluation};
use crate::resampling::UnitStructure;
use crate::rng;

/// `Q_m(theta) = (c / 2m) sum_i |x_i - theta|^2` over the batch.
///
/// The batch gradient is `c (theta - xbar_b)` and the Hessian `c I`, so the
/// Newton chain is an AR(1) around the sample mean.
#[derive(Clone, Debug)]
pub struct MeanModel {
    data: DMatrix<f64>,
    curvature: f64,
    units: UnitStructure,
}

impl MeanModel {
    /// Observations in rows.
    pub fn new(data: DMatrix<f64>, curvature: f64) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Config("mean model needs a non-empty data matrix".into()));
        }
        if !(curvature > 0.0) {
            return Err(Error::Config(format!("curvature must be positive, got {curvature}")));
        }
        let units = UnitStructure::Iid { n: data.nrows() };
        Ok(MeanModel {
            data,
            curvature,
            units,
        })
    }

    /// Gaussian draws rescaled so every column has mean 0 and variance 1
    /// (divisor n) exactly.
    pub fn standardized(n: usize, d: usize, curvature: f64, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, &[rng::purpose::DATA]);
        let mut data = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut r));
        for j in 0..d {
            let mut col = data.column_mut(j);
            let mean: f64 = col.mean();
            col.add_scalar_mut(-mean);
            let sd = (col.norm_squared() / n as f64).sqrt();
            col /= sd;
        }
        Self::new(data, curvature)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    pub fn sample_mean(&self) -> DVector<f64> {
        self.data.row_mean().transpose()
    }

    /// Per-column variance with divisor n.
    pub fn sample_variance(&self) -> DVector<f64> {
        self.data.row_variance().transpose()
    }

    fn batch_mean(&self, batch: &Batch) -> Result<DVector<f64>> {
        let idx = &batch.sample.expansion;
        if idx.is_empty() {
            return Err(Error::Evaluation("empty batch".into()));
        }
        let mut mean = DVector::zeros(self.data.ncols());
        for &i in idx {
            mean += self.data.row(i).transpose();
        }
        Ok(mean / idx.len() as f64)
    }
}

impl EstimationModel for MeanModel {
    fn name(&self) -> &str {
        "mean"
    }

    fn dim(&self) -> usize {
        self.data.ncols()
    }

    fn units(&self) -> &UnitStructure {
        &self.units
    }

    fn objective(&self, theta: &DVector<f64>, batch: &Batch) -> Result<f64> {
        check_theta(theta, self.dim())?;
        let idx = &batch.sample.expansion;
        if idx.is_empty() {
            return Err(Error::Evaluation("empty batch".into()));
        }
        let ss: f64 = idx
            .iter()
            .map(|&i| (self.data.row(i).transpose() - theta).norm_squared())
            .sum();
        Ok(0.5 * self.curvature * ss / idx.len() as f64)
    }

    fn gradient(&self, theta: &DVector<f64>, batch: &Batch) -> Result<DVector<f64>> {
        check_theta(theta, self.dim())?;
        Ok((theta - self.batch_mean(batch)?) * self.curvature)
    }

    fn hessian(&self, _theta: &DVector<f64>, _batch: &Batch) -> Result<DMatrix<f64>> {
        let d = self.dim();
        Ok(DMatrix::identity(d, d) * self.curvature)
    }

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
        (0..self.dim()).map(|j| format!("mu{j}")).collect()
    }
}

/// `Q(theta) = 1/2 (theta - c)' A (theta - c)` regardless of the batch.
#[derive(Clone, Debug)]
pub struct QuadraticModel {
    center: DVector<f64>,
    curvature: DMatrix<f64>,
    units: UnitStructure,
}

impl QuadraticModel {
    pub fn new(center: DVector<f64>, curvature: DMatrix<f64>, n: usize) -> Result<Self> {
        if curvature.nrows() != center.len() || !curvature.is_square() {
            return Err(Error::dimension("quadratic curvature", center.len(), curvature.nrows()));
        }
        Ok(QuadraticModel {
            center,
            curvature,
            units: UnitStructure::Iid { n },
        })
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }
}

impl EstimationModel for QuadraticModel {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn dim(&self) -> usize {
        self.center.len()
    }

    fn units(&self) -> &UnitStructure {
        &self.units
    }

    fn objective(&self, theta: &DVector<f64>, _batch: &Batch) -> Result<f64> {
        check_theta(theta, self.dim())?;
        let dev = theta - &self.center;
        Ok(0.5 * dev.dot(&(&self.curvature * &dev)))
    }

    fn gradient(&self, theta: &DVector<f64>, _batch: &Batch) -> Result<DVector<f64>> {
        check_theta(theta, self.dim())?;
        Ok(&self.curvature * (theta - &self.center))
    }

    fn hessian(&self, _theta: &DVector<f64>, _batch: &Batch) -> Result<DMatrix<f64>> {
        Ok(self.curvature.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn standardized_data_has_unit_variance() {
        let m = MeanModel::standardized(500, 2, 1.0, 3).unwrap();
        for j in 0..2 {
            assert_relative_eq!(m.sample_mean()[j], 0.0, epsilon = 1e-12);
            assert_relative_eq!(m.sample_variance()[j], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_matches_objective() {
        let m = MeanModel::standardized(50, 3, 2.0, 4).unwrap();
        let batch = Batch::new(m.units().full_sample());
        let theta = DVector::from_vec(vec![0.3, -0.2, 1.1]);
        let fd = crate::model::numerical_gradient(|t| m.objective(t, &batch), &theta).unwrap();
        let g = m.gradient(&theta, &batch).unwrap();
        assert!((fd - g).amax() < 1e-8);
    }

    #[test]
    fn rejects_non_positive_curvature() {
        assert!(MeanModel::new(DMatrix::zeros(3, 1), 0.0).is_err());
    }
}
