//! Probit with an endogenous regressor, estimated by just-identified GMM.
//!
//! Parameters are ordered `(xi0, xi1, pi, alpha, beta0, beta1, rho)`:
//!
//! ```text
//! y2 = xi0 + xi1 x + pi z + v
//! y1 = 1{alpha y2 + beta0 + beta1 x + rho v + u > 0}
//! ```
//!
//! With `r2 = y2 - xi0 - xi1 x - pi z` and
//! `r1 = y1 - Phi(alpha y2 + beta0 + beta1 x + rho r2)` the moment vector is
//! the batch mean of `(r1, r1 x, r1 z, r1 r2, r2, r2 x, r2 z)`. The objective
//! is half its squared norm; gradient and Hessian are analytic.

use std::f64::consts::{FRAC_1_SQRT_2, PI as PI_F64};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};
use crate::model::{check_theta, Batch, EstimationModel, Evaluation};
use crate::resampling::UnitStructure;

pub const DIM: usize = 7;
pub const PARAMETER_NAMES: [&str; DIM] = ["xi0", "xi1", "pi", "alpha", "beta0", "beta1", "rho"];
pub const TRUE_THETA: [f64; DIM] = [0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0];
/// Index of `alpha`, the coefficient on the endogenous regressor.
pub const ALPHA: usize = 3;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI_F64).sqrt()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbitIvData {
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProbitRecord {
    y1: f64,
    y2: f64,
    x: f64,
    z: f64,
}

impl ProbitIvData {
    pub fn len(&self) -> usize {
        self.y1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y1.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.y1.len();
        if n == 0 {
            return Err(Error::Config("probit data is empty".into()));
        }
        for (name, col) in [("y2", &self.y2), ("x", &self.x), ("z", &self.z)] {
            if col.len() != n {
                return Err(Error::Config(format!(
                    "probit column {name} has {} rows, expected {n}",
                    col.len()
                )));
            }
        }
        if self.y1.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Config("probit y1 must be 0 or 1".into()));
        }
        Ok(())
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for i in 0..self.len() {
            w.serialize(ProbitRecord {
                y1: self.y1[i],
                y2: self.y2[i],
                x: self.x[i],
                z: self.z[i],
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV with header `y1,y2,x,z`.
    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut data = ProbitIvData::default();
        for record in csv::Reader::from_path(path)?.deserialize() {
            let r: ProbitRecord = record?;
            data.y1.push(r.y1);
            data.y2.push(r.y2);
            data.x.push(r.x);
            data.z.push(r.z);
        }
        data.validate()?;
        Ok(data)
    }
}

/// Draws `n` observations: `x, z ~ Exp(1)` and `u, v ~ N(0, 1)`, all independent.
pub fn probit_iv_simulate<R: Rng + ?Sized>(n: usize, theta: &[f64; DIM], rng: &mut R) -> ProbitIvData {
    let [xi0, xi1, pi, alpha, beta0, beta1, rho] = *theta;
    let mut data = ProbitIvData {
        y1: Vec::with_capacity(n),
        y2: Vec::with_capacity(n),
        x: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let x: f64 = Exp1.sample(rng);
        let z: f64 = Exp1.sample(rng);
        let u: f64 = StandardNormal.sample(rng);
        let v: f64 = StandardNormal.sample(rng);
        let y2 = xi0 + xi1 * x + pi * z + v;
        let latent = alpha * y2 + beta0 + beta1 * x + rho * v + u;
        data.y1.push(if latent > 0.0 { 1.0 } else { 0.0 });
        data.y2.push(y2);
        data.x.push(x);
        data.z.push(z);
    }
    data
}

#[derive(Clone, Debug)]
pub struct ProbitIvModel {
    data: ProbitIvData,
    units: UnitStructure,
    hessian: HessianForm,
}

/// Curvature reported by [`ProbitIvModel`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianForm {
    /// `J'J + sum_k gbar_k d^2 gbar_k`.
    Full,
    /// `J'J`; equal to the full Hessian wherever the moments vanish.
    #[default]
    GaussNewton,
}

/// Per-observation quantities shared by the moment, Jacobian and Hessian.
struct Obs {
    x: f64,
    z: f64,
    r1: f64,
    r2: f64,
    eta: f64,
    pdf: f64,
    grad_eta: [f64; DIM],
}

impl ProbitIvModel {
    pub fn new(data: ProbitIvData) -> Result<Self> {
        data.validate()?;
        let units = UnitStructure::Iid { n: data.len() };
        Ok(ProbitIvModel {
            data,
            units,
            hessian: HessianForm::default(),
        })
    }

    pub fn with_hessian(mut self, form: HessianForm) -> Self {
        self.hessian = form;
        self
    }

    pub fn data(&self) -> &ProbitIvData {
        &self.data
    }

    fn observation(&self, i: usize, t: &[f64]) -> Obs {
        let (y1, y2, x, z) = (self.data.y1[i], self.data.y2[i], self.data.x[i], self.data.z[i]);
        let r2 = y2 - (t[0] + t[1] * x + t[2] * z);
        let eta = t[3] * y2 + t[4] + t[5] * x + t[6] * r2;
        let rho = t[6];
        Obs {
            x,
            z,
            r1: y1 - normal_cdf(eta),
            r2,
            eta,
            pdf: normal_pdf(eta),
            grad_eta: [-rho, -rho * x, -rho * z, y2, 1.0, x, r2],
        }
    }

    fn batch_indices<'a>(&self, batch: &'a Batch) -> Result<&'a [usize]> {
        let idx = batch.sample.expansion.as_slice();
        if idx.is_empty() {
            return Err(Error::Evaluation("empty batch".into()));
        }
        Ok(idx)
    }

    /// Batch mean of the stacked moment vector.
    pub fn moments(&self, theta: &DVector<f64>, batch: &Batch) -> Result<DVector<f64>> {
        check_theta(theta, DIM)?;
        let idx = self.batch_indices(batch)?;
        let t = theta.as_slice();
        let mut g = [0.0; DIM];
        for &i in idx {
            let o = self.observation(i, t);
            accumulate_moments(&mut g, &o);
        }
        let inv = 1.0 / idx.len() as f64;
        Ok(DVector::from_iterator(DIM, g.iter().map(|v| v * inv)))
    }

    /// Moments and their Jacobian (`d gbar / d theta`, rows are moments).
    pub fn moments_and_jacobian(
        &self,
        theta: &DVector<f64>,
        batch: &Batch,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        check_theta(theta, DIM)?;
        let idx = self.batch_indices(batch)?;
        let t = theta.as_slice();
        let mut g = [0.0; DIM];
        let mut jac = [[0.0; DIM]; DIM];
        for &i in idx {
            let o = self.observation(i, t);
            accumulate_moments(&mut g, &o);
            let dr1: [f64; DIM] = std::array::from_fn(|c| -o.pdf * o.grad_eta[c]);
            let dr2 = [-1.0, -o.x, -o.z, 0.0, 0.0, 0.0, 0.0];
            for c in 0..DIM {
                jac[0][c] += dr1[c];
                jac[1][c] += o.x * dr1[c];
                jac[2][c] += o.z * dr1[c];
                jac[3][c] += o.r2 * dr1[c] + o.r1 * dr2[c];
                jac[4][c] += dr2[c];
                jac[5][c] += o.x * dr2[c];
                jac[6][c] += o.z * dr2[c];
            }
        }
        let inv = 1.0 / idx.len() as f64;
        let gbar = DVector::from_iterator(DIM, g.iter().map(|v| v * inv));
        let jbar = DMatrix::from_fn(DIM, DIM, |r, c| jac[r][c] * inv);
        Ok((gbar, jbar))
    }

    /// `sum_k gbar_k * d^2 gbar_k / d theta^2`, the part of the Hessian beyond `J'J`.
    fn curvature_term(&self, theta: &DVector<f64>, gbar: &DVector<f64>, idx: &[usize]) -> DMatrix<f64> {
        let t = theta.as_slice();
        let mut acc = [[0.0; DIM]; DIM];
        for &i in idx {
            let o = self.observation(i, t);
            let w = gbar[0] + gbar[1] * o.x + gbar[2] * o.z + gbar[3] * o.r2;
            // d^2 r1 = eta pdf (d eta)(d eta)' - pdf d^2 eta
            let outer = w * o.eta * o.pdf;
            let dr1: [f64; DIM] = std::array::from_fn(|c| -o.pdf * o.grad_eta[c]);
            let dr2 = [-1.0, -o.x, -o.z, 0.0, 0.0, 0.0, 0.0];
            for r in 0..DIM {
                for c in 0..DIM {
                    acc[r][c] += outer * o.grad_eta[r] * o.grad_eta[c]
                        + gbar[3] * (dr1[r] * dr2[c] + dr2[r] * dr1[c]);
                }
            }
            // d^2 eta is non-zero only between rho and (xi0, xi1, pi)
            let cross = [-1.0, -o.x, -o.z];
            for (c, v) in cross.iter().enumerate() {
                acc[6][c] -= w * o.pdf * v;
                acc[c][6] -= w * o.pdf * v;
            }
        }
        let inv = 1.0 / idx.len() as f64;
        DMatrix::from_fn(DIM, DIM, |r, c| acc[r][c] * inv)
    }
}

fn accumulate_moments(g: &mut [f64; DIM], o: &Obs) {
    g[0] += o.r1;
    g[1] += o.r1 * o.x;
    g[2] += o.r1 * o.z;
    g[3] += o.r1 * o.r2;
    g[4] += o.r2;
    g[5] += o.r2 * o.x;
    g[6] += o.r2 * o.z;
}

impl EstimationModel for ProbitIvModel {
    fn name(&self) -> &str {
        "probit_iv"
    }

    fn dim(&self) -> usize {
        DIM
    }

    fn units(&self) -> &UnitStructure {
        &self.units
    }

    fn objective(&self, theta: &DVector<f64>, batch: &Batch) -> Result<f64> {
        Ok(0.5 * self.moments(theta, batch)?.norm_squared())
    }

    fn gradient(&self, theta: &DVector<f64>, batch: &Batch) -> Result<DVector<f64>> {
        let (g, j) = self.moments_and_jacobian(theta, batch)?;
        Ok(j.tr_mul(&g))
    }

    fn hessian(&self, theta: &DVector<f64>, batch: &Batch) -> Result<DMatrix<f64>> {
        Ok(self.evaluate(theta, batch, true)?.hessian.expect("requested"))
    }

    fn evaluate(&self, theta: &DVector<f64>, batch: &Batch, hessian: bool) -> Result<Evaluation> {
        let (g, j) = self.moments_and_jacobian(theta, batch)?;
        let hessian = if hessian {
            let jtj = j.tr_mul(&j);
            Some(match self.hessian {
                HessianForm::Full => jtj + self.curvature_term(theta, &g, self.batch_indices(batch)?),
                HessianForm::GaussNewton => jtj,
            })
        } else {
            None
        };
        Ok(Evaluation {
            value: 0.5 * g.norm_squared(),
            gradient: j.tr_mul(&g),
            hessian,
        })
    }

    fn parameter_names(&self) -> Vec<String> {
        PARAMETER_NAMES.iter().map(|s| s.to_string()).collect()
    }
}
