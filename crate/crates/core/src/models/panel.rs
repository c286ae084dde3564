//! Dynamic panel with fixed effects, estimated by indirect inference.
//!
//! ```text
//! y_it = rho y_i,t-1 + beta x_it + alpha_i + sigma e_it,   t = 1..T
//! ```
//!
//! The auxiliary statistic is the within (LSDV) estimator of
//! `(rho, beta, sigma)`, which is biased for `rho` at fixed `T`. Matching it on
//! simulated panels removes the bias.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    check_theta, fd_step, Batch, EstimationModel, Evaluation, ShockKey, Shocks, SimulationModel,
};
use crate::resampling::{IndexMultiset, UnitStructure};
use crate::rng;

pub const DIM: usize = 3;
pub const PARAMETER_NAMES: [&str; DIM] = ["rho", "beta", "sigma"];
pub const TRUE_THETA: [f64; DIM] = [0.6, 1.0, 1.0];
pub const RHO: usize = 0;

/// Balanced panel stored path-major: `y[i * T + (t - 1)]` for `t = 1..T`.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelData {
    n: usize,
    periods: usize,
    y: Vec<f64>,
    x: Vec<f64>,
    y0: Vec<f64>,
}

impl PanelData {
    pub fn new(n: usize, periods: usize, y: Vec<f64>, x: Vec<f64>, y0: Vec<f64>) -> Result<Self> {
        if n == 0 || periods == 0 {
            return Err(Error::Config("panel needs at least one path and one period".into()));
        }
        if y.len() != n * periods || x.len() != n * periods || y0.len() != n {
            return Err(Error::Config(format!(
                "panel is not rectangular: n={n}, T={periods}, |y|={}, |x|={}, |y0|={}",
                y.len(),
                x.len(),
                y0.len()
            )));
        }
        Ok(PanelData {
            n,
            periods,
            y,
            x,
            y0,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn y_path(&self, i: usize) -> &[f64] {
        &self.y[i * self.periods..(i + 1) * self.periods]
    }

    pub fn x_path(&self, i: usize) -> &[f64] {
        &self.x[i * self.periods..(i + 1) * self.periods]
    }

    pub fn y0(&self, i: usize) -> f64 {
        self.y0[i]
    }

    /// `y` as an `n x T` matrix.
    pub fn y_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.periods, &self.y)
    }

    pub fn x_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.periods, &self.x)
    }

    /// Writes long-format CSV `i,t,y,x`; the `t = 0` row carries `y_i0` and no `x`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for i in 0..self.n {
            w.serialize(PanelRecord {
                i,
                t: 0,
                y: self.y0[i],
                x: None,
            })?;
            for t in 0..self.periods {
                w.serialize(PanelRecord {
                    i,
                    t: t + 1,
                    y: self.y[i * self.periods + t],
                    x: Some(self.x[i * self.periods + t]),
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let records: Vec<PanelRecord> = csv::Reader::from_path(path)?
            .deserialize()
            .collect::<std::result::Result<_, _>>()?;
        let n = records.iter().map(|r| r.i + 1).max().unwrap_or(0);
        let periods = records.iter().map(|r| r.t).max().unwrap_or(0);
        if records.len() != n * (periods + 1) {
            return Err(Error::Parse(format!(
                "panel CSV has {} rows, expected n*(T+1) = {}",
                records.len(),
                n * (periods + 1)
            )));
        }
        let mut y = vec![f64::NAN; n * periods];
        let mut x = vec![f64::NAN; n * periods];
        let mut y0 = vec![f64::NAN; n];
        for r in records {
            if r.t == 0 {
                y0[r.i] = r.y;
            } else {
                let k = r.i * periods + r.t - 1;
                y[k] = r.y;
                x[k] = r
                    .x
                    .ok_or_else(|| Error::Parse(format!("missing x for i={}, t={}", r.i, r.t)))?;
            }
        }
        if y.iter().chain(&x).chain(&y0).any(|v| v.is_nan()) {
            return Err(Error::Parse("panel CSV has missing or duplicate (i, t) cells".into()));
        }
        Self::new(n, periods, y, x, y0)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PanelRecord {
    i: usize,
    t: usize,
    y: f64,
    x: Option<f64>,
}

/// How the initial observation `y_i0` is generated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// Stationary distribution given `alpha_i`.
    Stationary,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelDesign {
    pub n: usize,
    pub periods: usize,
    pub alpha_sd: f64,
    pub initial: InitialCondition,
}

impl PanelDesign {
    pub fn new(n: usize, periods: usize) -> Self {
        PanelDesign {
            n,
            periods,
            alpha_sd: 1.0,
            initial: InitialCondition::Stationary,
        }
    }
}

/// Latent draws behind a simulated panel.
#[derive(Clone, Debug)]
pub struct PanelLatent {
    pub alpha: Vec<f64>,
    /// `e[i * T + t - 1]`.
    pub e: Vec<f64>,
}

fn stationary_sd(rho: f64, beta: f64, sigma: f64) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Domain(format!(
            "stationary initial condition needs |rho| < 1, got {rho}"
        )));
    }
    Ok(((beta * beta + sigma * sigma) / (1.0 - rho * rho)).sqrt())
}

/// Simulates a panel with `x_it, e_it, alpha_i ~ N(0, 1)` and stationary `y_i0`.
pub fn panel_simulate<R: Rng + ?Sized>(
    n: usize,
    periods: usize,
    theta: &[f64; DIM],
    rng: &mut R,
) -> Result<PanelData> {
    panel_simulate_with(&PanelDesign::new(n, periods), theta, rng).map(|(d, _)| d)
}

pub fn panel_simulate_with<R: Rng + ?Sized>(
    design: &PanelDesign,
    theta: &[f64; DIM],
    rng: &mut R,
) -> Result<(PanelData, PanelLatent)> {
    let [rho, beta, sigma] = *theta;
    let sd0 = stationary_sd(rho, beta, sigma)?;
    let (n, periods) = (design.n, design.periods);
    let mut y = Vec::with_capacity(n * periods);
    let mut x = Vec::with_capacity(n * periods);
    let mut e = Vec::with_capacity(n * periods);
    let mut y0 = Vec::with_capacity(n);
    let mut alpha = Vec::with_capacity(n);
    for _ in 0..n {
        let a = design.alpha_sd * rng.sample::<f64, _>(StandardNormal);
        let z: f64 = StandardNormal.sample(rng);
        let start = match design.initial {
            InitialCondition::Stationary => a / (1.0 - rho) + sd0 * z,
            InitialCondition::Zero => 0.0,
        };
        let mut prev = start;
        for _ in 0..periods {
            let xt: f64 = StandardNormal.sample(rng);
            let et: f64 = StandardNormal.sample(rng);
            let yt = rho * prev + beta * xt + a + sigma * et;
            y.push(yt);
            x.push(xt);
            e.push(et);
            prev = yt;
        }
        y0.push(start);
        alpha.push(a);
    }
    Ok((PanelData::new(n, periods, y, x, y0)?, PanelLatent { alpha, e }))
}

/// Cross-product accumulator for the within regression.
#[derive(Default)]
struct WithinSums {
    ll: f64,
    lx: f64,
    xx: f64,
    ly: f64,
    xy: f64,
    yy: f64,
    obs: usize,
}

impl WithinSums {
    /// Adds one path: `y0` followed by `y[0..T]`, regressors `x[0..T]`.
    fn add_path(&mut self, y0: f64, y: &[f64], x: &[f64]) {
        let t = y.len() as f64;
        let sum_y: f64 = y.iter().sum();
        let ybar = sum_y / t;
        let lbar = (y0 + sum_y - y[y.len() - 1]) / t;
        let xbar = x.iter().sum::<f64>() / t;
        let mut lag = y0;
        for (&yt, &xt) in y.iter().zip(x) {
            let (dy, dl, dx) = (yt - ybar, lag - lbar, xt - xbar);
            self.ll += dl * dl;
            self.lx += dl * dx;
            self.xx += dx * dx;
            self.ly += dl * dy;
            self.xy += dx * dy;
            self.yy += dy * dy;
            lag = yt;
        }
        self.obs += y.len();
    }

    fn solve(&self) -> Result<[f64; DIM]> {
        let det = self.ll * self.xx - self.lx * self.lx;
        if !(det > 1e-12 * self.ll * self.xx) || !det.is_finite() {
            return Err(Error::Estimation(
                "singular within-regressor cross-product in LSDV".into(),
            ));
        }
        let rho = (self.xx * self.ly - self.lx * self.xy) / det;
        let beta = (self.ll * self.xy - self.lx * self.ly) / det;
        let ssr = (self.yy - rho * self.ly - beta * self.xy).max(0.0);
        Ok([rho, beta, (ssr / self.obs as f64).sqrt()])
    }
}

/// Within (LSDV) estimate `(rho, beta, sigma)`; `sigma` uses the `1/(nT)` divisor.
pub fn lsdv(panel: &PanelData) -> Result<[f64; DIM]> {
    lsdv_paths(panel, 0..panel.n())
}

/// LSDV over the listed paths, repeats included.
pub fn lsdv_paths<I: IntoIterator<Item = usize>>(panel: &PanelData, paths: I) -> Result<[f64; DIM]> {
    if panel.periods() < 2 {
        return Err(Error::Estimation("LSDV needs at least two periods".into()));
    }
    let mut sums = WithinSums::default();
    for i in paths {
        sums.add_path(panel.y0(i), panel.y_path(i), panel.x_path(i));
    }
    sums.solve()
}

/// Indirect inference on the panel: match data LSDV to the mean LSDV of `S`
/// simulated panels that reuse the batch's covariate paths.
#[derive(Clone, Debug)]
pub struct PanelIndModel {
    data: PanelData,
    simulations: usize,
    units: UnitStructure,
}

impl PanelIndModel {
    pub fn new(data: PanelData, simulations: usize) -> Result<Self> {
        if simulations == 0 {
            return Err(Error::Config("indirect inference needs S >= 1".into()));
        }
        let units = UnitStructure::Panel {
            n: data.n(),
            periods: data.periods(),
        };
        Ok(PanelIndModel {
            data,
            simulations,
            units,
        })
    }

    pub fn data(&self) -> &PanelData {
        &self.data
    }

    /// Mean LSDV over the simulated panels at `theta`. Shock matrices have one
    /// row per batch path: column 0 drives the initial deviation, columns
    /// `1..=T` the innovations.
    pub fn simulated_statistic(&self, theta: &[f64], sample: &IndexMultiset, shocks: &Shocks) -> Result<DVector<f64>> {
        let (rho, beta, sigma) = (theta[0], theta[1], theta[2]);
        let sd0 = stationary_sd(rho, beta, sigma)?;
        let periods = self.data.periods();
        let mut mean = DVector::zeros(DIM);
        let mut path = vec![0.0; periods];
        for draws in &shocks.draws {
            if draws.nrows() != sample.units.len() || draws.ncols() != periods + 1 {
                return Err(Error::dimension("panel shocks", sample.units.len(), draws.nrows()));
            }
            let mut sums = WithinSums::default();
            for (k, &unit) in sample.units.iter().enumerate() {
                let x = self.data.x_path(unit);
                let start = sd0 * draws[(k, 0)];
                let mut prev = start;
                for t in 0..periods {
                    prev = rho * prev + beta * x[t] + sigma * draws[(k, t + 1)];
                    path[t] = prev;
                }
                sums.add_path(start, &path, x);
            }
            mean += DVector::from_row_slice(&sums.solve()?);
        }
        Ok(mean / shocks.draws.len() as f64)
    }

    /// `psi_hat(batch) - mean_s psi_s(theta)`.
    pub fn moment_gap(&self, theta: &DVector<f64>, batch: &Batch) -> Result<DVector<f64>> {
        check_theta(theta, DIM)?;
        let shocks = batch.require_shocks()?;
        let data_stat = DVector::from_row_slice(&lsdv_paths(&self.data, batch.sample.units.iter().copied())?);
        Ok(data_stat - self.simulated_statistic(theta.as_slice(), &batch.sample, shocks)?)
    }

    /// Moment gap and its central-difference Jacobian.
    pub fn gap_and_jacobian(&self, theta: &DVector<f64>, batch: &Batch) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let gap = self.moment_gap(theta, batch)?;
        let shocks = batch.require_shocks()?;
        let mut jac = DMatrix::zeros(DIM, DIM);
        let mut probe = theta.clone();
        for j in 0..DIM {
            let h = fd_step(theta[j]);
            probe[j] = theta[j] + h;
            let up = self.simulated_statistic(probe.as_slice(), &batch.sample, shocks)?;
            probe[j] = theta[j] - h;
            let down = self.simulated_statistic(probe.as_slice(), &batch.sample, shocks)?;
            probe[j] = theta[j];
            jac.set_column(j, &(-(up - down) / (2.0 * h)));
        }
        Ok((gap, jac))
    }
}

impl EstimationModel for PanelIndModel {
    fn name(&self) -> &str {
        "dynamic_panel"
    }

    fn dim(&self) -> usize {
        DIM
    }

    fn units(&self) -> &UnitStructure {
        &self.units
    }

    fn objective(&self, theta: &DVector<f64>, batch: &Batch) -> Result<f64> {
        Ok(self.moment_gap(theta, batch)?.norm_squared())
    }

    fn gradient(&self, theta: &DVector<f64>, batch: &Batch) -> Result<DVector<f64>> {
        let (gap, jac) = self.gap_and_jacobian(theta, batch)?;
        Ok(jac.tr_mul(&gap) * 2.0)
    }

    /// Gauss-Newton `2 J'J`.
    fn hessian(&self, theta: &DVector<f64>, batch: &Batch) -> Result<DMatrix<f64>> {
        let (_, jac) = self.gap_and_jacobian(theta, batch)?;
        Ok(jac.tr_mul(&jac) * 2.0)
    }

    fn evaluate(&self, theta: &DVector<f64>, batch: &Batch, hessian: bool) -> Result<Evaluation> {
        let (gap, jac) = self.gap_and_jacobian(theta, batch)?;
        Ok(Evaluation {
            value: gap.norm_squared(),
            gradient: jac.tr_mul(&gap) * 2.0,
            hessian: hessian.then(|| jac.tr_mul(&jac) * 2.0),
        })
    }

    fn parameter_names(&self) -> Vec<String> {
        PARAMETER_NAMES.iter().map(|s| s.to_string()).collect()
    }

    /// The data LSDV estimate, a cheap start that is never degenerate.
    fn default_start(&self) -> DVector<f64> {
        match lsdv(&self.data) {
            Ok(psi) => DVector::from_row_slice(&psi),
            Err(_) => DVector::from_row_slice(&[0.5, 0.5, 0.5]),
        }
    }

    fn as_simulation(&self) -> Option<&dyn SimulationModel> {
        Some(self)
    }
}

impl SimulationModel for PanelIndModel {
    fn simulation_count(&self) -> usize {
        self.simulations
    }

    fn resimulate(&self, key: ShockKey, sample: &IndexMultiset) -> Shocks {
        let cols = self.data.periods() + 1;
        let draws = (0..self.simulations as u64)
            .map(|s| {
                let mut r = rng::stream(key.seed, &[rng::purpose::SHOCKS, key.chain, key.iteration, s]);
                DMatrix::from_fn(sample.units.len(), cols, |_, _| StandardNormal.sample(&mut r))
            })
            .collect();
        Shocks { draws }
    }
}
