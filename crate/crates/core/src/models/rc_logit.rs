//! Random-coefficients logit demand on synthetic markets.
//!
//! Mean utilities are recovered market by market with the share-inversion
//! contraction; the GMM objective interacts the structural error with
//! instruments after concentrating out the linear parameters by 2SLS.
//! Markets are the resampling clusters.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_theta, Batch, EstimationModel, Evaluation};
use crate::resampling::UnitStructure;
use crate::rng;

pub const DEFAULT_INVERSION_TOL: f64 = 1e-12;
pub const MAX_INVERSION_ITERATIONS: usize = 10_000;

/// One market: observed shares, linear characteristics `x`, instruments `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct Market {
    pub shares: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

impl Market {
    pub fn products(&self) -> usize {
        self.shares.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogitMarketData {
    pub markets: Vec<Market>,
    /// Columns of `x` that carry random coefficients.
    pub nonlinear: Vec<usize>,
}

/// Integration nodes: one row per simulated consumer, one column per random coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegrationDraws {
    pub nu: DMatrix<f64>,
}

impl IntegrationDraws {
    pub fn standard_normal(count: usize, dim: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[rng::purpose::INTEGRATION]);
        IntegrationDraws {
            nu: DMatrix::from_fn(count, dim, |_, _| StandardNormal.sample(&mut r)),
        }
    }

    pub fn count(&self) -> usize {
        self.nu.nrows()
    }
}

impl LogitMarketData {
    pub fn validate(&self) -> Result<()> {
        let first = self
            .markets
            .first()
            .ok_or_else(|| Error::Config("logit data has no markets".into()))?;
        let (k, l) = (first.x.ncols(), first.z.ncols());
        for (g, m) in self.markets.iter().enumerate() {
            let j = m.products();
            if j == 0 || m.x.nrows() != j || m.z.nrows() != j || m.x.ncols() != k || m.z.ncols() != l {
                return Err(Error::Config(format!("market {g} has inconsistent dimensions")));
            }
            if m.shares.iter().any(|&s| !(s > 0.0)) || !(m.shares.sum() < 1.0) {
                return Err(Error::Config(format!(
                    "market {g}: shares must be positive with a positive outside share"
                )));
            }
        }
        if self.nonlinear.iter().any(|&c| c >= k) {
            return Err(Error::Config("nonlinear column index out of range".into()));
        }
        Ok(())
    }

    pub fn product_count(&self) -> usize {
        self.markets.iter().map(Market::products).sum()
    }

    /// Long-format CSV `g,j,share,x0..,z0..`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let first = &self.markets[0];
        let mut header = vec!["g".to_string(), "j".to_string(), "share".to_string()];
        header.extend((0..first.x.ncols()).map(|c| format!("x{c}")));
        header.extend((0..first.z.ncols()).map(|c| format!("z{c}")));
        w.write_record(&header)?;
        for (g, m) in self.markets.iter().enumerate() {
            for j in 0..m.products() {
                let mut row = vec![g.to_string(), j.to_string(), m.shares[j].to_string()];
                row.extend(m.x.row(j).iter().map(f64::to_string));
                row.extend(m.z.row(j).iter().map(f64::to_string));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<P: AsRef<Path>>(path: P, nonlinear: Vec<usize>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let header = reader.headers()?.clone();
        let x_cols: Vec<usize> = (0..header.len()).filter(|&c| header[c].starts_with('x')).collect();
        let z_cols: Vec<usize> = (0..header.len()).filter(|&c| header[c].starts_with('z')).collect();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Parse(format!("logit CSV lacks column {name}")))
        };
        let (gc, sc) = (col("g")?, col("share")?);
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}")));
        let mut rows: Vec<(usize, f64, Vec<f64>, Vec<f64>)> = Vec::new();
        for record in reader.records() {
            let record = record?;
            let g = record[gc]
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(e.to_string()))?;
            let xs = x_cols.iter().map(|&c| parse(&record[c])).collect::<Result<Vec<_>>>()?;
            let zs = z_cols.iter().map(|&c| parse(&record[c])).collect::<Result<Vec<_>>>()?;
            rows.push((g, parse(&record[sc])?, xs, zs));
        }
        let groups = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let mut markets = Vec::with_capacity(groups);
        for g in 0..groups {
            let members: Vec<_> = rows.iter().filter(|r| r.0 == g).collect();
            let j = members.len();
            markets.push(Market {
                shares: DVector::from_iterator(j, members.iter().map(|r| r.1)),
                x: DMatrix::from_row_iterator(j, x_cols.len(), members.iter().flat_map(|r| r.2.iter().copied())),
                z: DMatrix::from_row_iterator(j, z_cols.len(), members.iter().flat_map(|r| r.3.iter().copied())),
            });
        }
        let data = LogitMarketData { markets, nonlinear };
        data.validate()?;
        Ok(data)
    }
}

/// Taste shifts `mu[(j, r)] = sum_l x_jl theta_l nu_rl` over the nonlinear columns.
fn taste_shifts(theta_nl: &[f64], market: &Market, nonlinear: &[usize], draws: &IntegrationDraws) -> DMatrix<f64> {
    let mut mu = DMatrix::zeros(market.products(), draws.count());
    for (l, &col) in nonlinear.iter().enumerate() {
        let coef = theta_nl[l];
        if coef == 0.0 {
            continue;
        }
        for r in 0..draws.count() {
            let scale = coef * draws.nu[(r, l)];
            for j in 0..market.products() {
                mu[(j, r)] += market.x[(j, col)] * scale;
            }
        }
    }
    mu
}

/// Per-consumer choice probabilities, one column per draw.
fn individual_shares(delta: &DVector<f64>, mu: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (j_count, r_count) = mu.shape();
    let mut out = DMatrix::zeros(j_count, r_count);
    for r in 0..r_count {
        let mut mx = 0.0f64;
        for j in 0..j_count {
            mx = mx.max(delta[j] + mu[(j, r)]);
        }
        let mut denom = (-mx).exp();
        for j in 0..j_count {
            let e = (delta[j] + mu[(j, r)] - mx).exp();
            out[(j, r)] = e;
            denom += e;
        }
        if !denom.is_finite() || denom <= 0.0 {
            return Err(Error::Evaluation("share denominator is not finite".into()));
        }
        for j in 0..j_count {
            out[(j, r)] /= denom;
        }
    }
    Ok(out)
}

/// Simulated market shares at mean utilities `delta`.
pub fn logit_shares(
    delta: &DVector<f64>,
    theta_nl: &[f64],
    market: &Market,
    nonlinear: &[usize],
    draws: &IntegrationDraws,
) -> Result<DVector<f64>> {
    if delta.len() != market.products() {
        return Err(Error::dimension("logit_shares delta", market.products(), delta.len()));
    }
    if draws.count() == 0 {
        return Err(Error::Config("share integral needs at least one draw".into()));
    }
    let mu = taste_shifts(theta_nl, market, nonlinear, draws);
    let s = individual_shares(delta, &mu)?.column_mean();
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("non-finite simulated share".into()));
    }
    Ok(s)
}

/// Outcome of the share-inversion contraction.
#[derive(Clone, Debug)]
pub struct Inversion {
    pub delta: DVector<f64>,
    pub iterations: usize,
    /// Sup-norm log-share gap after each update.
    pub gaps: Vec<f64>,
}

/// Solves `s(delta) = s_obs` by `delta <- delta + log s_obs - log s(delta)`,
/// starting from the plain-logit inversion `log s_j - log s_0`. The outside
/// good's utility is normalised to zero, which pins the level of `delta`.
///
/// Stops once the sup-norm log-share gap is below `tol` and the contraction
/// bound puts the returned `delta` within `tol / 2` of the fixed point.
pub fn invert_shares(
    s_obs: &DVector<f64>,
    theta_nl: &[f64],
    market: &Market,
    nonlinear: &[usize],
    draws: &IntegrationDraws,
    tol: f64,
) -> Result<Inversion> {
    if s_obs.iter().any(|&s| !(s > 0.0)) || !(s_obs.sum() < 1.0) {
        return Err(Error::Domain("observed shares must be positive and sum below one".into()));
    }
    let mu = taste_shifts(theta_nl, market, nonlinear, draws);
    let log_obs = s_obs.map(f64::ln);
    let log_outside = (1.0 - s_obs.sum()).ln();
    let mut delta = log_obs.add_scalar(-log_outside);
    let mut gaps = Vec::new();
    for iteration in 1..=MAX_INVERSION_ITERATIONS {
        let s = individual_shares(&delta, &mu)?.column_mean();
        let step = &log_obs - s.map(f64::ln);
        let gap = step.amax();
        if !gap.is_finite() {
            return Err(Error::Evaluation("share inversion produced non-finite values".into()));
        }
        // a-posteriori bound on the distance of the updated iterate from the
        // fixed point, from the observed contraction ratio
        let bound = match gaps.last() {
            Some(&prev) if gap < prev => gap * gap / (prev - gap),
            Some(_) => f64::INFINITY,
            None => gap,
        };
        let at_roundoff = gap <= 64.0 * f64::EPSILON * (1.0 + delta.amax());
        delta += step;
        gaps.push(gap);
        if gap < tol && (bound <= 0.5 * tol || at_roundoff) {
            return Ok(Inversion {
                delta,
                iterations: iteration,
                gaps,
            });
        }
    }
    Err(Error::Inversion {
        iterations: MAX_INVERSION_ITERATIONS,
        gap: *gaps.last().unwrap_or(&f64::NAN),
    })
}

/// `d delta / d theta_nl` at a converged inversion, by the implicit function theorem.
fn delta_jacobian(
    delta: &DVector<f64>,
    theta_nl: &[f64],
    market: &Market,
    nonlinear: &[usize],
    draws: &IntegrationDraws,
) -> Result<DMatrix<f64>> {
    let mu = taste_shifts(theta_nl, market, nonlinear, draws);
    let ind = individual_shares(delta, &mu)?;
    let (j_count, r_count) = ind.shape();
    let k2 = nonlinear.len();
    let mut ds_ddelta = DMatrix::zeros(j_count, j_count);
    let mut ds_dtheta = DMatrix::zeros(j_count, k2);
    for r in 0..r_count {
        let s = ind.column(r);
        for j in 0..j_count {
            ds_ddelta[(j, j)] += s[j];
            for k in 0..j_count {
                ds_ddelta[(j, k)] -= s[j] * s[k];
            }
        }
        for (l, &col) in nonlinear.iter().enumerate() {
            let nu = draws.nu[(r, l)];
            let avg: f64 = (0..j_count).map(|k| s[k] * market.x[(k, col)]).sum();
            for j in 0..j_count {
                ds_dtheta[(j, l)] += s[j] * nu * (market.x[(j, col)] - avg);
            }
        }
    }
    let lu = ds_ddelta.lu();
    let mut out = lu
        .solve(&ds_dtheta)
        .ok_or_else(|| Error::Evaluation("share Jacobian is singular".into()))?;
    out.neg_mut();
    Ok(out)
}

/// Synthetic market design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcLogitDesign {
    pub markets: usize,
    pub products: usize,
    pub draws: usize,
    /// Random-coefficient standard deviations on price and the characteristic.
    pub theta_nl: [f64; 2],
    /// Constant, price, characteristic.
    pub beta: [f64; 3],
    pub xi_sd: f64,
}

impl Default for RcLogitDesign {
    fn default() -> Self {
        RcLogitDesign {
            markets: 20,
            products: 5,
            draws: 100,
            theta_nl: [0.5, 0.5],
            beta: [-1.0, -1.0, 1.0],
            xi_sd: 0.1,
        }
    }
}

/// Simulates markets whose shares are the model's own share integral at the
/// true parameters: `x = (1, price, c)`, price responds to a cost shifter `w`
/// and to the unobserved quality `xi`; instruments are
/// `(1, c, w, w^2, c w, sum of rivals' c)`.
pub fn rc_logit_simulate<R: Rng + ?Sized>(
    design: &RcLogitDesign,
    integration_seed: u64,
    rng: &mut R,
) -> Result<(LogitMarketData, IntegrationDraws)> {
    let draws = IntegrationDraws::standard_normal(design.draws, 2, integration_seed);
    let nonlinear = vec![1, 2];
    let j_count = design.products;
    let mut markets = Vec::with_capacity(design.markets);
    for _ in 0..design.markets {
        let c: Vec<f64> = (0..j_count).map(|_| StandardNormal.sample(rng)).collect();
        let w: Vec<f64> = (0..j_count).map(|_| StandardNormal.sample(rng)).collect();
        let xi: Vec<f64> = (0..j_count)
            .map(|_| design.xi_sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let price: Vec<f64> = (0..j_count)
            .map(|j| 1.0 + 0.5 * w[j] + 0.5 * xi[j] + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let c_total: f64 = c.iter().sum();
        let x = DMatrix::from_fn(j_count, 3, |j, k| [1.0, price[j], c[j]][k]);
        let z = DMatrix::from_fn(j_count, 6, |j, k| {
            [1.0, c[j], w[j], w[j] * w[j], c[j] * w[j], c_total - c[j]][k]
        });
        let delta = DVector::from_fn(j_count, |j, _| {
            design.beta[0] + design.beta[1] * price[j] + design.beta[2] * c[j] + xi[j]
        });
        let mut market = Market {
            shares: DVector::zeros(j_count),
            x,
            z,
        };
        market.shares = logit_shares(&delta, &design.theta_nl, &market, &nonlinear, &draws)?;
        markets.push(market);
    }
    let data = LogitMarketData { markets, nonlinear };
    data.validate()?;
    Ok((data, draws))
}

#[derive(Clone, Debug)]
pub struct RcLogitModel {
    data: LogitMarketData,
    draws: IntegrationDraws,
    units: UnitStructure,
    tol: f64,
}

/// Stacked batch quantities shared by objective, gradient and Hessian.
struct Stacked {
    gbar: DVector<f64>,
    /// `d gbar / d theta`, present when derivatives were requested.
    jacobian: Option<DMatrix<f64>>,
}

impl RcLogitModel {
    pub fn new(data: LogitMarketData, draws: IntegrationDraws) -> Result<Self> {
        data.validate()?;
        if draws.nu.ncols() != data.nonlinear.len() {
            return Err(Error::dimension("integration draws", data.nonlinear.len(), draws.nu.ncols()));
        }
        let mut members = Vec::with_capacity(data.markets.len());
        let mut offset = 0;
        for m in &data.markets {
            members.push((offset..offset + m.products()).collect());
            offset += m.products();
        }
        Ok(RcLogitModel {
            units: UnitStructure::clustered(members)?,
            data,
            draws,
            tol: DEFAULT_INVERSION_TOL,
        })
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn data(&self) -> &LogitMarketData {
        &self.data
    }

    pub fn draws(&self) -> &IntegrationDraws {
        &self.draws
    }

    pub fn invert_market(&self, g: usize, theta_nl: &[f64]) -> Result<DVector<f64>> {
        let m = &self.data.markets[g];
        invert_shares(&m.shares, theta_nl, m, &self.data.nonlinear, &self.draws, self.tol).map(|inv| inv.delta)
    }

    fn stack(&self, theta: &DVector<f64>, batch: &Batch, derivatives: bool) -> Result<Stacked> {
        check_theta(theta, self.dim())?;
        let units = &batch.sample.units;
        if units.is_empty() {
            return Err(Error::Evaluation("empty batch".into()));
        }
        let t = theta.as_slice();
        let mut solved: HashMap<usize, (DVector<f64>, Option<DMatrix<f64>>)> = HashMap::new();
        for &g in units {
            if solved.contains_key(&g) {
                continue;
            }
            let delta = self.invert_market(g, t)?;
            let jac = if derivatives {
                Some(delta_jacobian(&delta, t, &self.data.markets[g], &self.data.nonlinear, &self.draws)?)
            } else {
                None
            };
            solved.insert(g, (delta, jac));
        }

        let first = &self.data.markets[0];
        let (k, l, k2) = (first.x.ncols(), first.z.ncols(), self.dim());
        let mut ztz = DMatrix::<f64>::zeros(l, l);
        let mut ztx = DMatrix::<f64>::zeros(l, k);
        let mut ztd = DVector::<f64>::zeros(l);
        let mut ztdj = DMatrix::<f64>::zeros(l, k2);
        let mut rows = 0usize;
        for &g in units {
            let m = &self.data.markets[g];
            let (delta, jac) = &solved[&g];
            let zt = m.z.transpose();
            ztz += &zt * &m.z;
            ztx += &zt * &m.x;
            ztd += &zt * delta;
            if let Some(j) = jac {
                ztdj += &zt * j;
            }
            rows += m.products();
        }
        // gbar = M Z'delta / N with M = I - Z'X (X'P X)^{-1} X'Z (Z'Z)^{-1}
        let ztz_inv = ztz
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Evaluation("singular instrument cross-product".into()))?;
        let a = ztx.transpose() * &ztz_inv;
        let xpx = &a * &ztx;
        let xpx_inv = xpx
            .try_inverse()
            .ok_or_else(|| Error::Evaluation("singular 2SLS cross-product".into()))?;
        let proj = DMatrix::<f64>::identity(l, l) - &ztx * xpx_inv * a;
        let n = rows as f64;
        let gbar = &proj * ztd / n;
        let jacobian = derivatives.then(|| &proj * ztdj / n);
        if gbar.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("non-finite GMM moments".into()));
        }
        Ok(Stacked { gbar, jacobian })
    }

    /// Batch moment vector `Z' xi / N`.
    pub fn moments(&self, theta: &DVector<f64>, batch: &Batch) -> Result<DVector<f64>> {
        Ok(self.stack(theta, batch, false)?.gbar)
    }
}

impl EstimationModel for RcLogitModel {
    fn name(&self) -> &str {
        "rc_logit"
    }

    fn dim(&self) -> usize {
        self.data.nonlinear.len()
    }

    fn units(&self) -> &UnitStructure {
        &self.units
    }

    fn objective(&self, theta: &DVector<f64>, batch: &Batch) -> Result<f64> {
        Ok(0.5 * self.stack(theta, batch, false)?.gbar.norm_squared())
    }

    fn gradient(&self, theta: &DVector<f64>, batch: &Batch) -> Result<DVector<f64>> {
        Ok(self.evaluate(theta, batch, false)?.gradient)
    }

    /// Gauss-Newton `J'J`.
    fn hessian(&self, theta: &DVector<f64>, batch: &Batch) -> Result<DMatrix<f64>> {
        Ok(self.evaluate(theta, batch, true)?.hessian.expect("requested"))
    }

    fn evaluate(&self, theta: &DVector<f64>, batch: &Batch, hessian: bool) -> Result<Evaluation> {
        let st = self.stack(theta, batch, true)?;
        let jac = st.jacobian.expect("derivatives requested");
        Ok(Evaluation {
            value: 0.5 * st.gbar.norm_squared(),
            gradient: jac.tr_mul(&st.gbar),
            hessian: hessian.then(|| jac.tr_mul(&jac)),
        })
    }

    fn parameter_names(&self) -> Vec<String> {
        (0..self.dim()).map(|l| format!("sigma{l}")).collect()
    }

    fn default_start(&self) -> DVector<f64> {
        DVector::from_element(self.dim(), 1.0)
    }
}
