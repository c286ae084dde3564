//! Estimates, variances, intervals and tests from chain draws.

use std::io;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::chain::{ConditioningMode, DrawMatrix};
use crate::error::{Error, Result};

/// `gamma^2 / (1 - (1 - gamma)^2)`, i.e. `gamma / (2 - gamma)`.
pub fn phi(gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Domain(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    Ok(gamma / (2.0 - gamma))
}

pub fn mean_estimate(draws: &DMatrix<f64>) -> Result<DVector<f64>> {
    if draws.nrows() == 0 {
        return Err(Error::Inference("no draws".into()));
    }
    Ok(draws.row_mean().transpose())
}

/// Covariance of the rows with divisor `B`.
pub fn draw_covariance(draws: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let centered = centered(draws)?;
    Ok(centered.tr_mul(&centered) / draws.nrows() as f64)
}

fn centered(draws: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mean = mean_estimate(draws)?;
    let mut c = draws.clone();
    for mut row in c.row_iter_mut() {
        row -= mean.transpose();
    }
    Ok(c)
}

/// `(m / phi) * cov(draws)`.
pub fn scaled_variance(draws: &DMatrix<f64>, m: usize, gamma: f64) -> Result<DMatrix<f64>> {
    if draws.nrows() < 2 {
        return Err(Error::Inference("variance needs at least two draws".into()));
    }
    Ok(draw_covariance(draws)? * (m as f64 / phi(gamma)?))
}

pub fn variance_estimate(draws: &DrawMatrix) -> Result<DMatrix<f64>> {
    scaled_variance(&draws.draws, draws.meta.m, draws.meta.gamma)
}

/// Linear interpolation between order statistics of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// `center + (q_{alpha/2}, q_{1-alpha/2})` of `scale * deviations`.
fn interval_from_deviations(mut deviations: Vec<f64>, center: f64, scale: f64, alpha: f64) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    if deviations.len() < 2 {
        return Err(Error::Inference("interval needs at least two draws".into()));
    }
    if deviations.iter().any(|v| !v.is_finite()) {
        return Err(Error::Inference("non-finite draws".into()));
    }
    deviations.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&deviations, alpha / 2.0);
    let hi = quantile_sorted(&deviations, 1.0 - alpha / 2.0);
    Ok((center + scale * lo, center + scale * hi))
}

/// Quantile interval for coordinate `j` from the draws' deviations about
/// their mean, scaled by `sqrt(m / (n phi))`.
pub fn quantile_ci(draws: &DrawMatrix, n: usize, alpha: f64, j: usize) -> Result<(f64, f64)> {
    if j >= draws.dim() {
        return Err(Error::dimension("quantile_ci coordinate", draws.dim(), j));
    }
    let col = draws.column(j);
    let center = col.iter().sum::<f64>() / col.len() as f64;
    let scale = (draws.meta.m as f64 / (n as f64 * phi(draws.meta.gamma)?)).sqrt();
    interval_from_deviations(col.iter().map(|v| v - center).collect(), center, scale, alpha)
}

/// `estimate +- z_{1-alpha/2} se`.
pub fn normal_ci(estimate: f64, se: f64, alpha: f64) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    let z = standard_normal_quantile(1.0 - alpha / 2.0);
    Ok((estimate - z * se, estimate + z * se))
}

pub fn standard_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub statistic: f64,
    pub dof: usize,
}

/// `n (R theta - r)' (R V R')^{-1} (R theta - r)` with `q` degrees of freedom.
pub fn wald(
    theta_bar: &DVector<f64>,
    v: &DMatrix<f64>,
    n: usize,
    restrictions: &DMatrix<f64>,
    r: &DVector<f64>,
) -> Result<WaldTest> {
    let (q, d) = restrictions.shape();
    if d != theta_bar.len() || v.shape() != (d, d) {
        return Err(Error::dimension("wald restriction columns", theta_bar.len(), d));
    }
    if r.len() != q {
        return Err(Error::dimension("wald right-hand side", q, r.len()));
    }
    let gap = restrictions * theta_bar - r;
    let middle = restrictions * v * restrictions.transpose();
    let chol = middle
        .cholesky()
        .ok_or_else(|| Error::Inference("R V R' is singular".into()))?;
    let statistic = n as f64 * gap.dot(&chol.solve(&gap));
    Ok(WaldTest { statistic, dof: q })
}

fn check_twins(a: &DrawMatrix, b: &DrawMatrix) -> Result<()> {
    let (ma, mb) = (&a.meta, &b.meta);
    if ma.m != mb.m || ma.gamma != mb.gamma || a.len() != b.len() || a.dim() != b.dim() || ma.seed != mb.seed
    {
        return Err(Error::Config("twin chains differ in (m, gamma, B, d, seed)".into()));
    }
    if a.len() < 2 {
        return Err(Error::Inference("variance needs at least two draws".into()));
    }
    Ok(())
}

/// `(m / phi)` times the symmetrized cross-covariance of the two chains.
/// Shock noise is independent across chains and drops out in expectation,
/// leaving the shared data-resampling component.
pub fn twin_chain_variance(a: &DrawMatrix, b: &DrawMatrix) -> Result<DMatrix<f64>> {
    check_twins(a, b)?;
    let ca = centered(&a.draws)?;
    let cb = centered(&b.draws)?;
    let cross = ca.tr_mul(&cb) / a.len() as f64;
    let sym = (&cross + cross.transpose()) * 0.5;
    Ok(sym * (a.meta.m as f64 / phi(a.meta.gamma)?))
}

/// Projection onto the positive semidefinite cone by clipping eigenvalues at 0.
pub fn psd_projection(v: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (v + v.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub model: String,
    pub m: usize,
    pub n: usize,
    pub gamma: f64,
    pub draws: usize,
    pub burn: usize,
    pub conditioning: ConditioningMode,
    pub twin: bool,
    pub alpha: f64,
    pub elapsed_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub names: Vec<String>,
    pub theta_bar: Vec<f64>,
    /// Row-major `d x d`.
    pub v: Vec<Vec<f64>>,
    pub se: Vec<f64>,
    pub ci: Vec<(f64, f64)>,
    /// Single-chain quantile interval, kept alongside the twin-scaled one.
    pub ci_single_chain: Option<Vec<(f64, f64)>>,
    pub wald: Option<WaldTest>,
    pub meta: ReportMeta,
}

fn rows(v: &DMatrix<f64>) -> Vec<Vec<f64>> {
    v.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn meta(draws: &DrawMatrix, alpha: f64, twin: bool, elapsed: f64) -> ReportMeta {
    ReportMeta {
        model: draws.meta.model.clone(),
        m: draws.meta.m,
        n: draws.meta.n,
        gamma: draws.meta.gamma,
        draws: draws.len(),
        burn: draws.meta.burn,
        conditioning: draws.meta.conditioning,
        twin,
        alpha,
        elapsed_secs: elapsed,
    }
}

impl InferenceReport {
    pub fn from_chain(draws: &DrawMatrix, names: Vec<String>, alpha: f64) -> Result<Self> {
        if names.len() != draws.dim() {
            return Err(Error::dimension("parameter names", draws.dim(), names.len()));
        }
        let n = draws.meta.n;
        let theta_bar = mean_estimate(&draws.draws)?;
        let v = variance_estimate(draws)?;
        let se = (0..draws.dim()).map(|j| (v[(j, j)] / n as f64).sqrt()).collect();
        let ci = (0..draws.dim())
            .map(|j| quantile_ci(draws, n, alpha, j))
            .collect::<Result<_>>()?;
        Ok(InferenceReport {
            names,
            theta_bar: theta_bar.iter().copied().collect(),
            v: rows(&v),
            se,
            ci,
            ci_single_chain: None,
            wald: None,
            meta: meta(draws, alpha, false, draws.meta.elapsed_secs),
        })
    }

    /// Twin-chain report: the point estimate averages both chain means, `V`
    /// is the PSD projection of the twin variance, and the interval rescales
    /// the pooled centered draws so their spread matches `V`.
    pub fn from_twin(a: &DrawMatrix, b: &DrawMatrix, names: Vec<String>, alpha: f64) -> Result<Self> {
        check_twins(a, b)?;
        if names.len() != a.dim() {
            return Err(Error::dimension("parameter names", a.dim(), names.len()));
        }
        let n = a.meta.n;
        let theta_bar = (mean_estimate(&a.draws)? + mean_estimate(&b.draws)?) * 0.5;
        let v = psd_projection(&twin_chain_variance(a, b)?);
        let va = variance_estimate(a)?;
        let vb = variance_estimate(b)?;
        let scale = (a.meta.m as f64 / (n as f64 * phi(a.meta.gamma)?)).sqrt();
        let mut se = Vec::with_capacity(a.dim());
        let mut ci = Vec::with_capacity(a.dim());
        let mut single = Vec::with_capacity(a.dim());
        for j in 0..a.dim() {
            se.push((v[(j, j)] / n as f64).sqrt());
            let pooled_var = 0.5 * (va[(j, j)] + vb[(j, j)]);
            let ratio = if pooled_var > 0.0 {
                (v[(j, j)] / pooled_var).sqrt()
            } else {
                0.0
            };
            let mut dev = Vec::with_capacity(2 * a.len());
            for d in [a, b] {
                let col = d.column(j);
                let c = col.iter().sum::<f64>() / col.len() as f64;
                dev.extend(col.iter().map(|x| x - c));
            }
            ci.push(interval_from_deviations(dev, theta_bar[j], scale * ratio, alpha)?);
            single.push(quantile_ci(a, n, alpha, j)?);
        }
        Ok(InferenceReport {
            names,
            theta_bar: theta_bar.iter().copied().collect(),
            v: rows(&v),
            se,
            ci,
            ci_single_chain: Some(single),
            wald: None,
            meta: meta(a, alpha, true, a.meta.elapsed_secs + b.meta.elapsed_secs),
        })
    }

    pub fn v_matrix(&self) -> DMatrix<f64> {
        let d = self.theta_bar.len();
        DMatrix::from_fn(d, d, |i, j| self.v[i][j])
    }

    /// Adds the Wald test of `R theta = r`.
    pub fn with_wald(mut self, restrictions: &DMatrix<f64>, r: &DVector<f64>) -> Result<Self> {
        let theta = DVector::from_column_slice(&self.theta_bar);
        self.wald = Some(wald(&theta, &self.v_matrix(), self.meta.n, restrictions, r)?);
        Ok(self)
    }

    /// One CSV row per coordinate: `name,estimate,se,ci_lo,ci_hi`.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["name", "estimate", "se", "ci_lo", "ci_hi"])?;
        for j in 0..self.names.len() {
            w.write_record([
                self.names[j].clone(),
                self.theta_bar[j].to_string(),
                self.se[j].to_string(),
                self.ci[j].0.to_string(),
                self.ci[j].1.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::DrawMeta;
    use crate::rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn wrap(draws: DMatrix<f64>, m: usize, n: usize, gamma: f64) -> DrawMatrix {
        DrawMatrix {
            draws,
            meta: DrawMeta {
                model: "test".into(),
                gamma,
                m,
                n,
                seed: 0,
                chain: 0,
                burn: 0,
                conditioning: ConditioningMode::Newton,
                elapsed_secs: 0.0,
            },
        }
    }

    fn normal_draws(rows: usize, cols: usize, sd: f64, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, &[]);
        DMatrix::from_fn(rows, cols, |_, _| sd * r.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn phi_closed_form() {
        assert_eq!(phi(1.0).unwrap(), 1.0);
        assert_relative_eq!(phi(0.2).unwrap(), 1.0 / 9.0, epsilon = 1e-15);
        assert_relative_eq!(phi(0.1).unwrap(), 1.0 / 19.0, epsilon = 1e-15);
        for g in [0.05, 0.3, 0.77] {
            assert_relative_eq!(phi(g).unwrap(), g * g / (1.0 - (1.0 - g) * (1.0 - g)), epsilon = 1e-15);
        }
        for bad in [0.0, -0.1, 1.01, f64::NAN] {
            assert!(phi(bad).is_err());
        }
    }

    #[test]
    fn means_of_simple_draws() {
        let c = DMatrix::from_element(5, 2, 3.5);
        assert_eq!(mean_estimate(&c).unwrap(), DVector::from_element(2, 3.5));
        let two = DMatrix::from_column_slice(2, 1, &[0.0, 2.0]);
        assert_eq!(mean_estimate(&two).unwrap()[0], 1.0);
        assert!(mean_estimate(&DMatrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn constant_draws_have_zero_variance() {
        let v = variance_estimate(&wrap(DMatrix::from_element(10, 3, -1.0), 50, 100, 0.2)).unwrap();
        assert_eq!(v, DMatrix::zeros(3, 3));
    }

    #[test]
    fn variance_uses_divisor_b() {
        let d = DMatrix::from_column_slice(2, 1, &[0.0, 2.0]);
        let v = variance_estimate(&wrap(d, 1, 1, 1.0)).unwrap();
        assert_eq!(v[(0, 0)], 1.0);
    }

    #[test]
    fn type7_quantiles() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&x, 0.0), 1.0);
        assert_eq!(quantile_sorted(&x, 1.0), 4.0);
        assert_relative_eq!(quantile_sorted(&x, 0.5), 2.5);
        assert_relative_eq!(quantile_sorted(&x, 0.25), 1.75);
    }

    #[test]
    fn unit_scale_interval_is_draw_quantile_spread() {
        let d = DMatrix::from_column_slice(5, 1, &[-2.0, -1.0, 0.0, 1.0, 2.0]);
        let ci = quantile_ci(&wrap(d, 5, 5, 1.0), 5, 0.5, 0).unwrap();
        assert_eq!(ci, (-1.0, 1.0));
    }

    #[test]
    fn normal_chain_interval_half_width() {
        let (m, gamma) = (400, 0.2);
        let sd = (phi(gamma).unwrap() / m as f64).sqrt();
        let d = wrap(normal_draws(5000, 1, sd, 3), m, m, gamma);
        let (lo, hi) = quantile_ci(&d, m, 0.05, 0).unwrap();
        let half = 1.959964 / (m as f64).sqrt();
        assert!(((hi - lo) / 2.0 / half - 1.0).abs() < 0.05);
    }

    #[test]
    fn wald_special_cases() {
        let theta = DVector::from_vec(vec![1.0, 2.0]);
        let v = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let r = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let zero = wald(&theta, &v, 100, &r, &DVector::from_element(1, -1.0)).unwrap();
        assert_eq!(zero.statistic, 0.0);
        assert_eq!(zero.dof, 1);

        let e1 = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let w = wald(&theta, &v, 100, &e1, &DVector::from_element(1, 0.5)).unwrap();
        let t = (1.0 - 0.5) / (2.0f64 / 100.0).sqrt();
        assert_relative_eq!(w.statistic, t * t, epsilon = 1e-12);

        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        assert!(wald(&theta, &v, 100, &singular, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn wald_agrees_with_normal_interval_in_one_dimension() {
        let (theta, v, n) = (0.3, 4.0, 400);
        let se = (v / n as f64).sqrt();
        let (lo, hi) = normal_ci(theta, se, 0.05).unwrap();
        let crit = standard_normal_quantile(0.975).powi(2);
        for k in 0..200 {
            let r0 = lo - 0.1 + 0.8 * k as f64 / 200.0;
            let w = wald(
                &DVector::from_element(1, theta),
                &DMatrix::from_element(1, 1, v),
                n,
                &DMatrix::identity(1, 1),
                &DVector::from_element(1, r0),
            )
            .unwrap();
            if (r0 - lo).abs() > 1e-9 && (r0 - hi).abs() > 1e-9 {
                assert_eq!(w.statistic > crit, r0 < lo || r0 > hi, "r0 {r0}");
            }
        }
    }

    #[test]
    fn twin_of_identical_chains_is_single_variance() {
        let d = wrap(normal_draws(3000, 2, 0.1, 4), 50, 100, 0.2);
        let twin = twin_chain_variance(&d, &d).unwrap();
        let single = variance_estimate(&d).unwrap();
        assert!((twin - single).amax() < 1e-12);
    }

    #[test]
    fn independent_twins_have_small_cross_variance() {
        let a = wrap(normal_draws(5000, 2, 0.1, 5), 50, 100, 0.2);
        let b = wrap(normal_draws(5000, 2, 0.1, 6), 50, 100, 0.2);
        let twin = twin_chain_variance(&a, &b).unwrap();
        let single = variance_estimate(&a).unwrap();
        assert!(twin.norm() < 0.05 * single.norm());
    }

    #[test]
    fn mismatched_twins_rejected() {
        let a = wrap(normal_draws(10, 1, 1.0, 5), 50, 100, 0.2);
        let b = wrap(normal_draws(10, 1, 1.0, 6), 60, 100, 0.2);
        assert!(twin_chain_variance(&a, &b).is_err());
    }

    #[test]
    fn psd_projection_clips_negative_directions() {
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let p = psd_projection(&v);
        assert_relative_eq!(p[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(p[(1, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn report_invariants_and_csv() {
        let d = wrap(normal_draws(2000, 2, 0.05, 7), 100, 400, 0.2);
        let report = InferenceReport::from_chain(&d, vec!["a".into(), "b".into()], 0.05).unwrap();
        for j in 0..2 {
            assert_relative_eq!(report.se[j], (report.v[j][j] / 400.0).sqrt());
            assert!(report.ci[j].0 <= report.ci[j].1);
        }
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("name,estimate,se,ci_lo,ci_hi\na,"));
        assert_eq!(text.lines().count(), 3);
        let json = serde_json::to_string(&report).unwrap();
        let back: InferenceReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn twin_report_averages_chain_means() {
        let a = wrap(normal_draws(1000, 1, 0.05, 8), 100, 400, 0.2);
        let b = wrap(normal_draws(1000, 1, 0.05, 8).add_scalar(0.2), 100, 400, 0.2);
        let report = InferenceReport::from_twin(&a, &b, vec!["x".into()], 0.05).unwrap();
        let expect = 0.5 * (a.draws.mean() + b.draws.mean());
        assert_relative_eq!(report.theta_bar[0], expect, epsilon = 1e-14);
        // identical up to a shift: the twin variance equals the single-chain one
        assert_relative_eq!(report.v[0][0], variance_estimate(&a).unwrap()[(0, 0)], max_relative = 1e-10);
        assert!(report.meta.twin);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn scale_equivariance(seed in 0u64..1000, c in -5.0f64..5.0) {
            prop_assume!(c.abs() > 1e-3);
            let base = normal_draws(200, 2, 0.3, seed);
            let d = wrap(base.clone(), 40, 100, 0.3);
            let s = wrap(base * c, 40, 100, 0.3);
            let v = variance_estimate(&d).unwrap();
            let vs = variance_estimate(&s).unwrap();
            prop_assert!((vs - v * (c * c)).amax() < 1e-10);
            for j in 0..2 {
                let (lo, hi) = quantile_ci(&d, 100, 0.1, j).unwrap();
                let (slo, shi) = quantile_ci(&s, 100, 0.1, j).unwrap();
                prop_assert!(((shi - slo) - c.abs() * (hi - lo)).abs() < 1e-10);
            }
        }

        #[test]
        fn permutation_invariance(seed in 0u64..1000, shift in 1usize..199) {
            let base = normal_draws(200, 2, 0.3, seed);
            let perm = DMatrix::from_fn(200, 2, |i, j| base[((i * 7 + shift) % 200, j)]);
            let a = wrap(base, 40, 100, 0.3);
            let b = wrap(perm, 40, 100, 0.3);
            prop_assert!((mean_estimate(&a.draws).unwrap() - mean_estimate(&b.draws).unwrap()).amax() < 1e-14);
            prop_assert!((variance_estimate(&a).unwrap() - variance_estimate(&b).unwrap()).amax() < 1e-12);
            for j in 0..2 {
                let (l1, h1) = quantile_ci(&a, 100, 0.05, j).unwrap();
                let (l2, h2) = quantile_ci(&b, 100, 0.05, j).unwrap();
                prop_assert!((l1 - l2).abs() < 1e-12 && (h1 - h2).abs() < 1e-12);
            }
        }
    }
}
