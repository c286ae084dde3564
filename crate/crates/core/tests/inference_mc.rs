//! Monte Carlo checks of the chain's inference on the mean model, where the
//! truth is known: data are N(0, I), so every coordinate's target is 0.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rnr_core::{rng, run_chain, ChainConfig, InferenceReport, MeanModel, ResamplingPlan};

fn gaussian_model(n: usize, d: usize, seed: u64, r: u64) -> MeanModel {
    let mut g = rng::stream(seed, &[rng::purpose::DATA, r]);
    MeanModel::new(DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut g)), 1.0).unwrap()
}

fn report(model: &MeanModel, chain_seed: u64) -> InferenceReport {
    let names = (0..model.data().ncols()).map(|j| format!("mu{j}")).collect();
    let plan = ResamplingPlan::Iid { m: 500 };
    let draws = run_chain(model, &plan, &ChainConfig::new(0.1, 2000, chain_seed)).unwrap();
    InferenceReport::from_chain(&draws, names, 0.05).unwrap()
}

#[test]
fn quantile_interval_covers_at_the_nominal_rate() {
    let reps = 1000;
    let covered = (0..reps)
        .filter(|&r| {
            let model = gaussian_model(500, 1, 21, r);
            let (lo, hi) = report(&model, 1_000 + r).ci[0];
            lo <= 0.0 && 0.0 <= hi
        })
        .count();
    let coverage = covered as f64 / reps as f64;
    assert!((0.92..=0.98).contains(&coverage), "coverage {coverage}");
}

#[test]
fn wald_statistic_under_the_null_has_chi_square_mean() {
    let reps = 500;
    let q = 2;
    let restrictions = DMatrix::identity(q, q);
    let zero = DVector::zeros(q);
    let mean = (0..reps)
        .map(|r| {
            let model = gaussian_model(500, q, 22, r);
            let wald = report(&model, 5_000 + r)
                .with_wald(&restrictions, &zero)
                .unwrap()
                .wald
                .unwrap();
            assert_eq!(wald.dof, q);
            wald.statistic
        })
        .sum::<f64>()
        / reps as f64;
    assert!((mean - q as f64).abs() <= 0.1 * q as f64, "mean statistic {mean}");
}
