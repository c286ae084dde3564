//! Replication fan-out.
//!
//! Replication `r` draws its data from `(seed, DATA, r)` and every arm's
//! randomness from `(seed, REPLICATION, r, ...)`, so the table does not depend
//! on the number of workers or on scheduling. Outcomes are collected in
//! replication order before aggregation.

use std::time::Instant;

use rayon::prelude::*;

use super::config::{Arm, ExperimentConfig};
use super::table::{ArmOutcome, ResultRow, ResultTable, RowKey};
use crate::baselines::{bootstrap, classical_estimate, ClassicalResult, NewtonOptions};
use crate::chain::{run_chain, run_twin_chains, ChainConfig};
use crate::error::{Error, Result};
use crate::inference::InferenceReport;
use crate::model::{full_batch, EstimationModel};
use crate::resampling::ResamplingPlan;
use crate::rng;

/// Largest share of failed replications tolerated in any row.
pub const MAX_FAILURE_RATE: f64 = 0.05;

const CHAIN_STREAM: u64 = 0;
const BOOTSTRAP_STREAM: u64 = 1;
const CLASSICAL_STREAM: u64 = 2;

fn replication_key(seed: u64, r: usize, stream: u64) -> u64 {
    rng::stream_key(seed, &[rng::purpose::REPLICATION, r as u64, stream])
}

/// Grid points in table order: by `S`, then arm, then `m`, then `gamma`.
pub fn row_keys(config: &ExperimentConfig) -> Vec<RowKey> {
    let mut keys = Vec::new();
    for &s in &config.grid.s {
        for &arm in &config.arms {
            match arm {
                Arm::Classical => keys.push(RowKey {
                    arm,
                    m: config.model.units(),
                    gamma: None,
                    s,
                }),
                Arm::Bootstrap => {
                    keys.extend(config.grid.m.iter().map(|&m| RowKey { arm, m, gamma: None, s }))
                }
                _ => {
                    for &m in &config.grid.m {
                        keys.extend(config.grid.gamma.iter().map(|&g| RowKey {
                            arm,
                            m,
                            gamma: Some(g),
                            s,
                        }));
                    }
                }
            }
        }
    }
    keys
}

type Outcome = std::result::Result<ArmOutcome, String>;

struct Fit {
    result: ClassicalResult,
    secs: f64,
}

fn classical(model: &dyn EstimationModel, seed: u64, r: usize) -> Result<Fit> {
    let batch = full_batch(model, replication_key(seed, r, CLASSICAL_STREAM));
    let started = Instant::now();
    let result = classical_estimate(model, &batch, &model.default_start(), NewtonOptions::default())?;
    Ok(Fit {
        result,
        secs: started.elapsed().as_secs_f64(),
    })
}

fn converged(fit: &Result<Fit>) -> Result<&Fit> {
    match fit {
        Ok(f) if f.result.converged => Ok(f),
        Ok(f) => Err(Error::Estimation(format!(
            "classical estimate did not converge (gradient norm {:e})",
            f.result.gradient_norm
        ))),
        Err(e) => Err(Error::Estimation(e.to_string())),
    }
}

fn covers(ci: (f64, f64), truth: f64) -> bool {
    ci.0 <= truth && truth <= ci.1
}

fn run_arm(
    config: &ExperimentConfig,
    model: &dyn EstimationModel,
    key: &RowKey,
    r: usize,
    fit: &mut Option<Result<Fit>>,
) -> Result<ArmOutcome> {
    let j = config.model.coordinate();
    let truth = config.model.truth()[j];
    if let Some(mode) = key.arm.conditioning() {
        let gamma = key.gamma.expect("chain rows carry gamma");
        let plan = ResamplingPlan::for_structure(model.units(), key.m);
        let mut chain = ChainConfig::new(gamma, config.draws, replication_key(config.seed, r, CHAIN_STREAM))
            .with_conditioning(mode);
        if let Some(burn) = config.burn {
            chain = chain.with_burn(burn);
        }
        let names = model.parameter_names();
        let started = Instant::now();
        let report = if model.as_simulation().is_some() {
            let (a, b) = run_twin_chains(model, &plan, &chain)?;
            InferenceReport::from_twin(&a, &b, names, config.alpha)?
        } else {
            InferenceReport::from_chain(&run_chain(model, &plan, &chain)?, names, config.alpha)?
        };
        return Ok(ArmOutcome {
            estimate: report.theta_bar[j],
            reject: Some(!covers(report.ci[j], truth)),
            secs: started.elapsed().as_secs_f64(),
        });
    }
    let fit = converged(fit.get_or_insert_with(|| classical(model, config.seed, r)))?;
    match key.arm {
        Arm::Classical => Ok(ArmOutcome {
            estimate: fit.result.theta_hat[j],
            reject: None,
            secs: fit.secs,
        }),
        Arm::Bootstrap => {
            let plan = ResamplingPlan::for_structure(model.units(), key.m);
            let boot = bootstrap(
                model,
                &plan,
                &fit.result.theta(),
                config.bootstrap_draws,
                replication_key(config.seed, r, BOOTSTRAP_STREAM),
                config.alpha,
                NewtonOptions::default(),
            )?;
            Ok(ArmOutcome {
                estimate: fit.result.theta_hat[j],
                reject: Some(!covers(boot.ci[j], truth)),
                secs: fit.secs + boot.elapsed_secs,
            })
        }
        _ => unreachable!("chain arms handled above"),
    }
}

/// Every arm's outcome on replication `r`, aligned with `keys`.
pub fn run_replication(config: &ExperimentConfig, keys: &[RowKey], r: usize) -> Vec<Outcome> {
    let data = match config.model.generate(config.seed, r as u64) {
        Ok(d) => d,
        Err(e) => {
            log::warn!("replication {r}: data generation failed: {e}");
            return keys.iter().map(|_| Err(format!("data generation: {e}"))).collect();
        }
    };
    let mut out = Vec::with_capacity(keys.len());
    let mut current: Option<(usize, Result<Box<dyn EstimationModel>>)> = None;
    let mut fit = None;
    for key in keys {
        if current.as_ref().map(|(s, _)| *s) != Some(key.s) {
            current = Some((key.s, config.model.build(&data, key.s)));
            fit = None;
        }
        let outcome = match &current.as_ref().expect("model slot filled").1 {
            Ok(model) => run_arm(config, model.as_ref(), key, r, &mut fit).map_err(|e| e.to_string()),
            Err(e) => Err(format!("model construction: {e}")),
        };
        if let Err(reason) = &outcome {
            log::warn!(
                "arm {} (m {}, gamma {:?}, S {}) replication {r} failed: {reason}",
                key.arm.label(),
                key.m,
                key.gamma,
                key.s
            );
        }
        out.push(outcome);
    }
    out
}

/// Runs every replication and aggregates, without judging the failure rate.
pub fn run_table(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    let keys = row_keys(config);
    let workers = config
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    let outcomes: Vec<Vec<Outcome>> = pool.install(|| {
        (0..config.replications)
            .into_par_iter()
            .map(|r| run_replication(config, &keys, r))
            .collect()
    });
    let rows = keys
        .iter()
        .enumerate()
        .map(|(i, key)| ResultRow::from_outcomes(*key, outcomes.iter().map(|o| &o[i])))
        .collect();
    let j = config.model.coordinate();
    Ok(ResultTable {
        model: config.model.label().to_string(),
        coordinate: config.model.coordinate_name(),
        truth: config.model.truth()[j],
        replications: config.replications,
        rows,
    })
}

/// Error naming every row whose failure share exceeds [`MAX_FAILURE_RATE`].
pub fn check_failures(table: &ResultTable) -> Result<()> {
    let failing = table.failing_rows(MAX_FAILURE_RATE);
    if failing.is_empty() {
        return Ok(());
    }
    let names: Vec<String> = failing
        .iter()
        .map(|r| {
            format!(
                "{} (m {}, gamma {:?}, S {}): {} of {}",
                r.arm.label(),
                r.m,
                r.gamma,
                r.s,
                r.failures,
                r.failures + r.replications
            )
        })
        .collect();
    Err(Error::Estimation(format!(
        "too many failed replications: {}",
        names.join("; ")
    )))
}

/// [`run_table`] followed by [`check_failures`].
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultTable> {
    let table = run_table(config)?;
    check_failures(&table)?;
    Ok(table)
}
