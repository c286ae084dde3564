//! The resampled optimization chain.
//!
//! Each iteration draws a fresh batch, optionally redraws simulation shocks,
//! and applies `theta <- theta - gamma C^{-1} G` with `C` the batch Hessian,
//! a quasi-Newton fit, or the identity.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conditioning::{
    self, SecantWindow, SpdMatrix, DEFAULT_EIGEN_FLOOR, DEFAULT_QN_RIDGE,
};
use crate::error::{Error, Result};
use crate::model::{Batch, EstimationModel, ShockKey};
use crate::resampling::{IndexMultiset, ResamplingPlan};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningMode {
    Newton,
    QuasiNewton,
    GradientDescent,
}

impl ConditioningMode {
    pub fn label(self) -> &'static str {
        match self {
            ConditioningMode::Newton => "newton",
            ConditioningMode::QuasiNewton => "quasi_newton",
            ConditioningMode::GradientDescent => "gradient_descent",
        }
    }
}

/// `burn` defaults to `ceil(5 / gamma)`, which shrinks the start's influence by `e^-5`.
pub fn default_burn(gamma: f64) -> usize {
    (5.0 / gamma).ceil() as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub gamma: f64,
    /// Retained draws `B`.
    pub draws: usize,
    pub burn: Option<usize>,
    pub seed: u64,
    pub conditioning: ConditioningMode,
    /// Starting value; the model's default start when absent.
    pub theta0: Option<Vec<f64>>,
    pub eigen_floor: f64,
    pub qn_ridge: f64,
}

impl ChainConfig {
    pub fn new(gamma: f64, draws: usize, seed: u64) -> Self {
        ChainConfig {
            gamma,
            draws,
            burn: None,
            seed,
            conditioning: ConditioningMode::Newton,
            theta0: None,
            eigen_floor: DEFAULT_EIGEN_FLOOR,
            qn_ridge: DEFAULT_QN_RIDGE,
        }
    }

    pub fn with_burn(mut self, burn: usize) -> Self {
        self.burn = Some(burn);
        self
    }

    pub fn with_conditioning(mut self, mode: ConditioningMode) -> Self {
        self.conditioning = mode;
        self
    }

    pub fn with_theta0(mut self, theta0: Vec<f64>) -> Self {
        self.theta0 = Some(theta0);
        self
    }

    pub fn burn(&self) -> usize {
        self.burn.unwrap_or_else(|| default_burn(self.gamma))
    }

    pub fn validate(&self, model: &dyn EstimationModel, plan: &ResamplingPlan) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.draws == 0 {
            return Err(Error::Config("the chain needs at least one retained draw".into()));
        }
        if let Some(t) = &self.theta0 {
            if t.len() != model.dim() {
                return Err(Error::dimension("theta0", model.dim(), t.len()));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("theta0 has non-finite entries".into()));
            }
        }
        if !(self.eigen_floor > 0.0) || self.qn_ridge < 0.0 {
            return Err(Error::Config("eigen floor must be positive and ridge non-negative".into()));
        }
        plan.validate(model.units())
    }

    fn start(&self, model: &dyn EstimationModel) -> DVector<f64> {
        match &self.theta0 {
            Some(t) => DVector::from_column_slice(t),
            None => model.default_start(),
        }
    }
}

/// Chain-local conditioning state.
#[derive(Clone, Debug)]
pub struct Conditioner {
    mode: ConditioningMode,
    eps: f64,
    ridge: f64,
    window: Option<SecantWindow>,
    probe_seed: u64,
    probes: u64,
}

impl Conditioner {
    pub fn new(mode: ConditioningMode, dim: usize, eps: f64, ridge: f64) -> Self {
        Conditioner {
            mode,
            eps,
            ridge,
            window: (mode == ConditioningMode::QuasiNewton).then(|| SecantWindow::for_dim(dim)),
            probe_seed: 0,
            probes: 0,
        }
    }

    /// Seeds the probe directions of quasi-Newton mode.
    pub fn with_probe_seed(mut self, seed: u64) -> Self {
        self.probe_seed = seed;
        self
    }

    pub fn from_config(config: &ChainConfig, dim: usize) -> Self {
        Self::new(config.conditioning, dim, config.eigen_floor, config.qn_ridge).with_probe_seed(config.seed)
    }

    /// Next probe direction: uniform on the unit sphere.
    fn probe_direction(&mut self, dim: usize) -> DVector<f64> {
        self.probes += 1;
        let mut r = rng::stream(self.probe_seed, &[rng::purpose::PROBE, self.probes]);
        loop {
            let u = DVector::from_fn(dim, |_, _| r.sample::<f64, _>(StandardNormal));
            let norm = u.norm();
            if norm > 0.0 {
                return u / norm;
            }
        }
    }

    pub fn mode(&self) -> ConditioningMode {
        self.mode
    }

    /// Secant pairs currently held (zero outside quasi-Newton mode).
    pub fn memory_len(&self) -> usize {
        self.window.as_ref().map_or(0, SecantWindow::len)
    }
}

fn ensure_finite_vector(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Evaluation(format!("non-finite {what}")))
    }
}

/// Relative length of quasi-Newton probes: `h = PROBE_SCALE * (1 + |theta|)`.
pub const PROBE_SCALE: f64 = 1e-4;

/// Adds one secant pair `(h u, (G_b(theta + h u) - G_b(theta - h u)) / 2)`
/// measured on the current batch.
fn probe(
    model: &dyn EstimationModel,
    batch: &Batch,
    theta: &DVector<f64>,
    cond: &mut Conditioner,
) -> Result<()> {
    let h = PROBE_SCALE * (1.0 + theta.norm());
    let s = cond.probe_direction(theta.len()) * h;
    let up = model.gradient(&(theta + &s), batch)?;
    let down = model.gradient(&(theta - &s), batch)?;
    let y = (up - down) * 0.5;
    ensure_finite_vector(&y, "probe gradient")?;
    cond.window.as_mut().expect("quasi-Newton window").push(s, y);
    Ok(())
}

/// One damped update on `batch`.
///
/// Quasi-Newton mode never evaluates a Hessian. Each iteration adds a
/// central-difference secant along a random direction, taken on the same
/// batch as the gradient, and conditions with the symmetric least-squares
/// fit to the window. The first iteration probes `d` directions so the fit
/// is identified from the start.
pub fn step(
    model: &dyn EstimationModel,
    batch: &Batch,
    theta: &DVector<f64>,
    gamma: f64,
    cond: &mut Conditioner,
) -> Result<DVector<f64>> {
    if batch.sample.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let newton = cond.mode == ConditioningMode::Newton;
    let eval = model.evaluate(theta, batch, newton)?;
    ensure_finite_vector(&eval.gradient, "gradient")?;
    let matrix: Option<SpdMatrix> = match cond.mode {
        ConditioningMode::Newton => {
            let h = eval.hessian.as_ref().expect("Hessian requested");
            if h.iter().any(|x| !x.is_finite()) {
                return Err(Error::Evaluation("non-finite Hessian".into()));
            }
            Some(conditioning::spd_repair(h, cond.eps)?)
        }
        ConditioningMode::QuasiNewton => {
            let probes = if cond.memory_len() == 0 { theta.len() } else { 1 };
            for _ in 0..probes {
                probe(model, batch, theta, cond)?;
            }
            let window = cond.window.as_ref().expect("quasi-Newton window");
            window.estimate(cond.eps, cond.ridge)?
        }
        ConditioningMode::GradientDescent => None,
    };
    let direction = match matrix {
        Some(c) => conditioning::solve_direction(&c, &eval.gradient)?,
        None => eval.gradient.clone(),
    };
    let next = theta - direction * gamma;
    ensure_finite_vector(&next, "iterate")?;
    Ok(next)
}

/// Provenance of a draw matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawMeta {
    pub model: String,
    pub gamma: f64,
    /// Batch size in resampling units.
    pub m: usize,
    /// Resampling units in the full sample.
    pub n: usize,
    pub seed: u64,
    pub chain: u64,
    pub burn: usize,
    pub conditioning: ConditioningMode,
    pub elapsed_secs: f64,
}

/// Post-burn-in iterates in iteration order, one row per draw.
#[derive(Clone, Debug, PartialEq)]
pub struct DrawMatrix {
    pub draws: DMatrix<f64>,
    pub meta: DrawMeta,
}

impl DrawMatrix {
    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.draws.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.column(j).iter().copied().collect()
    }
}

/// One chain iteration as seen by an observer: `theta` is the iterate after
/// `b` updates and `batch_seed` keys the batch that produced it.
#[derive(Clone, Debug, Serialize)]
pub struct IterationRecord<'a> {
    pub b: usize,
    pub theta: &'a [f64],
    pub batch_seed: u64,
}

/// Writes one JSON line per iteration.
pub struct JsonlDump<W: Write> {
    out: W,
}

impl<W: Write> JsonlDump<W> {
    pub fn new(out: W) -> Self {
        JsonlDump { out }
    }

    pub fn record(&mut self, rec: &IterationRecord<'_>) -> Result<()> {
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Key of the batch drawn at iteration `b` (1-based); shared by every chain
/// with the same seed.
pub fn batch_key(seed: u64, b: usize) -> u64 {
    rng::stream_key(seed, &[rng::purpose::RESAMPLE, b as u64])
}

/// Draws the batch for iteration `b`, with fresh shocks for simulation models.
pub fn draw_batch(
    model: &dyn EstimationModel,
    plan: &ResamplingPlan,
    seed: u64,
    chain: u64,
    b: usize,
) -> Result<Batch> {
    let sample: IndexMultiset = plan.draw(model.units(), &mut rng::from_key(batch_key(seed, b)))?;
    Ok(match model.as_simulation() {
        Some(sim) => {
            let shocks = sim.resimulate(
                ShockKey {
                    seed,
                    chain,
                    iteration: b as u64,
                },
                &sample,
            );
            Batch::with_shocks(sample, shocks)
        }
        None => Batch::new(sample),
    })
}

pub fn run_chain(
    model: &dyn EstimationModel,
    plan: &ResamplingPlan,
    config: &ChainConfig,
) -> Result<DrawMatrix> {
    run_chain_observed(model, plan, config, 0, |_| Ok(()))
}

/// Runs chain number `chain`; `observe` sees every iteration, burn-in included.
pub fn run_chain_observed<F>(
    model: &dyn EstimationModel,
    plan: &ResamplingPlan,
    config: &ChainConfig,
    chain: u64,
    mut observe: F,
) -> Result<DrawMatrix>
where
    F: FnMut(&IterationRecord<'_>) -> Result<()>,
{
    config.validate(model, plan)?;
    let started = Instant::now();
    let d = model.dim();
    let burn = config.burn();
    let total = burn + config.draws;
    let mut theta = config.start(model);
    let mut cond = Conditioner::from_config(config, d);
    let mut draws = DMatrix::zeros(config.draws, d);

    for b in 1..=total {
        let next = draw_batch(model, plan, config.seed, chain, b)
            .and_then(|batch| step(model, &batch, &theta, config.gamma, &mut cond))
            .map_err(|e| Error::ChainAbort {
                iteration: b,
                reason: e.to_string(),
                last_finite: Some(theta.iter().copied().collect()),
            })?;
        theta = next;
        observe(&IterationRecord {
            b,
            theta: theta.as_slice(),
            batch_seed: batch_key(config.seed, b),
        })?;
        if b > burn {
            draws.set_row(b - burn - 1, &theta.transpose());
        }
    }

    Ok(DrawMatrix {
        draws,
        meta: DrawMeta {
            model: model.name().to_string(),
            gamma: config.gamma,
            m: plan.batch_units(model.units()),
            n: model.units().unit_count(),
            seed: config.seed,
            chain,
            burn,
            conditioning: config.conditioning,
            elapsed_secs: started.elapsed().as_secs_f64(),
        },
    })
}

/// Two chains sharing the batch sequence with independent shock streams.
pub fn run_twin_chains(
    model: &dyn EstimationModel,
    plan: &ResamplingPlan,
    config: &ChainConfig,
) -> Result<(DrawMatrix, DrawMatrix)> {
    if model.as_simulation().is_none() {
        return Err(Error::Config(format!(
            "twin chains need a simulation model, {} is not one",
            model.name()
        )));
    }
    let a = run_chain_observed(model, plan, config, 0, |_| Ok(()))?;
    let b = run_chain_observed(model, plan, config, 1, |_| Ok(()))?;
    Ok((a, b))
}
